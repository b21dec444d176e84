//! Sphere-aware spatiotemporal attention masks over a latent token grid.
//!
//! Token `q` may attend to token `k` iff the rotation-compensated great-circle
//! distance between their patch centers is at most `tau`. The allowed set is
//! stored in compressed-row form: for every query, the sorted list of keys.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use crate::sphere::{
    haversine_distance, rotate_point, rotation_matrix, temporal_distance, erp_to_sphere,
    ErpGrid, EulerAngles, SphericalPoint,
};

pub const SPAM_MAGIC: &[u8; 4] = b"SPAM";
pub const SPAM_VERSION: u16 = 1;

/// Additive logit bias for a disallowed key. Finite, so a fully masked row
/// degrades to uniform attention instead of NaN.
pub const MASKED_LOGIT: f64 = -1e9;

/// `frames x rows x cols` lattice of latent patches cut from an ERP source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    frames: usize,
    rows: usize,
    cols: usize,
    source: ErpGrid,
}

impl TokenGrid {
    pub fn new(frames: usize, rows: usize, cols: usize, source: ErpGrid) -> Result<Self> {
        if frames == 0 || rows == 0 || cols == 0 {
            return Err(domain(format!(
                "token grid dims must be >= 1, got {frames}x{rows}x{cols}"
            )));
        }
        if source.width() % cols != 0 || source.height() % rows != 0 {
            return Err(domain(format!(
                "token grid {rows}x{cols} does not tile source {}x{}",
                source.height(),
                source.width()
            )));
        }
        if frames.checked_mul(rows * cols).map_or(true, |n| n > u32::MAX as usize) {
            return Err(domain("token count does not fit in u32"));
        }
        Ok(Self { frames, rows, cols, source })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source(&self) -> ErpGrid {
        self.source
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    /// Total token count `N`.
    pub fn len(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        (frame * self.rows + row) * self.cols + col
    }

    /// `(frame, row, col)` of a flat token index.
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let per = self.tokens_per_frame();
        (index / per, (index % per) / self.cols, index % self.cols)
    }
}

/// Frame index and sphere position of the center of token `index`.
pub fn token_center<T: Scalar>(grid: &TokenGrid, index: usize) -> Result<(usize, SphericalPoint<T>)> {
    if index >= grid.len() {
        return Err(Error::Index { index, len: grid.len() });
    }
    let (frame, row, col) = grid.coords(index);
    let half = T::lit(0.5);
    let patch_w = T::from_usize_lossy(grid.source.width() / grid.cols);
    let patch_h = T::from_usize_lossy(grid.source.height() / grid.rows);
    let x = (T::from_usize_lossy(col) + half) * patch_w;
    let y = (T::from_usize_lossy(row) + half) * patch_h;
    Ok((frame, erp_to_sphere(x, y, grid.source)?))
}

/// Immutable sparse boolean `n x n` mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereMask {
    n: usize,
    tau: f64,
    row_ptr: Vec<usize>,
    keys: Vec<u32>,
}

impl SphereMask {
    /// Builds a mask from `(query, key)` pairs sorted lexicographically
    /// without duplicates.
    pub fn from_sorted_pairs(n: usize, tau: f64, pairs: &[(u32, u32)]) -> Result<Self> {
        let mut row_ptr = vec![0usize; n + 1];
        let mut keys = Vec::with_capacity(pairs.len());
        let mut prev: Option<(u32, u32)> = None;
        for &(q, k) in pairs {
            if q as usize >= n || k as usize >= n {
                return Err(Error::Format(format!("pair ({q}, {k}) out of range for n = {n}")));
            }
            if prev.is_some_and(|p| p >= (q, k)) {
                return Err(Error::Format("mask pairs must be strictly sorted".into()));
            }
            prev = Some((q, k));
            row_ptr[q as usize + 1] += 1;
            keys.push(k);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, tau, row_ptr, keys })
    }

    fn from_rows(n: usize, tau: f64, rows: Vec<Vec<u32>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut keys = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for row in rows {
            keys.extend_from_slice(&row);
            row_ptr.push(keys.len());
        }
        Self { n, tau, row_ptr, keys }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of allowed pairs.
    pub fn pair_count(&self) -> usize {
        self.keys.len()
    }

    pub fn density(&self) -> f64 {
        self.keys.len() as f64 / (self.n as f64 * self.n as f64)
    }

    /// Allowed keys of query `q`, ascending.
    pub fn row(&self, q: usize) -> &[u32] {
        &self.keys[self.row_ptr[q]..self.row_ptr[q + 1]]
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        q < self.n && self.row(q).binary_search(&(k as u32)).is_ok()
    }

    /// All allowed pairs in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n).flat_map(move |q| self.row(q).iter().map(move |&k| (q as u32, k)))
    }

    pub fn is_reflexive(&self) -> bool {
        (0..self.n).all(|i| self.allows(i, i))
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs().all(|(q, k)| self.allows(k as usize, q as usize))
    }

    pub fn write_spam<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, SPAM_MAGIC, SPAM_VERSION)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        w.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.keys.len() * 8);
        for (q, k) in self.pairs() {
            buf.extend_from_slice(&q.to_le_bytes());
            buf.extend_from_slice(&k.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_spam<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, SPAM_MAGIC, SPAM_VERSION)?;
        let n = usize::try_from(binio::read_u64(r)?)
            .map_err(|_| Error::Format("mask size exceeds address space".into()))?;
        let tau = binio::read_f64(r)?;
        let count = binio::read_u64(r)?;
        if count > (n as u64).saturating_mul(n as u64) {
            return Err(Error::Format(format!("{count} pairs exceed n^2 for n = {n}")));
        }
        let mut pairs = Vec::with_capacity(count as usize);
        for _ in 0..count {
            pairs.push((binio::read_u32(r)?, binio::read_u32(r)?));
        }
        binio::expect_eof(r)?;
        Self::from_sorted_pairs(n, tau, &pairs)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MaskJson {
            n: self.n as u64,
            tau: self.tau,
            pairs: self.pairs().map(|(q, k)| [q, k]).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MaskJson = serde_json::from_str(s)?;
        let pairs: Vec<(u32, u32)> = doc.pairs.iter().map(|p| (p[0], p[1])).collect();
        Self::from_sorted_pairs(doc.n as usize, doc.tau, &pairs)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    n: u64,
    tau: f64,
    pairs: Vec<[u32; 2]>,
}

fn check_orientations<T: Scalar>(grid: &TokenGrid, orientations: &[EulerAngles<T>], tau: T) -> Result<()> {
    if orientations.len() != grid.frames() {
        return Err(domain(format!(
            "expected {} frame orientations, got {}",
            grid.frames(),
            orientations.len()
        )));
    }
    if !(tau >= T::zero()) {
        return Err(domain(format!("tau must be >= 0, got {tau}")));
    }
    Ok(())
}

/// Rotated patch centers for every token.
fn rotated_centers<T: Scalar>(grid: &TokenGrid, orientations: &[EulerAngles<T>]) -> Result<Vec<SphericalPoint<T>>> {
    let rotations: Vec<_> = orientations.iter().map(|e| rotation_matrix(*e)).collect();
    (0..grid.len())
        .map(|i| {
            let (frame, p) = token_center(grid, i)?;
            Ok(rotate_point(p, &rotations[frame]))
        })
        .collect()
}

/// Builds the mask. `orientations[f]` is the rotation of frame `f` relative
/// to the first frame.
///
/// Candidate keys are pruned by latitude band (great-circle distance is never
/// below the latitude difference); survivors are decided with the same
/// distance evaluation as [`build_mask_brute_force`].
pub fn build_mask<T: Scalar>(grid: &TokenGrid, orientations: &[EulerAngles<T>], tau: T) -> Result<SphereMask> {
    check_orientations(grid, orientations, tau)?;
    let points = rotated_centers(grid, orientations)?;

    let mut by_lat: Vec<u32> = (0..points.len() as u32).collect();
    by_lat.sort_by(|&a, &b| {
        points[a as usize]
            .phi
            .partial_cmp(&points[b as usize].phi)
            .expect("finite latitude")
            .then(a.cmp(&b))
    });
    let lats: Vec<T> = by_lat.iter().map(|&i| points[i as usize].phi).collect();
    let band = tau + T::epsilon().sqrt() * T::lit(4.0);

    let rows: Vec<Vec<u32>> = (0..points.len())
        .into_par_iter()
        .map(|q| {
            let pq = points[q];
            let lo = lats.partition_point(|&phi| phi < pq.phi - band);
            let hi = lats.partition_point(|&phi| phi <= pq.phi + band);
            let mut row: Vec<u32> = by_lat[lo..hi]
                .iter()
                .copied()
                .filter(|&k| haversine_distance(pq, points[k as usize]) <= tau)
                .collect();
            row.sort_unstable();
            row
        })
        .collect();

    Ok(SphereMask::from_rows(points.len(), tau.to_f64_lossy(), rows))
}

/// Reference construction: evaluates `temporal_distance` for every pair.
/// Quadratic; meant for verification of small grids.
pub fn build_mask_brute_force<T: Scalar>(
    grid: &TokenGrid,
    orientations: &[EulerAngles<T>],
    tau: T,
) -> Result<SphereMask> {
    check_orientations(grid, orientations, tau)?;
    let n = grid.len();
    let centers: Vec<(usize, SphericalPoint<T>)> =
        (0..n).map(|i| token_center(grid, i)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n);
    for &(fq, pq) in &centers {
        let row = centers
            .iter()
            .enumerate()
            .filter(|(_, &(fk, pk))| temporal_distance(pq, orientations[fq], pk, orientations[fk]) <= tau)
            .map(|(k, _)| k as u32)
            .collect();
        rows.push(row);
    }
    Ok(SphereMask::from_rows(n, tau.to_f64_lossy(), rows))
}

/// How the mask enters the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BiasMode {
    /// 0 for allowed keys, [`MASKED_LOGIT`] otherwise.
    #[default]
    Hard,
    /// +1 for allowed keys, 0 otherwise.
    Additive,
}

/// Dense row-major `n x n` bias.
pub fn mask_to_bias<T: Scalar>(mask: &SphereMask, mode: BiasMode) -> Vec<T> {
    let n = mask.n();
    let (on, off) = match mode {
        BiasMode::Hard => (T::zero(), T::lit(MASKED_LOGIT)),
        BiasMode::Additive => (T::one(), T::zero()),
    };
    let mut bias = vec![off; n * n];
    for (q, k) in mask.pairs() {
        bias[q as usize * n + k as usize] = on;
    }
    bias
}

/// Density of the mask at each threshold of an ascending `taus`.
pub fn mask_density_curve<T: Scalar>(
    grid: &TokenGrid,
    orientations: &[EulerAngles<T>],
    taus: &[T],
) -> Result<Vec<(T, f64)>> {
    if taus.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(domain("taus must be sorted ascending"));
    }
    taus.iter()
        .map(|&tau| Ok((tau, build_mask(grid, orientations, tau)?.density())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn grid(frames: usize, rows: usize, cols: usize) -> TokenGrid {
        TokenGrid::new(frames, rows, cols, ErpGrid::new(960, 480).unwrap()).unwrap()
    }

    #[test]
    fn grid_validation() {
        let src = ErpGrid::new(960, 480).unwrap();
        assert!(TokenGrid::new(0, 4, 8, src).is_err());
        assert!(TokenGrid::new(1, 7, 8, src).is_err());
        assert!(TokenGrid::new(1, 4, 7, src).is_err());
        assert_eq!(TokenGrid::new(2, 4, 8, src).unwrap().len(), 64);
    }

    #[test]
    fn token_center_examples() {
        let (f, p) = token_center::<f64>(&grid(1, 1, 1), 0).unwrap();
        assert_eq!((f, p.theta, p.phi), (0, 0.0, 0.0));

        let g = grid(3, 4, 8);
        let (f, p) = token_center::<f64>(&g, g.len() - 1).unwrap();
        let expect = erp_to_sphere(7.5 * 120.0, 3.5 * 120.0, g.source()).unwrap();
        assert_eq!(f, 2);
        assert_eq!(p, expect);
        assert!(token_center::<f64>(&g, g.len()).is_err());

        for i in 0..g.len() {
            let (f, r, c) = g.coords(i);
            assert_eq!(g.index(f, r, c), i);
        }
    }

    #[test]
    fn tau_zero_keeps_identical_centers_only() {
        let g = grid(3, 4, 8);
        let m = build_mask(&g, &[EulerAngles::zero(); 3], 0.0).unwrap();
        for q in 0..g.len() {
            for k in 0..g.len() {
                let same_center = g.coords(q).1 == g.coords(k).1 && g.coords(q).2 == g.coords(k).2;
                assert_eq!(m.allows(q, k), same_center, "({q}, {k})");
            }
        }
        assert_eq!(m.pair_count(), 32 * 9);
    }

    #[test]
    fn tau_pi_allows_everything() {
        let g = grid(2, 4, 8);
        let orient = [EulerAngles::zero(), EulerAngles::new(0.7, -0.2, 0.4)];
        let m = build_mask(&g, &orient, PI).unwrap();
        assert_eq!(m.pair_count(), 64 * 64);
        assert_eq!(m.density(), 1.0);
    }

    #[test]
    fn matches_brute_force_single_frame() {
        let g = grid(1, 4, 8);
        let fast = build_mask(&g, &[EulerAngles::zero()], 0.5).unwrap();
        let slow = build_mask_brute_force(&g, &[EulerAngles::zero()], 0.5).unwrap();
        assert_eq!(fast, slow);
        assert!(fast.is_reflexive() && fast.is_symmetric());
        assert!(fast.density() > 1.0 / 32.0 && fast.density() < 1.0);
    }

    #[test]
    fn yawed_frame_shifts_alignment() {
        let g = grid(2, 4, 8);
        let yawed = [EulerAngles::zero(), EulerAngles::new(FRAC_PI_2, 0.0, 0.0)];
        let fast = build_mask(&g, &yawed, 0.3).unwrap();
        assert_eq!(fast, build_mask_brute_force(&g, &yawed, 0.3).unwrap());
        // column spacing is pi/4, so a pi/2 yaw aligns frame-1 column c with
        // frame-0 column c + 2
        for row in 1..3 {
            for c in 0..8 {
                let q = g.index(1, row, c);
                let k = g.index(0, row, (c + 2) % 8);
                assert!(fast.allows(q, k), "row {row} col {c}");
                assert!(!fast.allows(q, g.index(0, row, c)));
            }
        }
    }

    #[test]
    fn wrong_orientation_count() {
        let g = grid(2, 4, 8);
        assert!(build_mask(&g, &[EulerAngles::<f64>::zero()], 0.1).is_err());
        assert!(build_mask(&g, &[EulerAngles::zero(); 2], -0.1).is_err());
    }

    #[test]
    fn bias_examples() {
        let all = SphereMask::from_sorted_pairs(2, 4.0, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        assert_eq!(mask_to_bias::<f64>(&all, BiasMode::Hard), vec![0.0; 4]);
        let diag = SphereMask::from_sorted_pairs(2, 0.0, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(mask_to_bias::<f64>(&diag, BiasMode::Hard), vec![0.0, -1e9, -1e9, 0.0]);
        assert_eq!(mask_to_bias::<f64>(&diag, BiasMode::Additive), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn masked_softmax_weight_underflows() {
        let diag = SphereMask::from_sorted_pairs(3, 0.0, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        let bias = mask_to_bias::<f64>(&diag, BiasMode::Hard);
        let logits = [[3.0, -2.0, 50.0], [100.0, -40.0, 7.0], [0.0, 0.0, -100.0]];
        for q in 0..3 {
            let z: Vec<f64> = (0..3).map(|k| logits[q][k] + bias[q * 3 + k]).collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..3 {
                if k != q {
                    assert!(e[k] / s < 1e-30);
                }
            }
        }
    }

    #[test]
    fn density_curve_is_monotone() {
        let g = grid(2, 4, 8);
        let orient = [EulerAngles::zero(), EulerAngles::new(0.3, 0.1, 0.0)];
        let taus: Vec<f64> = (0..=20).map(|i| PI * i as f64 / 20.0).collect();
        let curve = mask_density_curve(&g, &orient, &taus).unwrap();
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(curve.last().unwrap().1, 1.0);
        assert!(mask_density_curve(&g, &orient, &[0.2, 0.1]).is_err());
    }

    #[test]
    fn spam_and_json_round_trip() {
        let g = grid(2, 4, 8);
        let m = build_mask(&g, &[EulerAngles::zero(), EulerAngles::new(0.2, 0.0, 0.0)], 0.4).unwrap();
        let mut bytes = Vec::new();
        m.write_spam(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 8 + 8 + 8 + 8 * m.pair_count());
        let back = SphereMask::read_spam(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);

        let json = m.to_json().unwrap();
        assert!(json.starts_with("{\"n\":64,\"tau\":0.4,\"pairs\":[[0,0],"));
        assert_eq!(SphereMask::from_json(&json).unwrap(), m);
    }

    #[test]
    fn rejects_unsorted_pairs() {
        assert!(SphereMask::from_sorted_pairs(2, 0.0, &[(1, 1), (0, 0)]).is_err());
        assert!(SphereMask::from_sorted_pairs(2, 0.0, &[(0, 0), (0, 0)]).is_err());
        assert!(SphereMask::from_sorted_pairs(2, 0.0, &[(0, 2)]).is_err());
    }
}
