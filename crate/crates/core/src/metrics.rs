//! Pose-control and pixel-fidelity metrics.

use std::io::{Read, Write};

use crate::binio;
use crate::error::{domain, Error, Result};
use crate::route::ExplorationRoute;
use crate::scalar::Scalar;
use crate::sphere::Rotation3;

pub const IMGF_MAGIC: &[u8; 4] = b"IMGF";
pub const IMGF_VERSION: u16 = 1;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<T> {
    poses: Vec<(Rotation3<T>, [T; 3])>,
}

impl<T: Scalar> PoseSequence<T> {
    pub fn new(poses: Vec<(Rotation3<T>, [T; 3])>) -> Result<Self> {
        let tol = T::lit(1e-6);
        for (i, (r, t)) in poses.iter().enumerate() {
            if !r.is_rotation(tol) {
                return Err(domain(format!("pose {i}: matrix is not a rotation")));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(domain(format!("pose {i}: non-finite translation")));
            }
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[(Rotation3<T>, [T; 3])] {
        &self.poses
    }

    /// Left-multiplies every rotation by `r` and rotates and shifts every
    /// translation: `t -> r t + shift`.
    pub fn transformed(&self, r: &Rotation3<T>, shift: [T; 3]) -> Self {
        let poses = self
            .poses
            .iter()
            .map(|(rot, t)| {
                let p = r.apply(*t);
                (r.mul(rot), [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
            })
            .collect();
        Self { poses }
    }

    fn total_length(&self) -> T {
        self.poses
            .windows(2)
            .map(|w| dist(w[0].1, w[1].1))
            .fold(T::zero(), |a, b| a + b)
    }
}

impl PoseSequence<f64> {
    pub fn from_route(route: &ExplorationRoute) -> Self {
        let poses = route
            .frames
            .iter()
            .map(|f| (f.orientation.to_rotation(), f.position))
            .collect();
        Self { poses }
    }
}

fn dist<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn check_lengths<T>(gt: &PoseSequence<T>, est: &PoseSequence<T>) -> Result<()> {
    if gt.poses.is_empty() || gt.poses.len() != est.poses.len() {
        return Err(Error::Shape {
            expected: format!("two non-empty sequences of equal length (gt has {})", gt.poses.len()),
            actual: format!("{}", est.poses.len()),
        });
    }
    Ok(())
}

/// Angle of the relative rotation `a^T b`.
pub fn geodesic_angle<T: Scalar>(a: &Rotation3<T>, b: &Rotation3<T>) -> T {
    let m = a.transpose().mul(b);
    let r = m.rows();
    let two = T::lit(2.0);
    let cos = (m.trace() - T::one()) / two;
    let axis = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let sin = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt() / two;
    // atan2 stays accurate near 0 and pi where arccos loses digits
    sin.atan2(cos)
}

/// Mean per-frame geodesic rotation angle, radians.
pub fn rotation_error<T: Scalar>(gt: &PoseSequence<T>, est: &PoseSequence<T>) -> Result<T> {
    check_lengths(gt, est)?;
    let sum: T = gt.poses.iter().zip(&est.poses).map(|(a, b)| geodesic_angle(&a.0, &b.0)).sum();
    Ok(sum / T::from_usize_lossy(gt.len()))
}

/// Mean per-frame translation distance. With `normalize`, each trajectory is
/// first shifted to start at the origin and scaled to unit total length.
pub fn translation_error<T: Scalar>(gt: &PoseSequence<T>, est: &PoseSequence<T>, normalize: bool) -> Result<T> {
    check_lengths(gt, est)?;
    let prep = |s: &PoseSequence<T>| -> Result<Vec<[T; 3]>> {
        let ts: Vec<[T; 3]> = s.poses.iter().map(|p| p.1).collect();
        if !normalize {
            return Ok(ts);
        }
        let len = s.total_length();
        if !(len > T::zero()) {
            return Err(domain("cannot normalize a zero-length trajectory"));
        }
        let o = ts[0];
        Ok(ts.iter().map(|t| [(t[0] - o[0]) / len, (t[1] - o[1]) / len, (t[2] - o[2]) / len]).collect())
    };
    let (a, b) = (prep(gt)?, prep(est)?);
    let sum: T = a.iter().zip(&b).map(|(p, q)| dist(*p, *q)).sum();
    Ok(sum / T::from_usize_lossy(a.len()))
}

/// Declared value range of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRange {
    /// `[0, 1]`
    Unit,
    /// `[0, 255]`
    Byte,
}

impl PixelRange {
    pub fn max_value<T: Scalar>(self) -> T {
        match self {
            PixelRange::Unit => T::one(),
            PixelRange::Byte => T::lit(255.0),
        }
    }
}

/// `height x width x channels`, interleaved, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
    range: PixelRange,
}

impl<T: Scalar> ImageFrame<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>, range: PixelRange) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::Shape {
                expected: format!("{height}x{width}x{channels} non-empty image"),
                actual: format!("{} values", data.len()),
            });
        }
        let max = range.max_value::<T>();
        if let Some(i) = data.iter().position(|v| !(*v >= T::zero() && *v <= max)) {
            return Err(domain(format!("pixel value {} at index {i} outside [0, {max}]", data[i])));
        }
        Ok(Self { height, width, channels, data, range })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        range: PixelRange,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> PixelRange {
        self.range
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

fn check_pair<T: Scalar>(a: &ImageFrame<T>, b: &ImageFrame<T>) -> Result<()> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) || a.range != b.range {
        return Err(Error::Shape {
            expected: format!("{}x{}x{} {:?}", a.height, a.width, a.channels, a.range),
            actual: format!("{}x{}x{} {:?}", b.height, b.width, b.channels, b.range),
        });
    }
    Ok(())
}

/// `10 log10(MAX^2 / MSE)` in dB; `+inf` for identical images.
pub fn psnr<T: Scalar>(a: &ImageFrame<T>, b: &ImageFrame<T>) -> Result<T> {
    check_pair(a, b)?;
    let sse: T = a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y) * (x - y)).sum();
    if sse == T::zero() {
        return Ok(T::infinity());
    }
    let mse = sse / T::from_usize_lossy(a.data.len());
    let max = a.range.max_value::<T>();
    Ok(T::lit(10.0) * (max * max / mse).log10())
}

fn gaussian_window<T: Scalar>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| T::lit(v / s)).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid<T: Scalar>(plane: &[T], h: usize, w: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![T::zero(); h * ow];
    for y in 0..h {
        for x in 0..ow {
            horiz[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows and channels.
pub fn ssim<T: Scalar>(a: &ImageFrame<T>, b: &ImageFrame<T>) -> Result<T> {
    check_pair(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(domain(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.height, a.width
        )));
    }
    let max = a.range.max_value::<T>();
    let c1 = (T::lit(SSIM_K1) * max).powi(2);
    let c2 = (T::lit(SSIM_K2) * max).powi(2);
    let two = T::lit(2.0);
    let k = gaussian_window::<T>();
    let (h, w) = (a.height, a.width);
    let mut total = T::zero();
    let mut count = 0usize;
    for c in 0..a.channels {
        let pa: Vec<T> = (0..h * w).map(|i| a.data[i * a.channels + c]).collect();
        let pb: Vec<T> = (0..h * w).map(|i| b.data[i * b.channels + c]).collect();
        let sq = |p: &[T], q: &[T]| -> Vec<T> { p.iter().zip(q).map(|(&x, &y)| x * y).collect() };
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let e_aa = filter_valid(&sq(&pa, &pa), h, w, &k);
        let e_bb = filter_valid(&sq(&pb, &pb), h, w, &k);
        let e_ab = filter_valid(&sq(&pa, &pb), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (two * ma * mb + c1) * (two * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / T::from_usize_lossy(count))
}

/// Writes the raw `IMGF` format: header, `H, W, C` as u32, then `f32` values.
pub fn write_imgf<T: Scalar, W: Write>(img: &ImageFrame<T>, w: &mut W) -> Result<()> {
    binio::write_header(w, IMGF_MAGIC, IMGF_VERSION)?;
    let mut buf = Vec::with_capacity(12 + img.data.len() * 4);
    for d in [img.height, img.width, img.channels] {
        buf.extend_from_slice(&binio::to_u32(d, "image dimension")?.to_le_bytes());
    }
    for v in &img.data {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads an `IMGF` image; the value range is declared by the caller.
pub fn read_imgf<R: Read>(r: &mut R, range: PixelRange) -> Result<ImageFrame<f64>> {
    binio::read_header(r, IMGF_MAGIC, IMGF_VERSION)?;
    let h = binio::read_u32(r)? as usize;
    let w = binio::read_u32(r)? as usize;
    let c = binio::read_u32(r)? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format("IMGF dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        data.push(binio::read_f32(r)? as f64);
    }
    binio::expect_eof(r)?;
    ImageFrame::new(h, w, c, data, range)
}
