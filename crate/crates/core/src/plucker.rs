//! Per-pixel Plücker ray embeddings of a camera route.
//!
//! Each pixel of each frame carries `(m, d)` where `d` is the unit ray
//! direction in world coordinates and `m = t x d` is the moment of the ray
//! through the camera position `t`. The field is stored frame-major, then
//! row, then column, then the six channels with the moment first.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use crate::sphere::{
    cross3, dot3, erp_to_sphere, norm3, rotation_matrix, sphere_to_unit_vector, ErpGrid,
    EulerAngles,
};

pub const PLKF_MAGIC: &[u8; 4] = b"PLKF";
pub const PLKF_VERSION: u16 = 1;

/// Camera position (meters) and orientation for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose<T> {
    pub position: [T; 3],
    pub orientation: EulerAngles<T>,
}

impl<T: Scalar> CameraPose<T> {
    pub fn new(position: [T; 3], orientation: EulerAngles<T>) -> Self {
        Self { position, orientation }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.orientation.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Scalar> PinholeIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(domain(format!(
                "singular intrinsics: fx = {}, fy = {} must be positive",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

/// How pixels turn into camera rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayModel<T> {
    /// Full 360 degree equirectangular frame.
    Erp,
    /// Perspective crop. With `literal_translation` the camera position is
    /// added to the direction before normalization.
    Pinhole {
        intrinsics: PinholeIntrinsics<T>,
        literal_translation: bool,
    },
}

fn normalize<T: Scalar>(v: [T; 3]) -> Result<[T; 3]> {
    let n = norm3(v);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(domain("cannot normalize a zero or non-finite direction"));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// World-space unit ray through ERP pixel `(u, v)`.
pub fn pixel_ray_erp<T: Scalar>(u: T, v: T, grid: ErpGrid, pose: &CameraPose<T>) -> Result<[T; 3]> {
    let local = sphere_to_unit_vector(erp_to_sphere(u, v, grid)?);
    normalize(rotation_matrix(pose.orientation).apply(local))
}

/// World-space unit ray through perspective pixel `(u, v)`:
/// `normalize(R K^-1 [u, v, 1])`, or `normalize(R K^-1 [u, v, 1] + t)` in
/// literal-translation mode.
pub fn pixel_ray_pinhole<T: Scalar>(
    u: T,
    v: T,
    k: &PinholeIntrinsics<T>,
    pose: &CameraPose<T>,
    literal_translation: bool,
) -> Result<[T; 3]> {
    k.validate()?;
    let cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, T::one()];
    let mut d = rotation_matrix(pose.orientation).apply(cam);
    if literal_translation {
        for (di, ti) in d.iter_mut().zip(pose.position) {
            *di += ti;
        }
    }
    normalize(d)
}

/// Dense `T x H x W x 6` Plücker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerField<T> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> PluckerField<T> {
    pub fn from_raw(frames: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(domain("Plücker field dimensions must be positive"));
        }
        let expected = frames * height * width * 6;
        if data.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} values ({frames}x{height}x{width}x6)"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { frames, height, width, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    fn offset(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.height + y) * self.width + x) * 6
    }

    /// `(m, d)` at frame `t`, row `y`, column `x`.
    pub fn get(&self, t: usize, y: usize, x: usize) -> [T; 6] {
        let o = self.offset(t, y, x);
        let mut out = [T::zero(); 6];
        out.copy_from_slice(&self.data[o..o + 6]);
        out
    }

    pub fn moment(&self, t: usize, y: usize, x: usize) -> [T; 3] {
        let c = self.get(t, y, x);
        [c[0], c[1], c[2]]
    }

    pub fn direction(&self, t: usize, y: usize, x: usize) -> [T; 3] {
        let c = self.get(t, y, x);
        [c[3], c[4], c[5]]
    }

    /// Largest `|m . d|` over the pixels of frame `t`.
    pub fn max_moment_dot_direction(&self, t: usize) -> T {
        let per_frame = self.height * self.width * 6;
        self.data[t * per_frame..(t + 1) * per_frame]
            .chunks_exact(6)
            .map(|c| dot3([c[0], c[1], c[2]], [c[3], c[4], c[5]]).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> PluckerField<U> {
        PluckerField {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Embeds every pixel of every frame of `route`. Pixels are sampled at their
/// centers `(x + 0.5, y + 0.5)`.
pub fn build_plucker_field<T: Scalar>(
    route: &[CameraPose<T>],
    grid: ErpGrid,
    model: &RayModel<T>,
) -> Result<PluckerField<T>> {
    if route.is_empty() {
        return Err(domain("cannot build a Plücker field from an empty route"));
    }
    if let Some(i) = route.iter().position(|p| !p.is_finite()) {
        return Err(domain(format!("pose {i} has non-finite components")));
    }
    if let RayModel::Pinhole { intrinsics, .. } = model {
        intrinsics.validate()?;
    }
    let (h, w) = (grid.height(), grid.width());
    let mut data = vec![T::zero(); route.len() * h * w * 6];
    let half = T::lit(0.5);

    data.par_chunks_mut(h * w * 6)
        .zip(route.par_iter())
        .try_for_each(|(frame, pose)| -> Result<()> {
            for (idx, cell) in frame.chunks_exact_mut(6).enumerate() {
                let u = T::from_usize_lossy(idx % w) + half;
                let v = T::from_usize_lossy(idx / w) + half;
                let d = match model {
                    RayModel::Erp => pixel_ray_erp(u, v, grid, pose)?,
                    RayModel::Pinhole { intrinsics, literal_translation } => {
                        pixel_ray_pinhole(u, v, intrinsics, pose, *literal_translation)?
                    }
                };
                let m = cross3(pose.position, d);
                cell[..3].copy_from_slice(&m);
                cell[3..].copy_from_slice(&d);
            }
            Ok(())
        })?;

    PluckerField::from_raw(route.len(), h, w, data)
}

/// Average-pools the field by integer factors along frames, rows and columns.
///
/// Directions are averaged and renormalized; the averaged moment is rescaled
/// by the same factor and projected orthogonal to the new direction, so a
/// block from a single frame yields exactly `t x d_mean`.
pub fn downsample_field<T: Scalar>(
    field: &PluckerField<T>,
    factor_t: usize,
    factor_h: usize,
    factor_w: usize,
) -> Result<PluckerField<T>> {
    let dims = [field.frames, field.height, field.width];
    let factors = [factor_t, factor_h, factor_w];
    for (d, f) in dims.iter().zip(factors) {
        if f == 0 || d % f != 0 {
            return Err(domain(format!(
                "downsample factors {factors:?} do not divide field dims {dims:?}"
            )));
        }
    }
    if factors == [1, 1, 1] {
        return Ok(field.clone());
    }
    let (ot, oh, ow) = (dims[0] / factor_t, dims[1] / factor_h, dims[2] / factor_w);
    let count = T::from_usize_lossy(factor_t * factor_h * factor_w);
    let mut data = Vec::with_capacity(ot * oh * ow * 6);
    for t in 0..ot {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = [T::zero(); 6];
                for dt in 0..factor_t {
                    for dy in 0..factor_h {
                        for dx in 0..factor_w {
                            let c = field.get(t * factor_t + dt, y * factor_h + dy, x * factor_w + dx);
                            for (a, v) in acc.iter_mut().zip(c) {
                                *a += v;
                            }
                        }
                    }
                }
                let m = [acc[0] / count, acc[1] / count, acc[2] / count];
                let d = [acc[3] / count, acc[4] / count, acc[5] / count];
                let len = norm3(d);
                if !(len > T::lit(1e-12)) {
                    return Err(domain(format!(
                        "block ({t}, {y}, {x}) has directions that cancel out"
                    )));
                }
                let d = [d[0] / len, d[1] / len, d[2] / len];
                let m = [m[0] / len, m[1] / len, m[2] / len];
                let along = dot3(m, d);
                data.extend_from_slice(&[
                    m[0] - along * d[0],
                    m[1] - along * d[1],
                    m[2] - along * d[2],
                    d[0],
                    d[1],
                    d[2],
                ]);
            }
        }
    }
    PluckerField::from_raw(ot, oh, ow, data)
}

/// Writes the `PLKF` binary format (values stored as `f32`).
pub fn write_plkf<T: Scalar, W: Write>(field: &PluckerField<T>, w: &mut W) -> Result<()> {
    binio::write_header(w, PLKF_MAGIC, PLKF_VERSION)?;
    for d in [field.frames, field.height, field.width] {
        w.write_all(&binio::to_u32(d, "field dimension")?.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(field.data.len() * 4);
    for v in &field.data {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_plkf<R: Read>(r: &mut R) -> Result<PluckerField<f32>> {
    binio::read_header(r, PLKF_MAGIC, PLKF_VERSION)?;
    let frames = binio::read_u32(r)? as usize;
    let height = binio::read_u32(r)? as usize;
    let width = binio::read_u32(r)? as usize;
    let n = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(6))
        .ok_or_else(|| Error::Format("PLKF dimensions overflow".into()))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("PLKF payload shorter than {n} floats")))?;
    binio::expect_eof(r)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    PluckerField::from_raw(frames, height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn still(position: [f64; 3]) -> CameraPose<f64> {
        CameraPose::new(position, EulerAngles::zero())
    }

    #[test]
    fn erp_ray_identity_and_yaw() {
        let g = ErpGrid::new(960, 480).unwrap();
        let d = pixel_ray_erp(480.0, 240.0, g, &still([0.0; 3])).unwrap();
        assert_eq!(d, [1.0, 0.0, 0.0]);
        let yawed = CameraPose::new([0.0; 3], EulerAngles::new(FRAC_PI_2, 0.0, 0.0));
        let d = pixel_ray_erp(480.0, 240.0, g, &yawed).unwrap();
        assert!(d[0].abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15 && d[2] == 0.0);
        assert!(pixel_ray_erp(-1.0, 0.0, g, &yawed).is_err());
    }

    #[test]
    fn erp_ray_unit_norm() {
        let g = ErpGrid::new(64, 32).unwrap();
        let pose = CameraPose::new([1.0, 2.0, 3.0], EulerAngles::new(0.3, -1.1, 2.2));
        for (u, v) in [(0.0, 0.0), (13.2, 31.9), (63.5, 16.0), (7.0, 32.0)] {
            let d = pixel_ray_erp(u, v, g, &pose).unwrap();
            assert!((norm3::<f64>(d) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pinhole_rays() {
        let k = PinholeIntrinsics::new(500.0, 400.0, 320.0, 240.0).unwrap();
        let d = pixel_ray_pinhole(320.0, 240.0, &k, &still([0.0; 3]), false).unwrap();
        assert_eq!(d, [0.0, 0.0, 1.0]);

        let k = PinholeIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let d = pixel_ray_pinhole(1.0, 0.0, &k, &still([0.0; 3]), false).unwrap();
        let h = 0.5f64.sqrt();
        assert!((d[0] - h).abs() < 1e-15 && d[1] == 0.0 && (d[2] - h).abs() < 1e-15);

        let literal = pixel_ray_pinhole(1.0, 0.0, &k, &still([0.0; 3]), true).unwrap();
        assert_eq!(literal, d);
        let shifted = pixel_ray_pinhole(1.0, 0.0, &k, &still([1.0, 0.0, 0.0]), true).unwrap();
        assert_ne!(shifted, d);
    }

    #[test]
    fn singular_intrinsics_rejected() {
        assert!(PinholeIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        let k = PinholeIntrinsics { fx: 1.0, fy: 0.0, cx: 0.0, cy: 0.0 };
        assert!(pixel_ray_pinhole(0.0, 0.0, &k, &still([0.0; 3]), false).is_err());
    }

    #[test]
    fn zero_translation_kills_moment() {
        let g = ErpGrid::new(16, 8).unwrap();
        let route = vec![still([0.0; 3]), CameraPose::new([0.0; 3], EulerAngles::new(0.5, 0.1, 0.0))];
        let f = build_plucker_field(&route, g, &RayModel::Erp).unwrap();
        assert_eq!((f.frames(), f.height(), f.width()), (2, 8, 16));
        for t in 0..2 {
            for y in 0..8 {
                for x in 0..16 {
                    assert_eq!(f.moment(t, y, x), [0.0; 3]);
                    assert!((norm3(f.direction(t, y, x)) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hand_cross_product() {
        // tr = (1,0,0), d = (0,1,0) -> m = (0,0,1); ERP coordinate (6, 2) looks
        // along +y (theta = pi/2 on the equator)
        let g = ErpGrid::new(8, 4).unwrap();
        let f = build_plucker_field(&[still([1.0, 0.0, 0.0])], g, &RayModel::Erp).unwrap();
        let d = pixel_ray_erp(6.0, 2.0, g, &still([1.0, 0.0, 0.0])).unwrap();
        assert!((d[1] - 1.0).abs() < 1e-15);
        let m = cross3([1.0, 0.0, 0.0], d);
        assert!(m[0].abs() < 1e-15 && m[1].abs() < 1e-15 && (m[2] - 1.0).abs() < 1e-15);
        assert!(f.max_moment_dot_direction(0) < 1e-15);
    }

    #[test]
    fn empty_route_rejected() {
        let g = ErpGrid::new(8, 4).unwrap();
        assert!(build_plucker_field::<f64>(&[], g, &RayModel::Erp).is_err());
    }

    #[test]
    fn erp_field_covers_sphere() {
        let g = ErpGrid::new(96, 48).unwrap();
        let f = build_plucker_field(&[still([0.0; 3])], g, &RayModel::Erp).unwrap();
        let tol = 2.0 * PI / 96.0;
        let targets = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        for target in targets {
            let best = (0..48)
                .flat_map(|y| (0..96).map(move |x| (y, x)))
                .map(|(y, x)| dot3(f.direction(0, y, x), target).clamp(-1.0, 1.0).acos())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= tol, "target {target:?} nearest {best}");
        }
    }

    #[test]
    fn downsample_identity_and_constant() {
        let g = ErpGrid::new(8, 4).unwrap();
        let f = build_plucker_field(&[still([0.3, -0.2, 1.0]); 2], g, &RayModel::Erp).unwrap();
        assert_eq!(downsample_field(&f, 1, 1, 1).unwrap(), f);

        let cell: [f64; 6] = [0.0, 0.0, 1.0, 0.6, 0.8, 0.0];
        let constant = PluckerField::from_raw(2, 2, 2, cell.repeat(8)).unwrap();
        let pooled = downsample_field(&constant, 2, 2, 2).unwrap();
        let got = pooled.get(0, 0, 0);
        for (a, b) in got.iter().zip(cell) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn downsample_mixed_directions() {
        let a = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let data: Vec<f64> = [a, b, b, a].concat();
        let f = PluckerField::from_raw(1, 2, 2, data).unwrap();
        let d = downsample_field(&f, 1, 2, 2).unwrap().direction(0, 0, 0);
        let h = 0.5f64.sqrt();
        assert!((d[0] - h).abs() < 1e-15 && (d[1] - h).abs() < 1e-15 && d[2] == 0.0);
    }

    #[test]
    fn downsample_keeps_single_frame_moment_exact() {
        let g = ErpGrid::new(16, 8).unwrap();
        let tr: [f64; 3] = [0.7, -1.3, 1.6];
        let f = build_plucker_field(&[CameraPose::new(tr, EulerAngles::new(0.4, 0.0, 0.1))], g, &RayModel::Erp)
            .unwrap();
        let p = downsample_field(&f, 1, 2, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = cross3(tr, p.direction(0, y, x));
                let m = p.moment(0, y, x);
                for i in 0..3 {
                    assert!((m[i] - expect[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let f = PluckerField::from_raw(1, 3, 2, vec![0.0; 36]).unwrap();
        assert!(downsample_field(&f, 1, 2, 1).is_err());
        assert!(downsample_field(&f, 0, 1, 1).is_err());
    }

    #[test]
    fn plkf_round_trip() {
        let g = ErpGrid::new(8, 4).unwrap();
        let route = [still([0.1, 0.2, 1.6]), CameraPose::new([0.2, 0.2, 1.6], EulerAngles::new(0.1, 0.0, 0.0))];
        let f = build_plucker_field(&route, g, &RayModel::Erp).unwrap();
        let mut first = Vec::new();
        write_plkf(&f, &mut first).unwrap();
        assert_eq!(&first[..4], b"PLKF");
        assert_eq!(first.len(), 4 + 2 + 12 + 2 * 4 * 8 * 6 * 4);
        let back = read_plkf(&mut first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_plkf(&back, &mut second).unwrap();
        assert_eq!(first, second);

        let mut truncated = first.clone();
        truncated.pop();
        assert!(read_plkf(&mut truncated.as_slice()).is_err());
        let mut bad = first;
        bad[0] = b'X';
        assert!(read_plkf(&mut bad.as_slice()).is_err());
    }
}
