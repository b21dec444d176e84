//! Equirectangular (ERP) pixel grid <-> unit sphere conversions, great-circle
//! distances and rotation-compensated distances between frames.
//!
//! Conventions:
//! - longitude `theta` in `[-pi, pi)`, latitude `phi` in `[-pi/2, pi/2]`;
//!   pixel `(x, y)` maps to `theta = 2*pi*x/W - pi`, `phi = pi*y/H - pi/2`.
//! - unit vector of `(theta, phi)` is `(cos phi cos theta, cos phi sin theta, sin phi)`.
//! - the sphere has radius 1, so every distance is an angle in radians.
//! - rotations are `Rz(yaw) * Ry(pitch) * Rx(roll)` acting on column vectors.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Pixel dimensions of an equirectangular image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErpGrid {
    width: usize,
    height: usize,
}

impl ErpGrid {
    /// `width` must be even and at least 2, `height` at least 2.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 2 || width % 2 != 0 {
            return Err(domain(format!("ERP width must be even and >= 2, got {width}")));
        }
        if height < 2 {
            return Err(domain(format!("ERP height must be >= 2, got {height}")));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint<T> {
    /// Longitude in `[-pi, pi)`.
    pub theta: T,
    /// Latitude in `[-pi/2, pi/2]`.
    pub phi: T,
}

impl<T: Scalar> SphericalPoint<T> {
    /// Normalizes `theta` into `[-pi, pi)` and clamps `phi` to `[-pi/2, pi/2]`.
    pub fn new(theta: T, phi: T) -> Self {
        Self {
            theta: wrap_longitude(theta),
            phi: phi.max(-T::FRAC_PI_2()).min(T::FRAC_PI_2()),
        }
    }

    /// Cartesian unit vector of this point.
    pub fn to_unit_vector(self) -> [T; 3] {
        sphere_to_unit_vector(self)
    }

    /// Inverse of [`SphericalPoint::to_unit_vector`]. The input does not need
    /// to be normalized. At the poles longitude is undefined and set to 0.
    pub fn from_vector(v: [T; 3]) -> Self {
        let [x, y, z] = v;
        let r_xy = x.hypot(y);
        let phi = z.atan2(r_xy);
        let theta = if r_xy == T::zero() { T::zero() } else { y.atan2(x) };
        Self::new(theta, phi)
    }
}

fn wrap_longitude<T: Scalar>(theta: T) -> T {
    let pi = T::PI();
    if theta >= -pi && theta < pi {
        return theta;
    }
    let two_pi = pi + pi;
    let wrapped = theta - two_pi * ((theta + pi) / two_pi).floor();
    if wrapped >= pi {
        wrapped - two_pi
    } else {
        wrapped
    }
}

/// Camera orientation as yaw (about z), pitch (about y), roll (about x), radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles<T> {
    pub yaw: T,
    pub pitch: T,
    pub roll: T,
}

impl<T: Scalar> EulerAngles<T> {
    pub fn new(yaw: T, pitch: T, roll: T) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }

    pub fn to_rotation(self) -> Rotation3<T> {
        rotation_matrix(self)
    }
}

/// A 3x3 rotation matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3<T> {
    m: [[T; 3]; 3],
}

impl<T: Scalar> Rotation3<T> {
    pub fn identity() -> Self {
        let (o, l) = (T::zero(), T::one());
        Self { m: [[l, o, o], [o, l, o], [o, o, l]] }
    }

    /// Validates orthonormality and a positive determinant within `tol`.
    pub fn from_rows(m: [[T; 3]; 3], tol: T) -> Result<Self> {
        let r = Self { m };
        if !r.is_rotation(tol) {
            return Err(domain("matrix is not a proper rotation"));
        }
        Ok(r)
    }

    pub fn rows(&self) -> &[[T; 3]; 3] {
        &self.m
    }

    pub fn about_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, l) = (T::zero(), T::one());
        Self { m: [[l, o, o], [o, c, -s], [o, s, c]] }
    }

    pub fn about_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, l) = (T::zero(), T::one());
        Self { m: [[c, o, s], [o, l, o], [-s, o, c]] }
    }

    pub fn about_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, l) = (T::zero(), T::one());
        Self { m: [[c, -s, o], [s, c, o], [o, o, l]] }
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self { m: out }
    }

    pub fn apply(&self, v: [T; 3]) -> [T; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> T {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `R^T R = I` and `det R = 1`, each within `tol`.
    pub fn is_rotation(&self, tol: T) -> bool {
        let rtr = self.transpose().mul(self);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { T::one() } else { T::zero() };
                if (rtr.m[i][j] - expect).abs() > tol {
                    return false;
                }
            }
        }
        (self.determinant() - T::one()).abs() <= tol
    }

    /// Recovers yaw/pitch/roll such that `rotation_matrix(angles) == self`.
    /// At gimbal lock (pitch = +-pi/2) roll is reported as 0.
    pub fn to_euler(&self) -> EulerAngles<T> {
        let m = &self.m;
        let sp = (-m[2][0]).max(-T::one()).min(T::one());
        let pitch = sp.asin();
        let cp = m[2][1].hypot(m[2][2]);
        if cp > T::lit(1e-12) {
            EulerAngles::new(m[1][0].atan2(m[0][0]), pitch, m[2][1].atan2(m[2][2]))
        } else {
            EulerAngles::new((-m[0][1]).atan2(m[1][1]), pitch, T::zero())
        }
    }
}

/// Maps a (possibly fractional) ERP pixel coordinate to the sphere.
///
/// Accepts `0 <= x < W` and `0 <= y <= H`.
pub fn erp_to_sphere<T: Scalar>(x: T, y: T, grid: ErpGrid) -> Result<SphericalPoint<T>> {
    let w = T::from_usize_lossy(grid.width);
    let h = T::from_usize_lossy(grid.height);
    if !(x >= T::zero() && x < w) {
        return Err(domain(format!("pixel x = {x} outside [0, {w})")));
    }
    if !(y >= T::zero() && y <= h) {
        return Err(domain(format!("pixel y = {y} outside [0, {h}]")));
    }
    // pi * (2x/W - 1) is 2*pi*x/W - pi, evaluated so the center and the
    // corners land exactly on 0 and -pi.
    let one = T::one();
    let theta = T::PI() * ((x + x) / w - one);
    let phi = T::PI() * (y / h - T::lit(0.5));
    Ok(SphericalPoint::new(theta, phi))
}

/// Sphere position of the center of integer pixel `(col, row)`.
pub fn pixel_center_to_sphere<T: Scalar>(
    col: usize,
    row: usize,
    grid: ErpGrid,
) -> Result<SphericalPoint<T>> {
    let half = T::lit(0.5);
    erp_to_sphere(
        T::from_usize_lossy(col) + half,
        T::from_usize_lossy(row) + half,
        grid,
    )
}

pub fn sphere_to_unit_vector<T: Scalar>(p: SphericalPoint<T>) -> [T; 3] {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    [cp * ct, cp * st, sp]
}

/// Great-circle distance on the unit sphere (haversine form), in `[0, pi]`.
pub fn haversine_distance<T: Scalar>(p1: SphericalPoint<T>, p2: SphericalPoint<T>) -> T {
    let half = T::lit(0.5);
    let dphi = (p2.phi - p1.phi).abs();
    let dtheta = (p2.theta - p1.theta).abs();
    let s_phi = (dphi * half).sin();
    let s_theta = (dtheta * half).sin();
    let a = s_phi * s_phi + p1.phi.cos() * p2.phi.cos() * s_theta * s_theta;
    let a = a.max(T::zero()).min(T::one());
    (T::one() + T::one()) * a.sqrt().asin()
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_matrix<T: Scalar>(e: EulerAngles<T>) -> Rotation3<T> {
    Rotation3::about_z(e.yaw)
        .mul(&Rotation3::about_y(e.pitch))
        .mul(&Rotation3::about_x(e.roll))
}

pub fn rotate_point<T: Scalar>(p: SphericalPoint<T>, r: &Rotation3<T>) -> SphericalPoint<T> {
    SphericalPoint::from_vector(r.apply(sphere_to_unit_vector(p)))
}

/// Distance between `p1` seen from a frame oriented by `e_i` and `p2` seen
/// from a frame oriented by `e_j`; both orientations are relative to the
/// first frame of the route.
pub fn temporal_distance<T: Scalar>(
    p1: SphericalPoint<T>,
    e_i: EulerAngles<T>,
    p2: SphericalPoint<T>,
    e_j: EulerAngles<T>,
) -> T {
    haversine_distance(
        rotate_point(p1, &rotation_matrix(e_i)),
        rotate_point(p2, &rotation_matrix(e_j)),
    )
}

pub(crate) fn dot3<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3<T: Scalar>(a: [T; 3]) -> T {
    dot3(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn grid() -> ErpGrid {
        ErpGrid::new(960, 480).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // independent great-circle distance
    fn acos_dist(p: SphericalPoint<f64>, q: SphericalPoint<f64>) -> f64 {
        dot3(p.to_unit_vector(), q.to_unit_vector()).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn grid_validation() {
        assert!(ErpGrid::new(960, 480).is_ok());
        assert!(ErpGrid::new(961, 480).is_err());
        assert!(ErpGrid::new(0, 480).is_err());
        assert!(ErpGrid::new(4, 1).is_err());
    }

    #[test]
    fn erp_corner_and_center() {
        let p = erp_to_sphere(0.0, 0.0, grid()).unwrap();
        assert_eq!((p.theta, p.phi), (-PI, -FRAC_PI_2));
        let p = erp_to_sphere(480.0, 240.0, grid()).unwrap();
        assert_eq!((p.theta, p.phi), (0.0, 0.0));
        let p = erp_to_sphere(720.0, 120.0, grid()).unwrap();
        assert!(close(p.theta, FRAC_PI_2, 1e-15));
        assert!(close(p.phi, -FRAC_PI_4, 1e-15));
    }

    #[test]
    fn erp_out_of_range_names_coordinate() {
        let err = erp_to_sphere(960.0, 10.0, grid()).unwrap_err().to_string();
        assert!(err.contains("x = 960"), "{err}");
        let err = erp_to_sphere(1.0, -0.5, grid()).unwrap_err().to_string();
        assert!(err.contains("y = -0.5"), "{err}");
        assert!(erp_to_sphere(1.0, 480.0, grid()).is_ok());
    }

    #[test]
    fn erp_is_affine_along_a_line() {
        let g = grid();
        let a = erp_to_sphere(100.0, 50.0, g).unwrap();
        let b = erp_to_sphere(300.0, 150.0, g).unwrap();
        let m = erp_to_sphere(200.0, 100.0, g).unwrap();
        assert!(close(m.theta, 0.5 * (a.theta + b.theta), 1e-12));
        assert!(close(m.phi, 0.5 * (a.phi + b.phi), 1e-12));
    }

    #[test]
    fn longitude_wraps() {
        let p = SphericalPoint::new(PI, 0.0);
        assert_eq!(p.theta, -PI);
        let p = SphericalPoint::new(3.0 * PI + 0.25, 2.0);
        assert!(close(p.theta, -PI + 0.25, 1e-12));
        assert_eq!(p.phi, FRAC_PI_2);
    }

    #[test]
    fn unit_vectors() {
        let v = sphere_to_unit_vector(SphericalPoint::new(0.0, 0.0));
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let v = sphere_to_unit_vector(SphericalPoint::new(FRAC_PI_2, 0.0));
        assert!(close(v[0], 0.0, 1e-15) && close(v[1], 1.0, 1e-15) && v[2] == 0.0);
        let v = sphere_to_unit_vector(SphericalPoint::new(0.0, FRAC_PI_2));
        assert!(close(v[0], 0.0, 1e-15) && close(v[2], 1.0, 1e-15));
    }

    #[test]
    fn haversine_examples() {
        let o = SphericalPoint::new(0.0, 0.0);
        assert_eq!(haversine_distance(o, o), 0.0);
        let anti = SphericalPoint::new(PI - 1e-12, 0.0);
        assert!(close(haversine_distance(o, anti), PI, 1e-6));
        let q = SphericalPoint::new(FRAC_PI_2, 0.0);
        assert!(close(haversine_distance(o, q), acos_dist(o, q), 1e-12));
        assert!(close(haversine_distance(o, q), FRAC_PI_2, 1e-12));
    }

    #[test]
    fn seam_pixels_are_adjacent() {
        let g = grid();
        let left = erp_to_sphere(0.0, 240.0, g).unwrap();
        let right = erp_to_sphere(959.0, 240.0, g).unwrap();
        let d = haversine_distance(left, right);
        assert!(close(d, 2.0 * PI / 960.0, 1e-9));
        assert!(close(d, acos_dist(left, right), 1e-9));
        assert!(close(d, 0.0065449, 1e-7));
    }

    #[test]
    fn wrap_adjacency_every_row() {
        let g = ErpGrid::new(16, 8).unwrap();
        for y in 0..8 {
            let a = pixel_center_to_sphere::<f64>(0, y, g).unwrap();
            let z = pixel_center_to_sphere::<f64>(15, y, g).unwrap();
            let two = pixel_center_to_sphere::<f64>(2, y, g).unwrap();
            assert!(haversine_distance(a, z) < haversine_distance(a, two), "row {y}");
        }
    }

    #[test]
    fn rotation_examples() {
        let r = rotation_matrix(EulerAngles::<f64>::zero());
        assert_eq!(r, Rotation3::identity());
        let r = rotation_matrix(EulerAngles::new(FRAC_PI_2, 0.0, 0.0));
        let v = r.apply([1.0, 0.0, 0.0]);
        assert!(close(v[0], 0.0, 1e-15) && close(v[1], 1.0, 1e-15) && v[2] == 0.0);
        let r = rotation_matrix(EulerAngles::new(PI / 4.0, PI / 3.0, PI / 6.0));
        assert!(r.is_rotation(1e-9));
    }

    #[test]
    fn rotation_order_is_zyx() {
        let e = EulerAngles::new(0.3, -0.7, 1.1);
        let manual = Rotation3::about_z(0.3)
            .mul(&Rotation3::about_y(-0.7))
            .mul(&Rotation3::about_x(1.1));
        assert_eq!(rotation_matrix(e), manual);
    }

    #[test]
    fn euler_round_trip() {
        let e = EulerAngles::new(2.0, -0.4, 0.9);
        let back = rotation_matrix(e).to_euler();
        assert!(close(back.yaw, 2.0, 1e-12));
        assert!(close(back.pitch, -0.4, 1e-12));
        assert!(close(back.roll, 0.9, 1e-12));
    }

    #[test]
    fn rotate_point_examples() {
        let p = SphericalPoint::new(0.4, -0.3);
        assert_eq!(rotate_point(p, &Rotation3::identity()), p);
        let o = SphericalPoint::new(0.0, 0.0);
        let q = rotate_point(o, &rotation_matrix(EulerAngles::new(FRAC_PI_2, 0.0, 0.0)));
        assert!(close(q.theta, FRAC_PI_2, 1e-15) && close(q.phi, 0.0, 1e-15));
        let n = rotate_point(o, &rotation_matrix(EulerAngles::new(0.0, -FRAC_PI_2, 0.0)));
        assert!(close(n.phi, FRAC_PI_2, 1e-15));
    }

    #[test]
    fn pole_longitude_is_zero() {
        let n = SphericalPoint::<f64>::from_vector([0.0, 0.0, 1.0]);
        assert_eq!((n.theta, n.phi), (0.0, FRAC_PI_2));
        let s = SphericalPoint::<f64>::from_vector([-0.0, 0.0, -2.0]);
        assert_eq!((s.theta, s.phi), (0.0, -FRAC_PI_2));
    }

    #[test]
    fn temporal_distance_examples() {
        let p1 = SphericalPoint::new(0.2, 0.1);
        let p2 = SphericalPoint::new(-1.0, 0.5);
        let z = EulerAngles::zero();
        assert_eq!(temporal_distance(p1, z, p2, z), haversine_distance(p1, p2));

        let o = SphericalPoint::new(0.0, 0.0);
        let yawed = EulerAngles::new(FRAC_PI_2, 0.0, 0.0);
        assert!(close(temporal_distance(o, z, o, yawed), FRAC_PI_2, 1e-12));

        let e1 = EulerAngles::new(0.3, 0.2, -0.1);
        let e2 = EulerAngles::new(-0.5, 0.9, 0.4);
        assert_eq!(
            temporal_distance(p1, e1, p2, e2),
            temporal_distance(p2, e2, p1, e1)
        );
    }

    #[test]
    fn works_in_single_precision() {
        let g = grid();
        let p = erp_to_sphere(720.0f32, 120.0, g).unwrap();
        assert!((p.theta - std::f32::consts::FRAC_PI_2).abs() < 1e-6);
        let d = haversine_distance(SphericalPoint::new(0.0f32, 0.0), SphericalPoint::new(1.0, 0.0));
        assert!((d - 1.0).abs() < 1e-6);
    }
}
