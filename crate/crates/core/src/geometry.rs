//! 3-vectors, rotations and the point-to-segment projection used by the
//! influence kernel.
//!
//! Only the handful of 3×3 and quaternion operations the model needs live
//! here. Everything is `Copy` and pure.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or displacement in a local metric frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub type Vec3 = Point3;

impl Point3 {
    pub const ZERO: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    /// Horizontal (x, y) distance, ignoring height.
    pub fn distance_2d(self, other: Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn ensure_finite(self, what: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::invalid(format!("{what} has non-finite components: {self}")))
        }
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Point3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        self.scale(k)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diagonal(d: [f64; 3]) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn transpose_mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn matmul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        worst
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }
}

/// Rotation quaternion `(w, x, y, z)` kept at unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes `(w, x, y, z)` onto the unit sphere.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::invalid(format!(
                "quaternion has non-finite components: ({w}, {x}, {y}, {z})"
            )));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 {
            return Err(Error::invalid("quaternion has zero norm"));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Takes components verbatim; the caller has checked the norm.
    pub(crate) fn from_stored(a: [f64; 4]) -> Self {
        Self {
            w: a[0],
            x: a[1],
            y: a[2],
            z: a[3],
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::invalid("rotation axis must be finite and non-zero"));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis.scale(s / n);
        Self::new(c, a.x, a.y, a.z)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Hamilton product `self ⊗ rhs` (apply `rhs` first, then `self`).
    pub fn compose(&self, rhs: &UnitQuaternion) -> UnitQuaternion {
        let (a, b) = (self, rhs);
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        // Product of unit quaternions; renormalize away drift.
        UnitQuaternion::new(w, x, y, z).expect("product of unit quaternions is finite")
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_rotation(self)
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.rotation().mul_vec(v)
    }

    /// Partial derivatives of the rotation-matrix entries with respect to
    /// `w`, `x`, `y`, `z`, evaluated at this quaternion.
    pub fn rotation_jacobian(&self) -> [Mat3; 4] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let d = |v: f64| 2.0 * v;
        [
            Mat3([
                [0.0, -d(z), d(y)],
                [d(z), 0.0, -d(x)],
                [-d(y), d(x), 0.0],
            ]),
            Mat3([
                [0.0, d(y), d(z)],
                [d(y), -2.0 * d(x), -d(w)],
                [d(z), d(w), -2.0 * d(x)],
            ]),
            Mat3([
                [-2.0 * d(y), d(x), d(w)],
                [d(x), 0.0, d(z)],
                [-d(w), d(z), -2.0 * d(y)],
            ]),
            Mat3([
                [-2.0 * d(z), -d(w), d(x)],
                [d(w), -2.0 * d(z), d(y)],
                [d(x), d(y), 0.0],
            ]),
        ]
    }
}

/// Standard unit-quaternion rotation matrix.
pub fn quat_to_rotation(q: &UnitQuaternion) -> Mat3 {
    let UnitQuaternion { w, x, y, z } = *q;
    Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Default lower clamp for Gaussian scales (meters).
pub const DEFAULT_SCALE_MIN: f64 = 0.1;
/// Default upper clamp for Gaussian scales (meters).
pub const DEFAULT_SCALE_MAX: f64 = 10_000.0;

/// Per-axis Gaussian extent stored as natural logs of meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScale3(pub [f64; 3]);

impl LogScale3 {
    pub fn from_scales(s: [f64; 3]) -> Result<Self> {
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("scales must be positive and finite: {s:?}")));
        }
        Ok(Self([s[0].ln(), s[1].ln(), s[2].ln()]))
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Self::from_scales([s; 3])
    }

    pub fn scales(&self) -> [f64; 3] {
        self.0.map(f64::exp)
    }

    pub fn clamp(&mut self, s_min: f64, s_max: f64) {
        let (lo, hi) = (s_min.ln(), s_max.ln());
        for v in &mut self.0 {
            *v = v.clamp(lo, hi);
        }
    }
}

/// `Σ = R S² Rᵀ`.
pub fn build_covariance(s: &LogScale3, q: &UnitQuaternion) -> Mat3 {
    let r = q.rotation();
    let sq = s.scales().map(|v| v * v);
    let rs = r.matmul(&Mat3::diagonal(sq));
    let mut cov = rs.matmul(&r.transpose());
    // Symmetrize exactly; the two triangles differ only by rounding.
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = 0.5 * (cov.0[i][j] + cov.0[j][i]);
            cov.0[i][j] = avg;
            cov.0[j][i] = avg;
        }
    }
    cov
}

/// Closest approach of a point to the Tx→Rx line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentProjection {
    /// Signed distance from `tx` along the Tx→Rx direction.
    pub l_proj: f64,
    pub p_line: Point3,
    /// `p_line − μ`.
    pub delta: Vec3,
    /// Link length `‖rx − tx‖`.
    pub length: f64,
    /// `0 < l_proj < length`.
    pub relevant: bool,
}

pub fn project_point_onto_segment(tx: Point3, rx: Point3, mu: Point3) -> Result<SegmentProjection> {
    tx.ensure_finite("tx")?;
    rx.ensure_finite("rx")?;
    mu.ensure_finite("mu")?;
    let v = rx - tx;
    let d = v.norm();
    if d == 0.0 {
        return Err(Error::DegenerateSegment(tx));
    }
    Ok(project_unchecked(tx, v.scale(1.0 / d), d, mu))
}

/// Projection for a precomputed unit direction `u` and length `d > 0`.
#[inline]
pub(crate) fn project_unchecked(tx: Point3, u: Vec3, d: f64, mu: Point3) -> SegmentProjection {
    let w = mu - tx;
    let l_proj = w.dot(u);
    let p_line = tx + u.scale(l_proj);
    SegmentProjection {
        l_proj,
        p_line,
        delta: p_line - mu,
        length: d,
        relevant: 0.0 < l_proj && l_proj < d,
    }
}

/// `Rᵀ δ`: a world-frame displacement expressed in the Gaussian's local axes.
pub fn local_displacement(delta: Vec3, q: &UnitQuaternion) -> Vec3 {
    q.rotation().transpose_mul_vec(delta)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_4;

    use proptest::prelude::*;

    use super::*;

    fn rot_z_90() -> UnitQuaternion {
        UnitQuaternion::new(FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin()).unwrap()
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotation(&UnitQuaternion::IDENTITY);
        assert_eq!(r, Mat3::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = rot_z_90().rotation();
        let out = r.mul_vec(Vec3::new(1.0, 0.0, 0.0));
        assert!(close(out, Vec3::new(0.0, 1.0, 0.0), 1e-15), "{out}");
    }

    #[test]
    fn non_finite_quaternion_is_rejected() {
        assert!(matches!(
            UnitQuaternion::new(f64::NAN, 0.0, 0.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(UnitQuaternion::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn covariance_examples() {
        let s = LogScale3::from_scales([2.0, 3.0, 4.0]).unwrap();
        let cov = build_covariance(&s, &UnitQuaternion::IDENTITY);
        assert!(cov.max_abs_diff(&Mat3::diagonal([4.0, 9.0, 16.0])) < 1e-12);

        let s = LogScale3::from_scales([1.0, 2.0, 1.0]).unwrap();
        let cov = build_covariance(&s, &rot_z_90());
        assert!(cov.max_abs_diff(&Mat3::diagonal([4.0, 1.0, 1.0])) < 1e-12, "{cov:?}");

        let q = UnitQuaternion::new(0.3, -0.2, 0.9, 0.1).unwrap();
        let s = LogScale3::isotropic(2.5).unwrap();
        let cov = build_covariance(&s, &q);
        assert!(cov.max_abs_diff(&Mat3::diagonal([6.25; 3])) < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let tx = Point3::ZERO;
        let rx = Point3::new(10.0, 0.0, 0.0);

        let p = project_point_onto_segment(tx, rx, Point3::new(5.0, 3.0, 0.0)).unwrap();
        assert_eq!(p.l_proj, 5.0);
        assert_eq!(p.p_line, Point3::new(5.0, 0.0, 0.0));
        assert_eq!(p.delta, Vec3::new(0.0, -3.0, 0.0));
        assert!(p.relevant);

        let p = project_point_onto_segment(tx, rx, Point3::new(-2.0, 1.0, 0.0)).unwrap();
        assert_eq!(p.l_proj, -2.0);
        assert!(!p.relevant);

        let p = project_point_onto_segment(tx, rx, rx).unwrap();
        assert_eq!(p.l_proj, 10.0);
        assert!(!p.relevant, "endpoint must be excluded");
    }

    #[test]
    fn coincident_endpoints_are_degenerate() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert!(matches!(
            project_point_onto_segment(p, p, Point3::ZERO),
            Err(Error::DegenerateSegment(_))
        ));
    }

    #[test]
    fn local_displacement_examples() {
        let d = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(local_displacement(d, &UnitQuaternion::IDENTITY), d);
        let out = local_displacement(Vec3::new(0.0, -3.0, 0.0), &rot_z_90());
        assert!(close(out, Vec3::new(-3.0, 0.0, 0.0), 1e-15), "{out}");
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let q = UnitQuaternion::new(0.7, -0.3, 0.5, 0.2).unwrap();
        let jac = q.rotation_jacobian();
        let raw = q.to_array();
        let h = 1e-6;
        for (k, analytic) in jac.iter().enumerate() {
            // The matrix formula is polynomial in the raw components.
            let eval = |sign: f64| {
                let mut a = raw;
                a[k] += sign * h;
                quat_to_rotation(&UnitQuaternion {
                    w: a[0],
                    x: a[1],
                    y: a[2],
                    z: a[3],
                })
            };
            let (p, m) = (eval(1.0), eval(-1.0));
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (p.0[i][j] - m.0[i][j]) / (2.0 * h);
                    assert!((fd - analytic.0[i][j]).abs() < 1e-8, "k={k} ({i},{j})");
                }
            }
        }
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-500.0..500.0f64, -500.0..500.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new(w, x, y, z).unwrap())
    }

    proptest! {
        #[test]
        fn rotation_is_proper_orthogonal(q in arb_quat()) {
            let r = q.rotation();
            prop_assert!(r.transpose().matmul(&r).max_abs_diff(&Mat3::IDENTITY) < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn local_displacement_preserves_norm(q in arb_quat(), d in arb_point()) {
            let out = local_displacement(d, &q);
            prop_assert!((out.norm() - d.norm()).abs() < 1e-12 * (1.0 + d.norm()));
        }

        #[test]
        fn covariance_is_symmetric_with_squared_scale_spectrum(
            q in arb_quat(),
            s in (0.1..50.0f64, 0.1..50.0f64, 0.1..50.0f64),
        ) {
            let ls = LogScale3::from_scales([s.0, s.1, s.2]).unwrap();
            let cov = build_covariance(&ls, &q);
            prop_assert!(cov.max_abs_diff(&cov.transpose()) < 1e-12);
            // Rotated axes are eigenvectors with eigenvalues s².
            let r = q.rotation();
            let sc = ls.scales();
            for k in 0..3 {
                let axis = r.column(k);
                let image = cov.mul_vec(axis);
                let tol = 1e-9 * sc[0].max(sc[1]).max(sc[2]).powi(2);
                prop_assert!((image - axis.scale(sc[k] * sc[k])).norm() < tol);
                prop_assert!(sc[k] * sc[k] >= DEFAULT_SCALE_MIN * DEFAULT_SCALE_MIN);
            }
        }

        #[test]
        fn delta_is_orthogonal_to_link(tx in arb_point(), rx in arb_point(), mu in arb_point()) {
            prop_assume!(tx.distance(rx) > 1e-3);
            let p = project_point_onto_segment(tx, rx, mu).unwrap();
            let v = rx - tx;
            prop_assert!(p.delta.dot(v).abs() <= 1e-9 * v.norm() * p.delta.norm().max(1.0));
        }

        #[test]
        fn swapping_endpoints_mirrors_projection(tx in arb_point(), rx in arb_point(), mu in arb_point()) {
            prop_assume!(tx.distance(rx) > 1e-3);
            let a = project_point_onto_segment(tx, rx, mu).unwrap();
            let b = project_point_onto_segment(rx, tx, mu).unwrap();
            let scale = 1e-9 * (1.0 + a.length + mu.norm() + tx.norm());
            prop_assert!((b.l_proj - (a.length - a.l_proj)).abs() < scale);
            prop_assert!((a.p_line - b.p_line).norm() < scale);
            prop_assert!((a.delta - b.delta).norm() < scale);
            // The gate may only flip when the projection sits on an endpoint.
            if (a.l_proj.abs() > scale) && ((a.length - a.l_proj).abs() > scale) {
                prop_assert_eq!(a.relevant, b.relevant);
            }
        }

        #[test]
        fn rigid_motion_preserves_projection(
            tx in arb_point(), rx in arb_point(), mu in arb_point(),
            q in arb_quat(), t in arb_point(),
        ) {
            prop_assume!(tx.distance(rx) > 1e-3);
            let a = project_point_onto_segment(tx, rx, mu).unwrap();
            let m = |p: Point3| q.rotate(p) + t;
            let b = project_point_onto_segment(m(tx), m(rx), m(mu)).unwrap();
            let scale = 1e-9 * (1.0 + a.length + mu.norm() + tx.norm() + t.norm());
            prop_assert!((a.l_proj - b.l_proj).abs() < scale);
            prop_assert!((a.delta.norm() - b.delta.norm()).abs() < scale);
            prop_assert!((a.length - b.length).abs() < scale);
        }
    }
}
