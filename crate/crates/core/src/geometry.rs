//! Rigid transforms, the se(3) exponential/logarithm, planar poses and the
//! pinhole camera.
//!
//! Rotations are stored as plain 3x3 matrices. Increments are applied on the
//! left, `T <- exp(dxi) * T`, so the derivative of a transformed point `p'`
//! with respect to the increment is `[I, -p'^]`.

use std::ops::Mul;

use nalgebra::{Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::scalar::Real;

/// Projections with depth at or below this value are rejected (meters).
pub const Z_MIN: f64 = 0.05;

/// Frobenius drift of `R^T R` above which rotations are re-orthonormalized.
const ORTHO_TOL: f64 = 1e-9;

/// `log` refuses rotation angles this close to pi.
const LOG_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} too close to pi for a unique logarithm")]
    LogNearPi { angle: f64 },
    #[error("point depth {z} is at or below the minimum projection depth")]
    BehindCamera { z: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Skew-symmetric matrix of `v`, so that `hat(v) * w == v.cross(&w)`.
#[rustfmt::skip]
pub fn hat<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(
        z,     -v.z,  v.y,
        v.z,    z,   -v.x,
        -v.y,   v.x,  z,
    )
}

fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m.m32, m.m13, m.m21)
}

/// Element of se(3): translational part `rho` then rotational part `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<T: Real> {
    pub rho: Vector3<T>,
    pub phi: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(rho: Vector3<T>, phi: Vector3<T>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> T {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Rotation matrix of the rotation vector `phi` (Rodrigues).
pub fn so3_exp<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let k2 = k * k;
    let (a, b) = if theta2 < T::lit(1e-8) {
        (
            T::one() - theta2 / T::lit(6.0),
            T::lit(0.5) - theta2 / T::lit(24.0),
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k2 * b
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let k2 = k * k;
    let (b, c) = if theta2 < T::lit(1e-8) {
        (
            T::lit(0.5) - theta2 / T::lit(24.0),
            T::lit(1.0 / 6.0) - theta2 / T::lit(120.0),
        )
    } else {
        let theta = theta2.sqrt();
        (
            (T::one() - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * b + k2 * c
}

/// Nearest rotation in the Frobenius sense (polar decomposition).
fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

fn ortho_drift<T: Real>(r: &Matrix3<T>) -> T {
    (r.transpose() * r - Matrix3::identity()).norm()
}

fn ortho_tol<T: Real>() -> T {
    let floor = T::default_epsilon() * T::lit(64.0);
    let tol = T::lit(ORTHO_TOL);
    if tol > floor {
        tol
    } else {
        floor
    }
}

/// Rigid transform in 3-D. Applied to a point as `R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for Pose3<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose3<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting `rotation` back onto SO(3) if it has drifted.
    pub fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        let rotation = if ortho_drift(&rotation) > ortho_tol::<T>() {
            orthonormalize(&rotation)
        } else {
            rotation
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: T) -> Self {
        Self {
            rotation: so3_exp(&Vector3::new(T::zero(), T::zero(), yaw)),
            translation: Vector3::zeros(),
        }
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn exp(xi: &Twist<T>) -> Self {
        Self {
            rotation: so3_exp(&xi.phi),
            translation: so3_left_jacobian(&xi.phi) * xi.rho,
        }
    }

    /// Inverse of [`Pose3::exp`]. Fails when the rotation angle is within
    /// 1e-6 of pi, where the axis is no longer unique.
    pub fn log(&self) -> Result<Twist<T>, GeometryError> {
        let r = &self.rotation;
        let skew = vee(&(r - r.transpose())) * T::lit(0.5);
        let sin_theta = skew.norm();
        let cos_theta = (r.trace() - T::one()) * T::lit(0.5);
        let theta = sin_theta.atan2(cos_theta);
        if theta >= T::pi() - T::lit(LOG_PI_MARGIN) {
            return Err(GeometryError::LogNearPi {
                angle: theta.to_f64_lossy(),
            });
        }
        let theta2 = theta * theta;
        let scale = if theta2 < T::lit(1e-8) {
            T::one() + theta2 / T::lit(6.0)
        } else {
            theta / sin_theta
        };
        let phi = skew * scale;
        let k = hat(&phi);
        let coeff = if theta2 < T::lit(1e-8) {
            T::lit(1.0 / 12.0) + theta2 / T::lit(720.0)
        } else {
            (T::one() - theta * sin_theta / (T::lit(2.0) * (T::one() - cos_theta))) / theta2
        };
        let v_inv = Matrix3::identity() - k * T::lit(0.5) + k * k * coeff;
        Ok(Twist::new(v_inv * self.translation, phi))
    }

    /// Left-multiplies by `exp(delta)`.
    pub fn retract(&self, delta: &Twist<T>) -> Self {
        Self::exp(delta).compose(self)
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Angle of the relative rotation `self^-1 * other`, radians.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        let rel = self.rotation.transpose() * other.rotation;
        let c = (rel.trace() - T::one()) * T::lit(0.5);
        let s = vee(&(rel - rel.transpose())).norm() * T::lit(0.5);
        s.atan2(c)
    }

    pub fn orthonormality_error(&self) -> T {
        ortho_drift(&self.rotation)
    }

    /// Largest absolute entry difference of the 3x4 matrices.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        if dr > dt {
            dr
        } else {
            dt
        }
    }

    pub fn cast<U: Real>(&self) -> Pose3<U> {
        Pose3 {
            rotation: self.rotation.map(|x| U::lit(x.to_f64_lossy())),
            translation: self.translation.map(|x| U::lit(x.to_f64_lossy())),
        }
    }
}

impl<T: Real> Mul for Pose3<T> {
    type Output = Pose3<T>;

    fn mul(self, rhs: Self) -> Self::Output {
        self.compose(&rhs)
    }
}

impl<'a, T: Real> Mul<&'a Pose3<T>> for &'a Pose3<T> {
    type Output = Pose3<T>;

    fn mul(self, rhs: &'a Pose3<T>) -> Self::Output {
        self.compose(rhs)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Planar pose; `theta` is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// `self^-1 * other`: `other` expressed in this pose's frame.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Lifts to 3-D as a yaw rotation with zero height.
    pub fn to_pose3(&self) -> Pose3<f64> {
        let mut p = Pose3::from_yaw(self.theta);
        p.translation = Vector3::new(self.x, self.y, 0.0);
        p
    }

    /// Planar projection of a 3-D pose (yaw from the rotated x axis).
    pub fn from_pose3(p: &Pose3<f64>) -> Pose2 {
        let r = &p.rotation;
        Pose2::new(p.translation.x, p.translation.y, r.m21.atan2(r.m11))
    }
}

/// Pinhole camera intrinsics. Pixel `(u, v)` with `u` along image columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive",
            ));
        }
        let (w, h) = (T::lit(width as f64), T::lit(height as f64));
        if !(cx >= T::zero() && cx < w && cy >= T::zero() && cy < h) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the image",
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn project(&self, p: &Vector3<T>) -> Result<Vector2<T>, GeometryError> {
        if p.z <= T::lit(Z_MIN) {
            return Err(GeometryError::BehindCamera {
                z: p.z.to_f64_lossy(),
            });
        }
        Ok(self.project_unchecked(p))
    }

    pub(crate) fn project_unchecked(&self, p: &Vector3<T>) -> Vector2<T> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Derivative of the projected pixel with respect to the camera-frame point.
    #[rustfmt::skip]
    pub fn project_jacobian(&self, p: &Vector3<T>) -> Matrix2x3<T> {
        let iz = T::one() / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz, T::zero(),   -self.fx * p.x * iz2,
            T::zero(),   self.fy * iz, -self.fy * p.y * iz2,
        )
    }

    pub fn contains(&self, px: &Vector2<T>) -> bool {
        px.x >= T::zero()
            && px.y >= T::zero()
            && px.x < T::lit(self.width as f64)
            && px.y < T::lit(self.height as f64)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
            width: self.width,
            height: self.height,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    type P = Pose3<f64>;

    fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> P {
        let phi = Vector3::from_fn(|_, _| rng.random_range(-rot..rot));
        let t = Vector3::from_fn(|_, _| rng.random_range(-trans..trans));
        P::from_parts(so3_exp(&phi), t)
    }

    // Independent of the crate's compose: plain 4x4 products.
    fn homogeneous_fold(poses: &[P]) -> Matrix4<f64> {
        poses
            .iter()
            .fold(Matrix4::identity(), |acc, p| acc * p.to_homogeneous())
    }

    #[test]
    fn compose_identity() {
        assert_eq!(P::identity().compose(&P::identity()), P::identity());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = random_pose(&mut rng, 3.0, 10.0);
            assert!(t.compose(&t.inverse()).max_abs_diff(&P::identity()) < 1e-12);
        }
    }

    #[test]
    fn compose_matches_matrix_product_over_long_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let poses: Vec<P> = (0..100).map(|_| random_pose(&mut rng, 0.1, 0.5)).collect();
        let folded = poses.iter().fold(P::identity(), |acc, p| acc.compose(p));
        let oracle = homogeneous_fold(&poses);
        assert!((folded.to_homogeneous() - oracle).abs().max() < 1e-9);
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (a, b, c) = (
                random_pose(&mut rng, 3.0, 5.0),
                random_pose(&mut rng, 3.0, 5.0),
                random_pose(&mut rng, 3.0, 5.0),
            );
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!(l.max_abs_diff(&r) < 1e-9);
        }
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(P::identity().inverse(), P::identity());
        let t = P::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.inverse().translation, Vector3::new(-1.0, -2.0, -3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let t = random_pose(&mut rng, 3.0, 10.0);
            let oracle = t.to_homogeneous().try_inverse().unwrap();
            assert!((t.inverse().to_homogeneous() - oracle).abs().max() < 1e-12);
        }
    }

    #[test]
    fn exp_simple_cases() {
        assert_eq!(P::exp(&Twist::zero()), P::identity());
        let t = P::exp(&Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()));
        assert!(t.max_abs_diff(&P::from_translation(Vector3::new(1.0, 0.0, 0.0))) < 1e-15);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let limit = PI - 1e-3;
        for _ in 0..1000 {
            let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64)).normalize();
            let angle = rng.random_range(0.0..limit);
            let xi = Twist::new(
                Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                dir * angle,
            );
            let back = P::exp(&xi).log().unwrap();
            assert!(
                (back.to_vector() - xi.to_vector()).abs().max() < 1e-9,
                "{xi:?} -> {back:?}"
            );
        }
    }

    #[test]
    fn log_small_angles() {
        let xi = Twist::new(
            Vector3::new(0.3, -0.2, 0.1),
            Vector3::new(1e-7, -2e-7, 3e-8),
        );
        let back = P::exp(&xi).log().unwrap();
        assert!((back.to_vector() - xi.to_vector()).abs().max() < 1e-14);
    }

    #[test]
    fn log_near_pi_is_domain_error() {
        let t = P::exp(&Twist::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, PI - 1e-8),
        ));
        assert!(matches!(t.log(), Err(GeometryError::LogNearPi { .. })));
    }

    #[test]
    fn transform_point_cases() {
        let p = Vector3::new(0.4, -1.0, 2.0);
        assert_eq!(P::identity().transform_point(&p), p);
        let yaw = P::from_yaw(FRAC_PI_2);
        let q = yaw.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((q - Vector3::new(0.0, 1.0, 0.0)).abs().max() < 1e-12);
    }

    #[test]
    fn transform_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let t = random_pose(&mut rng, 3.0, 10.0);
            let a = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let b = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let before = ((a - b).map(|x: f64| x * x)).sum().sqrt();
            let after = (t.transform_point(&a) - t.transform_point(&b)).norm();
            assert!((before - after).abs() < 1e-9);
        }
    }

    #[test]
    fn drifted_rotation_is_reorthonormalized() {
        let mut r = so3_exp(&Vector3::new(0.1, 0.2, 0.3));
        r[(0, 1)] += 1e-6;
        let p = P::from_parts(r, Vector3::zeros());
        assert!(p.orthonormality_error() < 1e-12);
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    fn cam() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn project_cases() {
        let px = cam().project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(50.0, 50.0));
        let px = cam().project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px.x, 100.0);
        assert!(cam().project(&Vector3::new(0.0, 0.0, 0.05)).is_err());
        assert!(cam().project(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::new(380.0, 370.0, 320.0, 240.0, 640, 480).unwrap();
        let h = 1e-6;
        for _ in 0..500 {
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.2..8.0),
            );
            let analytic: Matrix2x3<f64> = k.project_jacobian(&p);
            for j in 0..3 {
                let mut dp = Vector3::zeros();
                dp[j] = h;
                let fd: Vector2<f64> =
                    (k.project(&(p + dp)).unwrap() - k.project(&(p - dp)).unwrap()) / (2.0 * h);
                for i in 0..2 {
                    assert!((analytic[(i, j)] - fd[i]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn pose2_round_trips_through_pose3() {
        let p = Pose2::new(1.0, -2.0, 3.0);
        let back = Pose2::from_pose3(&p.to_pose3());
        assert!((back.x - p.x).abs() < 1e-15 && (back.theta - p.theta).abs() < 1e-15);
        let q = Pose2::new(0.5, 0.2, -1.0);
        let rel = p.between(&p.compose(&q));
        assert!((rel.x - q.x).abs() < 1e-12 && (rel.y - q.y).abs() < 1e-12);
        assert!((rel.theta - q.theta).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn f32_poses_work() {
        let a = Pose3::<f32>::exp(&Twist::new(
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(0.3, -0.1, 0.2),
        ));
        let id = a.compose(&a.inverse());
        assert!(id.max_abs_diff(&Pose3::identity()) < 1e-6);
    }
}
