//! Rotation algebra and frame conventions.
//!
//! Quaternions are Hamilton, scalar-first (`nalgebra::UnitQuaternion`).
//! A body orientation quaternion `q` maps vectors expressed in the body
//! frame into the reference frame: `v_ref = q * v_body`. The attitude
//! kinematics `q̇ = ½ q ⊗ (0, ω)` with body rate `ω` is the Hamilton form of
//! the JPL law `q̄̇ = ½ Ω(ω) q̄` written for the conjugate (reference to body)
//! quaternion; both describe the same motion.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{invalid, Result};

pub type Quat = UnitQuaternion<f64>;
pub type Rot3 = Rotation3<f64>;

/// Skew-symmetric cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential of a rotation vector.
pub fn exp_so3(phi: &Vector3<f64>) -> Quat {
    Quat::from_scaled_axis(*phi)
}

/// SO(3) logarithm, the rotation vector in (-π, π].
pub fn log_so3(q: &Quat) -> Vector3<f64> {
    q.scaled_axis()
}

/// Left Jacobian of SO(3), equal to `∫₀¹ Exp(s·φ) ds`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    Matrix3::identity()
        + (1.0 - theta.cos()) / theta2 * k
        + (theta - theta.sin()) / (theta2 * theta) * k * k
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ) Exp(J_r(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-phi)
}

/// Advance an orientation by a constant body rate over `dt`.
///
/// Zeroth-order hold on `ω`: the result is the closed-form solution
/// `q ⊗ Exp(ω·dt)`, exact for piecewise-constant rates, then renormalized.
pub fn quat_integrate(q: &Quat, omega: &Vector3<f64>, dt: f64) -> Result<Quat> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(invalid(format!(
            "dt must be finite and non-negative, got {dt}"
        )));
    }
    if !omega.iter().all(|w| w.is_finite()) || !q.coords.iter().all(|c| c.is_finite()) {
        return Err(invalid("non-finite quaternion or angular rate"));
    }
    let mut out = q * exp_so3(&(omega * dt));
    out.renormalize();
    Ok(out)
}

/// Yaw-pitch-roll angles composing `Rz(yaw) · Ry(pitch) · Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EulerZYX {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// One of the three Euler angles of [`EulerZYX`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerAxis {
    Yaw,
    Pitch,
    Roll,
}

impl EulerZYX {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(yaw.to_radians(), pitch.to_radians(), roll.to_radians())
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.yaw.to_degrees(),
            self.pitch.to_degrees(),
            self.roll.to_degrees(),
        ]
    }

    pub fn get(&self, axis: EulerAxis) -> f64 {
        match axis {
            EulerAxis::Yaw => self.yaw,
            EulerAxis::Pitch => self.pitch,
            EulerAxis::Roll => self.roll,
        }
    }

    pub fn get_mut(&mut self, axis: EulerAxis) -> &mut f64 {
        match axis {
            EulerAxis::Yaw => &mut self.yaw,
            EulerAxis::Pitch => &mut self.pitch,
            EulerAxis::Roll => &mut self.roll,
        }
    }

    pub fn to_rotation(&self) -> Rot3 {
        euler_zyx_to_rotation(self)
    }

    /// Inverse of [`euler_zyx_to_rotation`]; pitch is returned in [-π/2, π/2].
    pub fn from_rotation(r: &Rot3) -> Self {
        let m = r.matrix();
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        Self { yaw, pitch, roll }
    }

    /// Derivative of the composed rotation matrix with respect to one angle.
    pub fn rotation_derivative(&self, axis: EulerAxis) -> Matrix3<f64> {
        let (z, y, x) = (rot_z(self.yaw), rot_y(self.pitch), rot_x(self.roll));
        match axis {
            EulerAxis::Yaw => d_rot_z(self.yaw) * y * x,
            EulerAxis::Pitch => z * d_rot_y(self.pitch) * x,
            EulerAxis::Roll => z * y * d_rot_x(self.roll),
        }
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn euler_zyx_to_rotation(e: &EulerZYX) -> Rot3 {
    Rot3::from_matrix_unchecked(rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll))
}

/// Wrap an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Re-orthonormalize a matrix that should be a rotation.
pub fn orthonormalize(m: &Matrix3<f64>) -> Rot3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    Rot3::from_matrix_unchecked(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn axis_angle(axis: Vector3<f64>, angle: f64) -> Quat {
        Quat::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
    }

    #[test]
    fn zero_rate_is_identity() {
        let q = axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7);
        let out = quat_integrate(&q, &Vector3::zeros(), 1.0).unwrap();
        assert_relative_eq!(out.coords, q.coords, epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let out =
            quat_integrate(&Quat::identity(), &Vector3::new(0.0, 0.0, FRAC_PI_2), 1.0).unwrap();
        let expected = axis_angle(Vector3::z(), FRAC_PI_2);
        assert!(out.angle_to(&expected) < 1e-12);
        // body x ends up along reference y
        assert_relative_eq!(out * Vector3::x(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn repeated_small_steps_match_closed_form() {
        let mut q = Quat::identity();
        for _ in 0..100 {
            q = quat_integrate(&q, &Vector3::new(0.0, 0.0, 0.1), 0.01).unwrap();
        }
        let expected = axis_angle(Vector3::z(), 0.1 * 0.01 * 100.0);
        assert!(q.angle_to(&expected) < 1e-6);
        assert_relative_eq!(q.euler_angles().2, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let q = Quat::identity();
        assert!(quat_integrate(&q, &Vector3::new(f64::NAN, 0.0, 0.0), 0.1).is_err());
        assert!(quat_integrate(&q, &Vector3::zeros(), f64::INFINITY).is_err());
        assert!(quat_integrate(&q, &Vector3::zeros(), -0.1).is_err());
    }

    #[test]
    fn skew_basis_and_zero() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(skew(&Vector3::x()), expected);
    }

    #[test]
    fn euler_examples() {
        assert_relative_eq!(
            *euler_zyx_to_rotation(&EulerZYX::default()).matrix(),
            Matrix3::identity(),
            epsilon = 1e-15
        );
        let yaw = euler_zyx_to_rotation(&EulerZYX::new(FRAC_PI_2, 0.0, 0.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*yaw.matrix(), expected, epsilon = 1e-15);
    }

    #[test]
    fn hamilton_convention_pinned() {
        // A 90° yaw written both ways must agree with the Euler composition.
        let q = exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let r = euler_zyx_to_rotation(&EulerZYX::new(FRAC_PI_2, 0.0, 0.0));
        assert_relative_eq!(
            *q.to_rotation_matrix().matrix(),
            *r.matrix(),
            epsilon = 1e-15
        );
        assert_relative_eq!(q.w, (FRAC_PI_2 / 2.0).cos(), epsilon = 1e-15);
    }

    #[test]
    fn left_jacobian_is_integral_of_exponential() {
        let phi = Vector3::new(0.3, -0.8, 1.1);
        let n = 2000;
        let mut acc = Matrix3::zeros();
        // Simpson's rule on s ∈ [0, 1]
        for i in 0..=n {
            let s = i as f64 / n as f64;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * exp_so3(&(phi * s)).to_rotation_matrix().into_inner();
        }
        acc /= 3.0 * n as f64;
        assert_relative_eq!(left_jacobian(&phi), acc, epsilon = 1e-10);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(
            wrap_angle(3.0 * std::f64::consts::PI),
            std::f64::consts::PI,
            epsilon = 1e-12
        );
        assert_relative_eq!(wrap_angle(-0.1), -0.1);
        assert_relative_eq!(
            wrap_angle(7.0),
            7.0 - std::f64::consts::TAU,
            epsilon = 1e-12
        );
    }

    fn rk4_step(q: &Quat, w: &Vector3<f64>, dt: f64) -> nalgebra::Quaternion<f64> {
        let f = |q: nalgebra::Quaternion<f64>| q * nalgebra::Quaternion::from_imag(*w) * 0.5;
        let q0 = *q.quaternion();
        let k1 = f(q0);
        let k2 = f(q0 + k1 * (dt / 2.0));
        let k3 = f(q0 + k2 * (dt / 2.0));
        let k4 = f(q0 + k3 * dt);
        q0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    proptest! {
        #[test]
        fn integrate_keeps_unit_norm(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..3.0,
            w in prop::array::uniform3(-5.0f64..5.0),
            dt in 0.0f64..2.0,
        ) {
            let q = Quat::from_scaled_axis(Vector3::from(axis) * angle);
            let out = quat_integrate(&q, &Vector3::from(w), dt).unwrap();
            prop_assert!((out.coords.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn integrate_agrees_with_rk4(
            axis in prop::array::uniform3(-1.0f64..1.0),
            w in prop::array::uniform3(-2.0f64..2.0),
            dt in 1e-4f64..0.05,
        ) {
            let q = Quat::from_scaled_axis(Vector3::from(axis));
            let w = Vector3::from(w);
            let closed = quat_integrate(&q, &w, dt).unwrap();
            let rk = rk4_step(&q, &w, dt);
            prop_assert!((closed.quaternion() - rk).norm() < 10.0 * dt * dt);
        }

        #[test]
        fn skew_matches_cross(v in prop::array::uniform3(-10.0f64..10.0), w in prop::array::uniform3(-10.0f64..10.0)) {
            let (v, w) = (Vector3::from(v), Vector3::from(w));
            prop_assert!((skew(&v) * w - v.cross(&w)).norm() < 1e-12);
            prop_assert_eq!(skew(&v).transpose(), -skew(&v));
        }

        #[test]
        fn euler_is_orthonormal_and_matches_axis_angles(
            yaw in -3.1f64..3.1, pitch in -1.5f64..1.5, roll in -3.1f64..3.1,
        ) {
            let e = EulerZYX::new(yaw, pitch, roll);
            let r = euler_zyx_to_rotation(&e);
            let m = r.matrix();
            prop_assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
            let composed = axis_angle(Vector3::z(), yaw) * axis_angle(Vector3::y(), pitch) * axis_angle(Vector3::x(), roll);
            prop_assert!((composed.to_rotation_matrix().matrix() - m).norm() < 1e-12);
        }

        #[test]
        fn euler_round_trip(yaw in -3.1f64..3.1, pitch in -1.569f64..1.569, roll in -3.1f64..3.1) {
            prop_assume!(pitch.abs() < std::f64::consts::FRAC_PI_2 - 1e-3);
            let e = EulerZYX::new(yaw, pitch, roll);
            let back = EulerZYX::from_rotation(&e.to_rotation());
            prop_assert!((wrap_angle(back.yaw - yaw)).abs() < 1e-9);
            prop_assert!((back.pitch - pitch).abs() < 1e-9);
            prop_assert!((wrap_angle(back.roll - roll)).abs() < 1e-9);
        }

        #[test]
        fn rotation_derivative_matches_finite_differences(
            yaw in -3.0f64..3.0, pitch in -1.4f64..1.4, roll in -3.0f64..3.0,
        ) {
            let e = EulerZYX::new(yaw, pitch, roll);
            for axis in [EulerAxis::Yaw, EulerAxis::Pitch, EulerAxis::Roll] {
                let h = 1e-6;
                let (mut ep, mut em) = (e, e);
                *ep.get_mut(axis) += h;
                *em.get_mut(axis) -= h;
                let fd = (ep.to_rotation().into_inner() - em.to_rotation().into_inner()) / (2.0 * h);
                prop_assert!((fd - e.rotation_derivative(axis)).norm() < 1e-8);
            }
        }
    }
}
