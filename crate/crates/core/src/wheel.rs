//! Differential-drive wheel odometry: encoder ticks to body rates and
//! error-state propagation of the filter.

use nalgebra::{Matrix6, Vector3};

use crate::error::{invalid, Result};
use crate::geometry::{exp_so3, left_jacobian, right_jacobian, skew, Quat};
use crate::state::{FilterState, StateLayout};

/// Tick increments of both wheels over `(t - dt, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelEncoderSample {
    pub t: f64,
    pub dt: f64,
    pub dm_l: f64,
    pub dm_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WheelGeometry {
    /// Encoder resolution, ticks per revolution.
    pub ticks_left: f64,
    pub ticks_right: f64,
    /// Wheel diameters in meters.
    pub diameter_left: f64,
    pub diameter_right: f64,
    /// Distance between the wheels in meters.
    pub separation: f64,
}

impl Default for WheelGeometry {
    fn default() -> Self {
        Self {
            ticks_left: 4096.0,
            ticks_right: 4096.0,
            diameter_left: 0.62,
            diameter_right: 0.62,
            separation: 1.52,
        }
    }
}

impl WheelGeometry {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ticks_left,
            self.ticks_right,
            self.diameter_left,
            self.diameter_right,
            self.separation,
        ];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(invalid(format!(
                "wheel geometry must be strictly positive: {self:?}"
            )))
        }
    }

    /// Meters travelled per tick, left and right.
    pub fn meters_per_tick(&self) -> (f64, f64) {
        use std::f64::consts::PI;
        (
            PI * self.diameter_left / self.ticks_left,
            PI * self.diameter_right / self.ticks_right,
        )
    }
}

/// Standard deviations of the odometer noise terms. Tick noise is per sample;
/// the rate noises are per-sample standard deviations of the rates held over the sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OdomNoise {
    pub sigma_nl: f64,
    pub sigma_nr: f64,
    pub sigma_wx: f64,
    pub sigma_wy: f64,
    pub sigma_vy: f64,
    pub sigma_vz: f64,
}

impl Default for OdomNoise {
    fn default() -> Self {
        Self {
            sigma_nl: 0.01,
            sigma_nr: 0.01,
            sigma_wx: 0.01,
            sigma_wy: 0.01,
            sigma_vy: 0.1,
            sigma_vz: 0.01,
        }
    }
}

impl OdomNoise {
    pub fn zero() -> Self {
        Self {
            sigma_nl: 0.0,
            sigma_nr: 0.0,
            sigma_wx: 0.0,
            sigma_wy: 0.0,
            sigma_vy: 0.0,
            sigma_vz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_nl,
            self.sigma_nr,
            self.sigma_wx,
            self.sigma_wy,
            self.sigma_vy,
            self.sigma_vz,
        ];
        if all.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(())
        } else {
            Err(invalid("odometry noise must be non-negative"))
        }
    }
}

/// Forward speed `v_x` and yaw rate `ω_z` from one encoder sample.
pub fn encoder_to_body_rates(s: &WheelEncoderSample, g: &WheelGeometry) -> Result<(f64, f64)> {
    if !(s.dt > 0.0) || !s.dt.is_finite() {
        return Err(invalid(format!(
            "encoder sample dt must be positive, got {}",
            s.dt
        )));
    }
    let (ml, mr) = g.meters_per_tick();
    let v_l = s.dm_l * ml / s.dt;
    let v_r = s.dm_r * mr / s.dt;
    Ok(((v_l + v_r) / 2.0, (v_r - v_l) / g.separation))
}

/// Covariance of the body-rate noise `[n_ω(3), n_v(3)]` held over one sample.
pub fn rate_noise_covariance(dt: f64, g: &WheelGeometry, n: &OdomNoise) -> Matrix6<f64> {
    let (ml, mr) = g.meters_per_tick();
    let var_l = (n.sigma_nl * ml / dt).powi(2);
    let var_r = (n.sigma_nr * mr / dt).powi(2);
    let b = g.separation;
    let mut q = Matrix6::zeros();
    q[(0, 0)] = n.sigma_wx.powi(2);
    q[(1, 1)] = n.sigma_wy.powi(2);
    q[(2, 2)] = (var_l + var_r) / (b * b);
    q[(3, 3)] = (var_l + var_r) / 4.0;
    q[(2, 3)] = (var_r - var_l) / (2.0 * b);
    q[(3, 2)] = q[(2, 3)];
    q[(4, 4)] = n.sigma_vy.powi(2);
    q[(5, 5)] = n.sigma_vz.powi(2);
    q
}

/// Mean propagation with rates held constant over `dt`:
/// `q ← q ⊗ Exp(ω dt)`, `p ← p + R(q) J_l(ω dt) v dt` (exact for constant rates).
pub fn propagate_pose(
    q: &Quat,
    p: &Vector3<f64>,
    omega: &Vector3<f64>,
    v: &Vector3<f64>,
    dt: f64,
) -> (Quat, Vector3<f64>) {
    let phi = omega * dt;
    let mut q1 = q * exp_so3(&phi);
    q1.renormalize();
    let p1 = p + q * (left_jacobian(&phi) * v * dt);
    (q1, p1)
}

/// Error-state transition `Φ` and noise input `G` of one propagation step,
/// both over `[δθ, δp]`; `G` acts on `[n_ω, n_v]`.
pub fn propagation_jacobians(
    q: &Quat,
    omega: &Vector3<f64>,
    v: &Vector3<f64>,
    dt: f64,
) -> (Matrix6<f64>, Matrix6<f64>) {
    let phi = omega * dt;
    let r = q.to_rotation_matrix().into_inner();
    let step_rot = exp_so3(&phi).to_rotation_matrix().into_inner();
    let jl = left_jacobian(&phi);
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&step_rot.transpose());
    f.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-r * skew(&(jl * v * dt))));
    let mut g = Matrix6::zeros();
    g.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(right_jacobian(&phi) * dt));
    // first order in the rotation over the step
    g.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-0.5 * r * skew(v) * dt * dt));
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * jl * dt));
    (f, g)
}

/// Propagate the filter over one encoder sample. Only the measured channels
/// `(v_x, ω_z)` move the mean; all six noise channels enter the covariance.
pub fn propagate(
    state: &mut FilterState,
    sample: &WheelEncoderSample,
    g: &WheelGeometry,
    n: &OdomNoise,
) -> Result<()> {
    if !(sample.t > state.time) {
        return Err(invalid(format!(
            "stale encoder sample at t = {} (state at {})",
            sample.t, state.time
        )));
    }
    let (v_x, w_z) = encoder_to_body_rates(sample, g)?;
    let omega = Vector3::new(0.0, 0.0, w_z);
    let v = Vector3::new(v_x, 0.0, 0.0);
    let dt = sample.dt;

    let (f, gm) = propagation_jacobians(&state.nav.orientation, &omega, &v, dt);
    let (q1, p1) = propagate_pose(&state.nav.orientation, &state.nav.position, &omega, &v, dt);
    state.nav.orientation = q1;
    state.nav.position = p1;

    let q = rate_noise_covariance(dt, g, n);
    let dim = state.dim();
    let nav = StateLayout::NAV_DIM;
    let p_nn = state.cov.fixed_view::<6, 6>(0, 0).clone_owned();
    let new_nn = f * p_nn * f.transpose() + gm * q * gm.transpose();
    state.cov.fixed_view_mut::<6, 6>(0, 0).copy_from(&new_nn);
    if dim > nav {
        let rest = dim - nav;
        let p_nr = state.cov.view((0, nav), (nav, rest)).clone_owned();
        let new_nr = f * p_nr;
        state.cov.view_mut((0, nav), (nav, rest)).copy_from(&new_nr);
        state
            .cov
            .view_mut((nav, 0), (rest, nav))
            .copy_from(&new_nr.transpose());
    }
    crate::state::symmetrize(&mut state.cov);
    state.time = sample.t;
    Ok(())
}

/// Tick increments implied by body rates, inverse of [`encoder_to_body_rates`].
pub fn body_rates_to_ticks(v_x: f64, w_z: f64, dt: f64, g: &WheelGeometry) -> (f64, f64) {
    let v_l = v_x - w_z * g.separation / 2.0;
    let v_r = v_x + w_z * g.separation / 2.0;
    let (ml, mr) = g.meters_per_tick();
    (v_l * dt / ml, v_r * dt / mr)
}
