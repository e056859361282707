//! Independent finite-difference oracles for the estimator Jacobians, and
//! the reporting used by the acceptance suite.
//!
//! Every oracle here perturbs the state through the same retraction the
//! filter uses (local attitude errors, additive positions, the extrinsic
//! correction of [`FilterState::apply_correction`]) and differentiates the
//! public measurement or motion model numerically.

use std::io::Write;

use gvwo_core::geometry::{exp_so3, log_so3, Quat};
use gvwo_core::gps::{gps_residual, predict_gps, GpsFix};
use gvwo_core::observability::{
    h_camera, h_gps, h_norm, lie_camera_yaw, lie_gps_forward, ObservabilitySystem,
};
use gvwo_core::state::FilterState;
use gvwo_core::vision::{project, CameraExtrinsics};
use gvwo_core::wheel::propagate_pose;
use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix6, Vector3};

/// Step of every central difference.
pub const FD_STEP: f64 = 1e-6;

/// Relative tolerance of the acceptance Jacobian checks.
pub const JACOBIAN_TOLERANCE: f64 = 1e-5;

fn v3(x: &DVector<f64>, at: usize) -> Vector3<f64> {
    Vector3::new(x[at], x[at + 1], x[at + 2])
}

/// Error-state transition of one propagation step, `[δθ, δp]` in and out.
pub fn propagation_fd(
    q: &Quat,
    p: &Vector3<f64>,
    omega: &Vector3<f64>,
    v: &Vector3<f64>,
    dt: f64,
) -> Matrix6<f64> {
    let (q1, p1) = propagate_pose(q, p, omega, v, dt);
    let step = |dx: &DVector<f64>| -> DVector<f64> {
        let qa = q * exp_so3(&v3(dx, 0));
        let pa = p + v3(dx, 3);
        let (qb, pb) = propagate_pose(&qa, &pa, omega, v, dt);
        let dth = log_so3(&(q1.inverse() * qb));
        let dp = pb - p1;
        DVector::from_vec(vec![dth.x, dth.y, dth.z, dp.x, dp.y, dp.z])
    };
    let cols = central(6, &step);
    Matrix6::from_fn(|r, c| cols[(r, c)])
}

/// Derivatives of the normalized projection with respect to the body
/// attitude, body position and feature position.
pub fn projection_fd(
    q: &Quat,
    p: &Vector3<f64>,
    p_f: &Vector3<f64>,
    cam: &CameraExtrinsics,
) -> [Matrix2x3<f64>; 3] {
    let z = |dx: &DVector<f64>| -> DVector<f64> {
        let qa = q * exp_so3(&v3(dx, 0));
        let uv = project(&qa, &(p + v3(dx, 3)), &(p_f + v3(dx, 6)), cam)
            .expect("perturbed point stays in front of the camera");
        DVector::from_vec(vec![uv.x, uv.y])
    };
    let j = central(9, &z);
    [0, 3, 6].map(|c| Matrix2x3::from_fn(|r, k| j[(r, c + k)]))
}

fn perturbed(s: &FilterState, k: usize, h: f64) -> FilterState {
    let mut dx = DVector::zeros(s.dim());
    dx[k] = h;
    let mut out = s.clone();
    out.apply_correction(&dx)
        .expect("correction matches layout");
    out
}

/// Jacobian of the predicted antenna position at the nav pose.
pub fn gps_prediction_fd(s: &FilterState) -> DMatrix<f64> {
    let n = s.dim();
    let mut h = DMatrix::zeros(3, n);
    for k in 0..n {
        let d = predict_gps(&perturbed(s, k, FD_STEP)) - predict_gps(&perturbed(s, k, -FD_STEP));
        h.set_column(k, &(d / (2.0 * FD_STEP)));
    }
    h
}

/// Jacobian of the predicted fix (negated residual) at the fix time.
pub fn gps_residual_fd(s: &FilterState, fix: &GpsFix) -> DMatrix<f64> {
    let n = s.dim();
    let r = |st: &FilterState| {
        gps_residual(st, fix)
            .expect("fix is valid")
            .expect("fix falls inside the window")
            .0
    };
    let mut h = DMatrix::zeros(3, n);
    for k in 0..n {
        let d = r(&perturbed(s, k, -FD_STEP)) - r(&perturbed(s, k, FD_STEP));
        h.set_column(k, &(d / (2.0 * FD_STEP)));
    }
    h
}

/// Stacked gradient rows of the observability analysis, differentiated
/// directly in the state coordinates.
pub fn lie_rows_fd(sys: &ObservabilitySystem) -> DMatrix<f64> {
    let x0 = sys.state_vector();
    let stack = |dx: &DVector<f64>| -> DVector<f64> {
        let x = &x0 + dx;
        let mut v = DVector::zeros(13);
        v.fixed_rows_mut::<3>(0).copy_from(&h_camera(sys, &x));
        v[3] = h_norm(&x);
        v.fixed_rows_mut::<3>(4).copy_from(&h_gps(sys, &x));
        v.fixed_rows_mut::<3>(7).copy_from(&lie_camera_yaw(sys, &x));
        v.fixed_rows_mut::<3>(10)
            .copy_from(&lie_gps_forward(sys, &x));
        v
    };
    central(x0.len(), &stack)
}

fn central(n: usize, f: &dyn Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut dx = DVector::zeros(n);
        dx[k] = FD_STEP;
        cols.push((f(&dx) - f(&-dx)) / (2.0 * FD_STEP));
    }
    DMatrix::from_columns(&cols)
}

/// Largest column-wise relative disagreement `‖a − b‖ / max(‖a‖, 1)`.
pub fn worst_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "Jacobian shapes differ");
    (0..a.ncols())
        .map(|c| (a.column(c) - b.column(c)).norm() / a.column(c).norm().max(1.0))
        .fold(0.0, f64::max)
}

/// One line per criterion on the real stdout, so it shows without `--nocapture`.
pub fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion} [{verdict}] {name}: {detail}");
}
