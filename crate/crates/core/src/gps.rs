//! GPS position update through the {V}→{E} extrinsic transform.
//!
//! Measurement model: `^Ep_G = ^Ep_V + R_EV (^Vp_O + R_VO ^Op_G)` where
//! `R_VO` is the body orientation (odometer frame into {V}).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::align::{align_rigid, associate};
use crate::ekf::ekf_update;
use crate::error::{invalid, Error, Result};
use crate::geometry::{exp_so3, left_jacobian, log_so3, right_jacobian, skew, Quat};
use crate::state::{ExtrinsicBlock, ExtrinsicMode, FilterState, StateLayout};

/// Time tolerance used when associating GPS fixes with odometry poses.
pub const ASSOCIATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub t: f64,
    pub p_g_in_e: Vector3<f64>,
    /// Per-axis variance, m².
    pub var: Vector3<f64>,
}

impl GpsFix {
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || !self.p_g_in_e.iter().all(|v| v.is_finite()) {
            return Err(invalid("GPS fix has non-finite values"));
        }
        if !self.var.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(invalid(format!(
                "GPS variances must be positive, got {:?}",
                self.var
            )));
        }
        Ok(())
    }
}

/// Predicted antenna position for a body pose.
pub fn predict_gps_at(
    ext: &ExtrinsicBlock,
    orientation: &Quat,
    position: &Vector3<f64>,
) -> Vector3<f64> {
    ext.p_v_in_e + ext.rotation() * (position + orientation * ext.p_g_in_o)
}

/// Predicted antenna position for the current navigation pose.
pub fn predict_gps(s: &FilterState) -> Vector3<f64> {
    predict_gps_at(&s.extrinsic, &s.nav.orientation, &s.nav.position)
}

/// Blocks of the GPS Jacobian for one body pose.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsJacobian {
    pub attitude: Matrix3<f64>,
    pub position: Matrix3<f64>,
    /// `3 × D`, empty in fixed mode.
    pub rotation: DMatrix<f64>,
    /// Present when `^Ep_V` is estimated.
    pub translation: Option<Matrix3<f64>>,
}

pub fn gps_jacobian_at(
    ext: &ExtrinsicBlock,
    orientation: &Quat,
    position: &Vector3<f64>,
) -> GpsJacobian {
    let r_ev = ext.rotation().matrix();
    let r_vo = orientation.to_rotation_matrix().into_inner();
    let p_g_in_v = position + r_vo * ext.p_g_in_o;
    let rotation = match ext.mode() {
        ExtrinsicMode::ThreeDof => {
            DMatrix::from_column_slice(3, 3, skew(&(r_ev * p_g_in_v)).as_slice())
        }
        ExtrinsicMode::OneDof(axis) => {
            let col = ext.angles().rotation_derivative(axis) * p_g_in_v;
            DMatrix::from_column_slice(3, 1, col.as_slice())
        }
        ExtrinsicMode::Fixed => DMatrix::zeros(3, 0),
    };
    GpsJacobian {
        attitude: -(r_ev * r_vo * skew(&ext.p_g_in_o)),
        position: *r_ev,
        rotation,
        translation: ext.estimates_translation().then(Matrix3::identity),
    }
}

fn put3(h: &mut DMatrix<f64>, col: usize, block: &Matrix3<f64>, w: f64) {
    let mut v = h.fixed_view_mut::<3, 3>(0, col);
    v += block * w;
}

fn put_extrinsic(h: &mut DMatrix<f64>, layout: &StateLayout, jac: &GpsJacobian) {
    if layout.ext_rotation_dim > 0 {
        h.view_mut((0, layout.ext_rotation()), (3, layout.ext_rotation_dim))
            .copy_from(&jac.rotation);
    }
    if let Some(t) = &jac.translation {
        put3(h, layout.ext_translation(), t, 1.0);
    }
}

/// Full `3 × dim` Jacobian with respect to the navigation pose and extrinsic blocks.
pub fn gps_jacobian(s: &FilterState) -> DMatrix<f64> {
    let layout = s.layout();
    let jac = gps_jacobian_at(&s.extrinsic, &s.nav.orientation, &s.nav.position);
    let mut h = DMatrix::zeros(3, layout.dim());
    put3(&mut h, StateLayout::NAV_ATTITUDE, &jac.attitude, 1.0);
    put3(&mut h, StateLayout::NAV_POSITION, &jac.position, 1.0);
    put_extrinsic(&mut h, &layout, &jac);
    h
}

/// A pose in the state usable as an interpolation endpoint.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    t: f64,
    orientation: Quat,
    position: Vector3<f64>,
    attitude_col: usize,
    position_col: usize,
}

fn anchors(s: &FilterState) -> Vec<Anchor> {
    let l = s.layout();
    let mut out: Vec<Anchor> = s
        .clones
        .iter()
        .enumerate()
        .map(|(j, c)| Anchor {
            t: c.timestamp,
            orientation: c.orientation,
            position: c.position,
            attitude_col: l.clone_attitude(j),
            position_col: l.clone_position(j),
        })
        .collect();
    if out.last().is_none_or(|a| a.t < s.time) {
        out.push(Anchor {
            t: s.time,
            orientation: s.nav.orientation,
            position: s.nav.position,
            attitude_col: StateLayout::NAV_ATTITUDE,
            position_col: StateLayout::NAV_POSITION,
        });
    }
    out
}

/// Where a fix falls relative to the poses held in the state.
enum Bracket {
    Exact(Anchor),
    /// `(a, b, λ)`: pose = λ·a + (1−λ)·b.
    Between(Anchor, Anchor, f64),
    TooOld,
    TooNew,
}

fn bracket(s: &FilterState, t: f64) -> Bracket {
    let a = anchors(s);
    if let Some(x) = a.iter().find(|x| x.t == t) {
        return Bracket::Exact(*x);
    }
    match a.iter().position(|x| x.t > t) {
        None => Bracket::TooNew,
        Some(0) => Bracket::TooOld,
        Some(k) => {
            let (lo, hi) = (a[k - 1], a[k]);
            Bracket::Between(lo, hi, (hi.t - t) / (hi.t - lo.t))
        }
    }
}

/// Derivatives of the local attitude error of `slerp(q_a, q_b, τ)` with
/// respect to the local errors of `q_a` and `q_b`.
fn slerp_jacobians(q_a: &Quat, q_b: &Quat, tau: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let phi = log_so3(&(q_a.inverse() * q_b));
    let part = phi * tau;
    let jr_part = right_jacobian(&part);
    let inv = |m: Matrix3<f64>| m.try_inverse().unwrap_or_else(Matrix3::identity);
    let d_a = exp_so3(&part).to_rotation_matrix().into_inner().transpose()
        - jr_part * inv(left_jacobian(&phi)) * tau;
    let d_b = jr_part * inv(right_jacobian(&phi)) * tau;
    (d_a, d_b)
}

/// Residual and Jacobian of a fix against the state, interpolating between
/// the bracketing poses (position lerp, orientation slerp) when the fix time
/// falls between them.
pub fn gps_residual(s: &FilterState, fix: &GpsFix) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    let layout = s.layout();
    let mut h = DMatrix::zeros(3, layout.dim());
    let (orientation, position, weights) = match bracket(s, fix.t) {
        Bracket::Exact(a) => (
            a.orientation,
            a.position,
            vec![(a, 1.0, Matrix3::identity())],
        ),
        Bracket::Between(a, b, lambda) => {
            let tau = 1.0 - lambda;
            let q = a.orientation.slerp(&b.orientation, tau);
            let p = a.position * lambda + b.position * tau;
            let (d_a, d_b) = slerp_jacobians(&a.orientation, &b.orientation, tau);
            (q, p, vec![(a, lambda, d_a), (b, tau, d_b)])
        }
        Bracket::TooOld | Bracket::TooNew => return Ok(None),
    };
    let jac = gps_jacobian_at(&s.extrinsic, &orientation, &position);
    for (anchor, w, d_att) in weights {
        put3(&mut h, anchor.attitude_col, &(jac.attitude * d_att), 1.0);
        put3(&mut h, anchor.position_col, &jac.position, w);
    }
    put_extrinsic(&mut h, &layout, &jac);
    let r = fix.p_g_in_e - predict_gps_at(&s.extrinsic, &orientation, &position);
    Ok(Some((DVector::from_column_slice(r.as_slice()), h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsOutcome {
    Accepted,
    /// Failed the chi-square gate; state untouched.
    Rejected,
    /// Newer than the state; keep it until the filter catches up.
    Buffered,
    /// Older than every pose in the window.
    Dropped,
}

/// EKF update with one fix, gated at 95% with 3 degrees of freedom.
pub fn gps_update(s: &mut FilterState, fix: &GpsFix) -> Result<GpsOutcome> {
    gps_update_with(s, fix, true)
}

/// [`gps_update`] with the chi-square gate optionally disabled.
pub fn gps_update_with(s: &mut FilterState, fix: &GpsFix, gate: bool) -> Result<GpsOutcome> {
    fix.validate()?;
    match bracket(s, fix.t) {
        Bracket::TooNew => return Ok(GpsOutcome::Buffered),
        Bracket::TooOld => {
            s.diagnostics.gps_dropped += 1;
            return Ok(GpsOutcome::Dropped);
        }
        _ => {}
    }
    let (r, h) = gps_residual(s, fix)?.expect("bracketed fix has a residual");
    let noise = DMatrix::from_diagonal(&DVector::from_column_slice(fix.var.as_slice()));
    let out = ekf_update(s, &r, &h, &noise, gate.then_some(3))?;
    if out.accepted {
        s.diagnostics.gps_accepted += 1;
        Ok(GpsOutcome::Accepted)
    } else {
        s.diagnostics.gps_rejected += 1;
        Ok(GpsOutcome::Rejected)
    }
}

/// Queue of fixes waiting for the filter to reach their timestamp.
#[derive(Debug, Clone, Default)]
pub struct GpsBuffer {
    pending: VecDeque<GpsFix>,
}

impl GpsBuffer {
    pub fn push(&mut self, fix: GpsFix) -> Result<()> {
        fix.validate()?;
        if let Some(last) = self.pending.back() {
            if fix.t < last.t {
                return Err(invalid(format!(
                    "GPS fix at {} older than queued fix at {}",
                    fix.t, last.t
                )));
            }
        }
        self.pending.push_back(fix);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Apply every queued fix the state can now bracket, in time order.
    pub fn process(&mut self, s: &mut FilterState) -> Result<Vec<(GpsFix, GpsOutcome)>> {
        self.process_with(s, true)
    }

    /// [`GpsBuffer::process`] with the gate optionally disabled.
    pub fn process_with(
        &mut self,
        s: &mut FilterState,
        gate: bool,
    ) -> Result<Vec<(GpsFix, GpsOutcome)>> {
        let mut done = Vec::new();
        while let Some(fix) = self.pending.front().copied() {
            let outcome = gps_update_with(s, &fix, gate)?;
            if outcome == GpsOutcome::Buffered {
                break;
            }
            self.pending.pop_front();
            done.push((fix, outcome));
        }
        Ok(done)
    }
}

/// Estimate the {V}→{E} transform by rigidly aligning the VWO trajectory
/// (`(t, ^Vp_O)`) to the GPS track.
pub fn initialize_extrinsics(
    gps: &[GpsFix],
    vwo: &[(f64, Vector3<f64>)],
    mode: ExtrinsicMode,
    p_g_in_o: Vector3<f64>,
    estimate_translation: bool,
) -> Result<ExtrinsicBlock> {
    let tg: Vec<f64> = gps.iter().map(|f| f.t).collect();
    let tv: Vec<f64> = vwo.iter().map(|x| x.0).collect();
    let pairs = associate(&tg, &tv, ASSOCIATION_TOLERANCE);
    if pairs.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "only {} time-associated pairs",
            pairs.len()
        )));
    }
    let src: Vec<_> = pairs.iter().map(|&(_, j)| vwo[j].1).collect();
    let dst: Vec<_> = pairs.iter().map(|&(i, _)| gps[i].p_g_in_e).collect();
    let tf = align_rigid(&src, &dst)?;
    Ok(ExtrinsicBlock::from_rotation(
        mode,
        tf.rotation,
        tf.translation,
        p_g_in_o,
        estimate_translation,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, EulerAxis, EulerZYX};
    use crate::state::{tests::random_state, NavState};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn fixed_state(ext: ExtrinsicBlock, nav: NavState) -> FilterState {
        let d = ext.rotation_dim() + ext.translation_dim();
        FilterState::new(
            0.0,
            nav,
            ext,
            &(DMatrix::identity(6, 6) * 0.01),
            &(DMatrix::identity(d, d) * 0.01),
            11,
        )
        .unwrap()
    }

    #[test]
    fn prediction_identity_frames() {
        let nav = NavState {
            position: Vector3::new(4.0, -2.0, 1.0),
            ..Default::default()
        };
        let s = fixed_state(ExtrinsicBlock::identity(), nav);
        assert_eq!(predict_gps(&s), Vector3::new(4.0, -2.0, 1.0));
    }

    #[test]
    fn prediction_pure_translation() {
        let ext = ExtrinsicBlock::new(
            ExtrinsicMode::Fixed,
            EulerZYX::default(),
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.5, 0.0, 0.0),
            false,
        );
        let s = fixed_state(ext, NavState::default());
        assert_eq!(predict_gps(&s), Vector3::new(1.5, 2.0, 3.0));
    }

    #[test]
    fn prediction_matches_composed_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_state(&mut rng, ExtrinsicMode::ThreeDof, true);
            let t_ev = nalgebra::Isometry3::from_parts(
                s.extrinsic.p_v_in_e.into(),
                Quat::from_rotation_matrix(s.extrinsic.rotation()),
            );
            let t_vo = nalgebra::Isometry3::from_parts(s.nav.position.into(), s.nav.orientation);
            let p = (t_ev * t_vo) * nalgebra::Point3::from(s.extrinsic.p_g_in_o);
            assert!((predict_gps(&s) - p.coords).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobian_at_identity() {
        let nav = NavState {
            position: Vector3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        let ext3 = ExtrinsicBlock::new(
            ExtrinsicMode::ThreeDof,
            EulerZYX::default(),
            Vector3::zeros(),
            Vector3::zeros(),
            true,
        );
        let j = gps_jacobian_at(&ext3, &nav.orientation, &nav.position);
        assert_eq!(
            j.rotation,
            DMatrix::from_column_slice(3, 3, skew(&Vector3::x()).as_slice())
        );
        let ext1 = ExtrinsicBlock::new(
            ExtrinsicMode::OneDof(EulerAxis::Yaw),
            EulerZYX::default(),
            Vector3::zeros(),
            Vector3::zeros(),
            false,
        );
        let j = gps_jacobian_at(&ext1, &nav.orientation, &nav.position);
        assert_relative_eq!(
            j.rotation.column(0).into_owned(),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
            epsilon = 1e-15
        );
        assert!(j.translation.is_none());
    }

    /// Central differences of the prediction with respect to every error-state block.
    pub(crate) fn gps_fd(s: &FilterState) -> DMatrix<f64> {
        let n = s.dim();
        let eps = 1e-6;
        let mut h = DMatrix::zeros(3, n);
        for k in 0..n {
            let mut dx = DVector::zeros(n);
            dx[k] = eps;
            let mut plus = s.clone();
            plus.apply_correction(&dx).unwrap();
            let mut minus = s.clone();
            minus.apply_correction(&-dx).unwrap();
            h.set_column(
                k,
                &((predict_gps(&plus) - predict_gps(&minus)) / (2.0 * eps)),
            );
        }
        h
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let modes = [
            (ExtrinsicMode::ThreeDof, true),
            (ExtrinsicMode::ThreeDof, false),
            (ExtrinsicMode::OneDof(EulerAxis::Yaw), false),
            (ExtrinsicMode::OneDof(EulerAxis::Pitch), true),
            (ExtrinsicMode::OneDof(EulerAxis::Roll), false),
            (ExtrinsicMode::Fixed, false),
        ];
        for _ in 0..20 {
            for (mode, tr) in modes {
                let s = random_state(&mut rng, mode, tr);
                let a = gps_jacobian(&s);
                let fd = gps_fd(&s);
                for c in 0..a.ncols() {
                    let (x, y) = (a.column(c), fd.column(c));
                    assert!(
                        (x - y).norm() <= 1e-6 * x.norm().max(1.0),
                        "{mode:?} col {c}: {x} vs {y}"
                    );
                }
            }
        }
    }

    fn moving_state(rng: &mut impl Rng, mode: ExtrinsicMode) -> FilterState {
        let ext = ExtrinsicBlock::new(
            mode,
            EulerZYX::new(0.4, 0.02, -0.01),
            Vector3::new(10.0, 5.0, 0.0),
            Vector3::new(0.2, 0.0, 1.0),
            false,
        );
        let mut s = fixed_state(ext, NavState::default());
        for k in 0..4 {
            s.nav.position = Vector3::new(2.0 * k as f64, 0.5 * k as f64, 0.0);
            s.nav.orientation = exp_so3(&Vector3::new(0.0, 0.0, 0.05 * k as f64));
            s.time = 0.1 * k as f64;
            s.augment_clone(s.time).unwrap();
        }
        s.cov = crate::state::tests::random_spd(s.dim(), rng) * 0.01;
        s
    }

    #[test]
    fn interpolated_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = moving_state(&mut rng, ExtrinsicMode::OneDof(EulerAxis::Yaw));
        let fix = GpsFix {
            t: 0.13,
            p_g_in_e: Vector3::zeros(),
            var: Vector3::repeat(1.0),
        };
        let (_, h) = gps_residual(&s, &fix).unwrap().unwrap();
        let eps = 1e-6;
        for k in 0..s.dim() {
            let mut dx = DVector::zeros(s.dim());
            dx[k] = eps;
            let mut plus = s.clone();
            plus.apply_correction(&dx).unwrap();
            let mut minus = s.clone();
            minus.apply_correction(&-dx).unwrap();
            let rp = gps_residual(&plus, &fix).unwrap().unwrap().0;
            let rm = gps_residual(&minus, &fix).unwrap().unwrap().0;
            let fd = -(rp - rm) / (2.0 * eps);
            let col = h.column(k);
            assert!(
                (col - &fd).norm() <= 1e-6 * col.norm().max(1.0),
                "col {k}: {col} vs {fd}"
            );
        }
    }

    #[test]
    fn fix_at_clone_with_zero_residual_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = moving_state(&mut rng, ExtrinsicMode::OneDof(EulerAxis::Yaw));
        let c = s.clones[1].clone();
        let z = predict_gps_at(&s.extrinsic, &c.orientation, &c.position);
        let before = s.clone();
        let out = gps_update(
            &mut s,
            &GpsFix {
                t: c.timestamp,
                p_g_in_e: z,
                var: Vector3::new(1.0, 1.0, 4.0),
            },
        )
        .unwrap();
        assert_eq!(out, GpsOutcome::Accepted);
        assert_eq!(s.nav, before.nav);
        assert_eq!(s.clones, before.clones);
        assert_eq!(s.extrinsic, before.extrinsic);
    }

    #[test]
    fn midpoint_of_linear_motion_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ext = ExtrinsicBlock::new(
            ExtrinsicMode::OneDof(EulerAxis::Yaw),
            EulerZYX::new(0.3, 0.0, 0.0),
            Vector3::new(1.0, 2.0, 0.0),
            Vector3::zeros(),
            false,
        );
        let mut s = fixed_state(ext.clone(), NavState::default());
        let v = Vector3::new(3.0, 1.0, 0.0);
        for k in 0..3 {
            s.nav.position = v * (0.1 * k as f64);
            s.time = 0.1 * k as f64;
            s.augment_clone(s.time).unwrap();
        }
        s.cov = crate::state::tests::random_spd(s.dim(), &mut rng) * 0.01;
        let truth = ext.to_enu(&(v * 0.15));
        let fix = GpsFix {
            t: 0.15,
            p_g_in_e: truth,
            var: Vector3::repeat(1.0),
        };
        let (r, _) = gps_residual(&s, &fix).unwrap().unwrap();
        assert!(r.norm() < 1e-9);
    }

    #[test]
    fn gate_rejection_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = moving_state(&mut rng, ExtrinsicMode::OneDof(EulerAxis::Yaw));
        let z = predict_gps(&s) + Vector3::new(500.0, 0.0, 0.0);
        let before = s.clone();
        let fix = GpsFix {
            t: s.time,
            p_g_in_e: z,
            var: Vector3::repeat(1.0),
        };
        let out = gps_update(&mut s, &fix).unwrap();
        assert_eq!(out, GpsOutcome::Rejected);
        assert_eq!(s.cov, before.cov);
        assert_eq!(s.nav, before.nav);
        assert_eq!(s.diagnostics.gps_rejected, 1);
    }

    #[test]
    fn fixed_mode_extrinsics_never_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = moving_state(&mut rng, ExtrinsicMode::Fixed);
        let ext = s.extrinsic.clone();
        let noise = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..50 {
            let z = predict_gps(&s) + Vector3::from_fn(|_, _| noise.sample(&mut rng));
            let fix = GpsFix {
                t: s.time,
                p_g_in_e: z,
                var: Vector3::repeat(1.0),
            };
            gps_update(&mut s, &fix).unwrap();
        }
        assert_eq!(s.extrinsic, ext);
    }

    #[test]
    fn buffering_and_dropping() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = moving_state(&mut rng, ExtrinsicMode::Fixed);
        let mut buf = GpsBuffer::default();
        let z = predict_gps(&s);
        buf.push(GpsFix {
            t: -1.0,
            p_g_in_e: z,
            var: Vector3::repeat(1.0),
        })
        .unwrap();
        buf.push(GpsFix {
            t: s.time,
            p_g_in_e: z,
            var: Vector3::repeat(1.0),
        })
        .unwrap();
        buf.push(GpsFix {
            t: s.time + 1.0,
            p_g_in_e: z,
            var: Vector3::repeat(1.0),
        })
        .unwrap();
        let done = buf.process(&mut s).unwrap();
        assert_eq!(
            done.iter().map(|d| d.1).collect::<Vec<_>>(),
            vec![GpsOutcome::Dropped, GpsOutcome::Accepted]
        );
        assert_eq!(buf.len(), 1);
        assert_eq!(s.diagnostics.gps_dropped, 1);
        assert!(buf
            .push(GpsFix {
                t: 0.0,
                p_g_in_e: z,
                var: Vector3::repeat(1.0)
            })
            .is_err());
        assert!(gps_update(
            &mut s,
            &GpsFix {
                t: 0.0,
                p_g_in_e: z,
                var: Vector3::new(1.0, 0.0, 1.0)
            }
        )
        .is_err());
    }

    #[test]
    fn yaw_variance_shrinks_on_every_accepted_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = moving_state(&mut rng, ExtrinsicMode::OneDof(EulerAxis::Yaw));
        let l = s.layout();
        let noise = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..20 {
            let before = s.cov[(l.ext_rotation(), l.ext_rotation())];
            let z = predict_gps(&s) + Vector3::from_fn(|_, _| noise.sample(&mut rng));
            let fix = GpsFix {
                t: s.time,
                p_g_in_e: z,
                var: Vector3::new(1.0, 1.0, 4.0),
            };
            if gps_update(&mut s, &fix).unwrap() == GpsOutcome::Accepted {
                assert!(s.cov[(l.ext_rotation(), l.ext_rotation())] < before);
            }
        }
    }

    #[test]
    fn alignment_initialization() {
        let traj: Vec<(f64, Vector3<f64>)> = (0..60)
            .map(|k| {
                (
                    k as f64 * 0.2,
                    if k < 30 {
                        Vector3::new(k as f64, 0.0, 0.0)
                    } else {
                        Vector3::new(29.0, (k - 29) as f64, 0.1)
                    },
                )
            })
            .collect();
        let fixes = |f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>| -> Vec<GpsFix> {
            traj.iter()
                .map(|(t, p)| GpsFix {
                    t: *t,
                    p_g_in_e: f(p),
                    var: Vector3::repeat(1.0),
                })
                .collect()
        };
        let ext = initialize_extrinsics(
            &fixes(&|p| *p),
            &traj,
            ExtrinsicMode::ThreeDof,
            Vector3::zeros(),
            false,
        )
        .unwrap();
        assert!((ext.rotation().matrix() - Matrix3::identity()).amax() < 1e-12);
        assert!(ext.p_v_in_e.norm() < 1e-10);

        let r = EulerZYX::new(1.2, 0.05, -0.03).to_rotation();
        let t = Vector3::new(100.0, -40.0, 3.0);
        let ext = initialize_extrinsics(
            &fixes(&|p| r * p + t),
            &traj,
            ExtrinsicMode::ThreeDof,
            Vector3::zeros(),
            false,
        )
        .unwrap();
        assert!((ext.rotation().matrix() - r.matrix()).amax() < 1e-9);
        assert!((ext.p_v_in_e - t).norm() < 1e-9);

        let line: Vec<_> = traj.iter().take(20).cloned().collect();
        let gps: Vec<_> = line
            .iter()
            .map(|(t, p)| GpsFix {
                t: *t,
                p_g_in_e: *p,
                var: Vector3::repeat(1.0),
            })
            .collect();
        assert!(matches!(
            initialize_extrinsics(&gps, &line, ExtrinsicMode::Fixed, Vector3::zeros(), false),
            Err(Error::DegenerateAlignment(_))
        ));
    }

    #[test]
    fn noisy_alignment_monte_carlo() {
        // L-shaped track, 100 points, 1 m isotropic noise on the GPS side
        let traj: Vec<(f64, Vector3<f64>)> = (0..100)
            .map(|k| {
                let p = if k < 50 {
                    Vector3::new(4.0 * k as f64, 0.0, 0.0)
                } else {
                    Vector3::new(196.0, 4.0 * (k - 49) as f64, 0.0)
                };
                (k as f64 * 0.2, p)
            })
            .collect();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut good = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = EulerZYX::new(rng.random_range(-3.0..3.0), 0.0, 0.0).to_rotation();
            let gps: Vec<_> = traj
                .iter()
                .map(|(t, p)| GpsFix {
                    t: *t,
                    p_g_in_e: r * p + Vector3::from_fn(|_, _| noise.sample(&mut rng)),
                    var: Vector3::repeat(1.0),
                })
                .collect();
            let ext = initialize_extrinsics(
                &gps,
                &traj,
                ExtrinsicMode::ThreeDof,
                Vector3::zeros(),
                false,
            )
            .unwrap();
            if ext.rotation().angle_to(&r).to_degrees() < 2.0 {
                good += 1;
            }
        }
        assert!(good >= 95, "{good}/100");
    }
}
