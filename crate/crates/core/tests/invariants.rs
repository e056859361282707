use gvwo_core::align::align_rigid;
use gvwo_core::geometry::{exp_so3, log_so3, wrap_angle, EulerAxis, EulerZYX, Quat};
use gvwo_core::gps::{gps_update, gps_update_with, GpsFix, GpsOutcome};
use gvwo_core::io::TrajectoryPoint;
use gvwo_core::sim::{compute_ate, Alignment};
use gvwo_core::state::{is_psd, ExtrinsicBlock, ExtrinsicMode, FilterState, NavState};
use gvwo_core::wheel::{
    body_rates_to_ticks, encoder_to_body_rates, propagate, OdomNoise, WheelEncoderSample,
    WheelGeometry,
};
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn filter(mode: ExtrinsicMode, yaw: f64) -> FilterState {
    let ext = ExtrinsicBlock::new(
        mode,
        EulerZYX::new(yaw, 0.02, -0.01),
        Vector3::new(10.0, -4.0, 1.0),
        Vector3::zeros(),
        false,
    );
    let d = ext.rotation_dim();
    FilterState::new(
        0.0,
        NavState::default(),
        ext,
        &(DMatrix::identity(6, 6) * 1e-4),
        &(DMatrix::identity(d, d) * 0.1),
        11,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_log_round_trip(phi in vec3(1.8)) {
        let back = log_so3(&exp_so3(&phi));
        prop_assert!((back - phi).norm() < 1e-9);
    }

    #[test]
    fn euler_round_trip(yaw in -3.1..3.1f64, pitch in -1.5..1.5f64, roll in -3.1..3.1f64) {
        let e = EulerZYX::new(yaw, pitch, roll);
        let back = EulerZYX::from_rotation(&e.to_rotation());
        for axis in [EulerAxis::Yaw, EulerAxis::Pitch, EulerAxis::Roll] {
            prop_assert!(wrap_angle(back.get(axis) - e.get(axis)).abs() < 1e-9);
        }
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        prop_assert!((w.sin() - a.sin()).abs() < 1e-9 && (w.cos() - a.cos()).abs() < 1e-9);
    }

    #[test]
    fn ticks_and_rates_are_inverse(v in -10.0..10.0f64, w in -2.0..2.0f64, dt in 0.001..0.5f64) {
        let g = WheelGeometry::default();
        let (l, r) = body_rates_to_ticks(v, w, dt, &g);
        let s = WheelEncoderSample { t: dt, dt, dm_l: l, dm_r: r };
        let (v2, w2) = encoder_to_body_rates(&s, &g).unwrap();
        prop_assert!((v2 - v).abs() < 1e-9 && (w2 - w).abs() < 1e-9);
    }

    #[test]
    fn propagation_keeps_covariance_psd(
        ticks in prop::collection::vec((-50.0..200.0f64, -50.0..200.0f64), 1..60),
    ) {
        let mut s = filter(ExtrinsicMode::OneDof(EulerAxis::Yaw), 0.3);
        let (g, n) = (WheelGeometry::default(), OdomNoise::default());
        for (k, (l, r)) in ticks.into_iter().enumerate() {
            if k % 10 == 0 && s.clones.len() < s.max_clones {
                s.augment_clone(s.time).unwrap();
            }
            let t = s.time + 0.01;
            propagate(&mut s, &WheelEncoderSample { t, dt: 0.01, dm_l: l, dm_r: r }, &g, &n).unwrap();
        }
        prop_assert!((&s.cov - s.cov.transpose()).amax() < 1e-12);
        prop_assert!(is_psd(&s.cov));
        prop_assert_eq!(s.diagnostics.psd_violations, 0);
    }

    #[test]
    fn fixed_extrinsic_never_moves(fixes in prop::collection::vec(vec3(50.0), 1..20)) {
        let mut s = filter(ExtrinsicMode::Fixed, 0.7);
        let before = s.extrinsic.clone();
        for p in fixes {
            let fix = GpsFix { t: 0.0, p_g_in_e: p, var: Vector3::new(1.0, 1.0, 4.0) };
            gps_update_with(&mut s, &fix, false).unwrap();
        }
        prop_assert_eq!(s.extrinsic, before);
    }

    #[test]
    fn gate_rejection_is_a_no_op(offset in vec3(1.0), scale in 1e3..1e5f64) {
        let mut s = filter(ExtrinsicMode::OneDof(EulerAxis::Yaw), 0.2);
        let before = s.clone();
        let fix = GpsFix {
            t: 0.0,
            p_g_in_e: Vector3::new(10.0, -4.0, 1.0) + offset.normalize() * scale,
            var: Vector3::new(1.0, 1.0, 4.0),
        };
        let outcome = gps_update(&mut s, &fix).unwrap();
        prop_assert_eq!(outcome, GpsOutcome::Rejected);
        prop_assert_eq!(s.nav, before.nav);
        prop_assert_eq!(s.cov, before.cov);
        prop_assert_eq!(s.extrinsic, before.extrinsic);
    }

    #[test]
    fn accepted_fix_never_inflates_yaw_variance(p in vec3(3.0)) {
        let mut s = filter(ExtrinsicMode::OneDof(EulerAxis::Yaw), 0.2);
        s.nav.position = Vector3::new(20.0, 5.0, 0.0);
        let before = s.cov[(6, 6)];
        let fix = GpsFix {
            t: 0.0,
            p_g_in_e: s.extrinsic.to_enu(&s.nav.position) + p,
            var: Vector3::new(1.0, 1.0, 4.0),
        };
        if gps_update(&mut s, &fix).unwrap() == GpsOutcome::Accepted {
            prop_assert!(s.cov[(6, 6)] < before);
        }
    }

    #[test]
    fn se3_ate_ignores_rigid_motion(phi in vec3(3.0), shift in vec3(100.0)) {
        let truth: Vec<TrajectoryPoint> = (0..40)
            .map(|k| {
                let a = k as f64 * 0.2;
                TrajectoryPoint {
                    t: a,
                    position: Vector3::new(20.0 * a.cos(), 8.0 * a.sin(), 0.3 * a),
                    orientation: Quat::identity(),
                }
            })
            .collect();
        let r = exp_so3(&phi);
        let moved: Vec<TrajectoryPoint> = truth
            .iter()
            .map(|p| TrajectoryPoint { position: r * p.position + shift, ..*p })
            .collect();
        prop_assert!(compute_ate(&moved, &truth, Alignment::Se3).unwrap() < 1e-8);
        let src: Vec<_> = truth.iter().map(|p| p.position).collect();
        let dst: Vec<_> = moved.iter().map(|p| p.position).collect();
        let tf = align_rigid(&src, &dst).unwrap();
        prop_assert!((tf.translation - shift).norm() < 1e-8);
    }
}
