//! End-to-end filter run over timestamp-merged encoder, camera and GPS streams.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::scenario::{FilterConfig, SimScenario};
use super::sensors::{camera_of, SensorStreams};
use crate::error::{invalid, Error, Result};
use crate::geometry::{EulerAxis, EulerZYX, Quat};
use crate::gps::{GpsBuffer, GpsFix, GpsOutcome};
use crate::io::{Frame, TrajectoryPoint};
use crate::state::{Diagnostics, ExtrinsicBlock, ExtrinsicMode, FilterState, NavState};
use crate::vision::{
    visual_update, CameraExtrinsics, FeatureMode, FeatureTrack, Observation, VisualUpdateConfig,
};
use crate::wheel::{propagate, WheelEncoderSample};

/// Longest tolerated hole in the encoder stream, seconds.
pub const MAX_ENCODER_GAP: f64 = 5.0;

/// Estimator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunMode {
    /// Camera and wheels only; the extrinsic is held at its initial value.
    Vwo,
    /// GPS fused with a fixed extrinsic.
    GpsVwoFixed,
    /// GPS fused, one Euler angle of the extrinsic estimated.
    GpsVwo1Dof(EulerAxis),
    /// GPS fused, full extrinsic rotation and translation estimated.
    GpsVwo3Dof,
}

impl RunMode {
    pub fn uses_gps(self) -> bool {
        self != RunMode::Vwo
    }

    pub fn extrinsic_mode(self) -> ExtrinsicMode {
        match self {
            RunMode::Vwo | RunMode::GpsVwoFixed => ExtrinsicMode::Fixed,
            RunMode::GpsVwo1Dof(a) => ExtrinsicMode::OneDof(a),
            RunMode::GpsVwo3Dof => ExtrinsicMode::ThreeDof,
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Vwo => write!(f, "vwo"),
            RunMode::GpsVwoFixed => write!(f, "gps-vwo-fixed"),
            RunMode::GpsVwo1Dof(EulerAxis::Yaw) => write!(f, "gps-vwo-1dof-yaw"),
            RunMode::GpsVwo1Dof(EulerAxis::Pitch) => write!(f, "gps-vwo-1dof-pitch"),
            RunMode::GpsVwo1Dof(EulerAxis::Roll) => write!(f, "gps-vwo-1dof-roll"),
            RunMode::GpsVwo3Dof => write!(f, "gps-vwo-3dof"),
        }
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vwo" => RunMode::Vwo,
            "gps-vwo-fixed" => RunMode::GpsVwoFixed,
            "gps-vwo" | "gps-vwo-1dof" | "gps-vwo-1dof-yaw" => RunMode::GpsVwo1Dof(EulerAxis::Yaw),
            "gps-vwo-1dof-pitch" => RunMode::GpsVwo1Dof(EulerAxis::Pitch),
            "gps-vwo-1dof-roll" => RunMode::GpsVwo1Dof(EulerAxis::Roll),
            "gps-vwo-3dof" => RunMode::GpsVwo3Dof,
            _ => return Err(invalid(format!("unknown mode {s:?}"))),
        })
    }
}

/// Everything the filter needs besides the measurement streams.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub mode: RunMode,
    pub filter: FilterConfig,
    pub camera: CameraExtrinsics,
    /// Initial guess of the {V}→{E} rotation.
    pub initial_angles: EulerZYX,
    pub p_v_in_e: Vector3<f64>,
    pub lever_arm: Vector3<f64>,
}

impl RunSetup {
    /// Setup for a simulated scenario: initial angles are the truth plus the
    /// scenario's perturbation, translation and lever arm are the truth.
    pub fn from_scenario(sc: &SimScenario, mode: RunMode) -> Self {
        let [dy, dp, dr] = sc.initial_perturbation_deg;
        let t = sc.mounting.rotation();
        Self {
            mode,
            filter: sc.filter,
            camera: camera_of(sc),
            initial_angles: EulerZYX::new(
                t.yaw + dy.to_radians(),
                t.pitch + dp.to_radians(),
                t.roll + dr.to_radians(),
            ),
            p_v_in_e: Vector3::from(sc.mounting.p_v_in_e),
            lever_arm: Vector3::from(sc.mounting.lever_arm),
        }
    }

    /// Initial covariance of the estimated extrinsic components.
    fn extrinsic_prior(&self) -> DMatrix<f64> {
        let f = &self.filter;
        let diag: Vec<f64> = match self.mode.extrinsic_mode() {
            ExtrinsicMode::Fixed => vec![],
            ExtrinsicMode::OneDof(a) => vec![f.sigma_for(a).powi(2)],
            // global rotation error: x, y, z components ≈ roll, pitch, yaw
            ExtrinsicMode::ThreeDof => {
                let s = [
                    f.sigma_for(EulerAxis::Roll),
                    f.sigma_for(EulerAxis::Pitch),
                    f.sigma_for(EulerAxis::Yaw),
                ];
                let mut d: Vec<f64> = s.iter().map(|x| x * x).collect();
                d.extend([f.translation_sigma.powi(2); 3]);
                d
            }
        };
        DMatrix::from_diagonal(&DVector::from_vec(diag))
    }

    fn initial_state(&self, t0: f64) -> Result<FilterState> {
        let mode = self.mode.extrinsic_mode();
        let three = mode == ExtrinsicMode::ThreeDof;
        let ext = ExtrinsicBlock::new(
            mode,
            self.initial_angles,
            self.p_v_in_e,
            self.lever_arm,
            three,
        );
        let ext_cov = self.extrinsic_prior();
        // the first pose defines {V}, so it is known exactly
        FilterState::new(
            t0,
            NavState::default(),
            ext,
            &DMatrix::zeros(6, 6),
            &ext_cov,
            self.filter.window,
        )
    }
}

/// Filter output at one camera (or GPS) epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: f64,
    /// `^Vp_O`.
    pub position: Vector3<f64>,
    pub orientation: Quat,
    /// Odometer origin mapped into {E} by the current extrinsic estimate.
    pub position_enu: Vector3<f64>,
    pub angles: EulerZYX,
    /// Full current rotation estimate.
    pub rotation: nalgebra::Rotation3<f64>,
    /// 1σ of the estimated extrinsic rotation components (empty when fixed).
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: RunMode,
    pub records: Vec<RunRecord>,
    pub final_extrinsic: ExtrinsicBlock,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl RunReport {
    /// Estimated trajectory in {E}.
    pub fn enu_trajectory(&self) -> Vec<TrajectoryPoint> {
        self.records
            .iter()
            .map(|r| TrajectoryPoint {
                t: r.t,
                position: r.position_enu,
                orientation: Quat::from_rotation_matrix(&r.rotation) * r.orientation,
            })
            .collect()
    }

    /// Estimated trajectory in {V}.
    pub fn vwo_trajectory(&self) -> Vec<TrajectoryPoint> {
        self.records
            .iter()
            .map(|r| TrajectoryPoint {
                t: r.t,
                position: r.position,
                orientation: r.orientation,
            })
            .collect()
    }
}

/// Feature tracks waiting for an update, keyed by landmark id.
#[derive(Default)]
struct Tracker {
    tracks: BTreeMap<u64, Vec<Observation>>,
}

struct Runner<'a> {
    setup: &'a RunSetup,
    state: FilterState,
    tracker: Tracker,
    gps: GpsBuffer,
    records: Vec<RunRecord>,
    warnings: Vec<String>,
    /// Consecutive fixes rejected by the gate.
    rejected_streak: usize,
}

impl Runner<'_> {
    fn on_frame(&mut self, frame: &Frame) -> Result<()> {
        let cfg = &self.setup.filter;
        let s = &mut self.state;
        s.augment_clone(frame.t)?;
        let in_state = cfg.feature_mode == FeatureMode::InState;
        let landmarks: HashSet<u64> = s.nav.features.iter().map(|f| f.id).collect();
        let mut seen = HashSet::new();
        let mut landmark_tracks = Vec::new();
        for (id, uv) in &frame.features {
            if !seen.insert(*id) {
                continue;
            }
            let obs = Observation {
                t: frame.t,
                uv: *uv,
            };
            if in_state && landmarks.contains(id) {
                landmark_tracks.push(FeatureTrack {
                    id: *id,
                    observations: vec![obs],
                });
            } else {
                self.tracker.tracks.entry(*id).or_default().push(obs);
            }
        }

        let mut ready = Vec::new();
        let lost: Vec<u64> = self
            .tracker
            .tracks
            .keys()
            .filter(|id| !seen.contains(id))
            .copied()
            .collect();
        for id in lost {
            let obs = self.tracker.tracks.remove(&id).expect("listed id");
            if obs.len() >= cfg.min_track {
                ready.push(FeatureTrack {
                    id,
                    observations: obs,
                });
            }
        }
        let full = s.clones.len() >= s.max_clones;
        let mut fresh = Vec::new();
        if full {
            let oldest = s.clones[0].timestamp;
            let mut spent = Vec::new();
            for (id, obs) in self.tracker.tracks.iter_mut() {
                if obs.first().is_some_and(|o| o.t == oldest) {
                    if obs.len() >= cfg.min_track {
                        spent.push(*id);
                    } else {
                        obs.remove(0);
                    }
                }
            }
            let mut room = cfg.max_landmarks.saturating_sub(landmarks.len());
            for id in spent {
                let track = FeatureTrack {
                    id,
                    observations: self.tracker.tracks.remove(&id).expect("listed id"),
                };
                if in_state && room > 0 {
                    room -= 1;
                    fresh.push(track);
                } else {
                    ready.push(track);
                }
            }
            self.tracker.tracks.retain(|_, obs| !obs.is_empty());
        }

        if in_state && !(landmark_tracks.is_empty() && fresh.is_empty()) {
            landmark_tracks.extend(fresh);
            let vc = VisualUpdateConfig {
                mode: FeatureMode::InState,
                sigma_px: cfg.sigma_px,
            };
            visual_update(s, &landmark_tracks, &self.setup.camera, &vc)?;
        }
        if !ready.is_empty() || !in_state {
            let vc = VisualUpdateConfig {
                mode: FeatureMode::Nullspace,
                sigma_px: cfg.sigma_px,
            };
            visual_update(s, &ready, &self.setup.camera, &vc)?;
        }
        if in_state {
            let gone: Vec<u64> = s
                .nav
                .features
                .iter()
                .map(|f| f.id)
                .filter(|id| !seen.contains(id))
                .collect();
            for id in gone {
                s.remove_feature(id)?;
            }
        }
        if s.clones.len() >= s.max_clones {
            s.marginalize_oldest_clone()?;
        }
        Ok(())
    }

    /// The GPS gate is held off until every estimated extrinsic angle is
    /// known to within `gps_gate_sigma_deg`; a large initial rotation error
    /// otherwise gates out every fix before the angle can move.
    ///
    /// A linearized update can shrink the angle's σ below the limit before
    /// the estimate gets there, after which every fix fails the gate. A long
    /// run of rejections resets the extrinsic covariance so the warm-up
    /// starts over from the current estimate.
    fn process_gps(&mut self) -> Result<()> {
        let cfg = &self.setup.filter;
        let limit = cfg.gps_gate_sigma_deg.to_radians();
        let gate = self.state.extrinsic_sigma().iter().all(|s| *s < limit);
        for (_, outcome) in self.gps.process_with(&mut self.state, gate)? {
            match outcome {
                GpsOutcome::Accepted => self.rejected_streak = 0,
                GpsOutcome::Rejected => self.rejected_streak += 1,
                _ => {}
            }
        }
        let estimated = self.state.layout().ext_rotation_dim > 0;
        if estimated && cfg.gps_reset_after > 0 && self.rejected_streak >= cfg.gps_reset_after {
            self.state
                .reset_extrinsic_cov(&self.setup.extrinsic_prior())?;
            self.warnings.push(format!(
                "extrinsic covariance reset at t = {:.2} s after {} rejected fixes",
                self.state.time, self.rejected_streak
            ));
            self.rejected_streak = 0;
        }
        Ok(())
    }

    fn record(&mut self) {
        let s = &self.state;
        let last = self.records.last().map(|r| r.t);
        if last == Some(s.time) {
            self.records.pop();
        }
        self.records.push(RunRecord {
            t: s.time,
            position: s.nav.position,
            orientation: s.nav.orientation,
            position_enu: s.extrinsic.to_enu(&s.nav.position),
            angles: s.extrinsic.angles(),
            rotation: *s.extrinsic.rotation(),
            sigma: s.extrinsic_sigma(),
        });
    }
}

/// Split an encoder sample at `t`, assuming constant wheel speeds over it.
fn split_sample(s: &WheelEncoderSample, t: f64) -> (WheelEncoderSample, WheelEncoderSample) {
    let start = s.t - s.dt;
    let frac = (t - start) / s.dt;
    (
        WheelEncoderSample {
            t,
            dt: t - start,
            dm_l: s.dm_l * frac,
            dm_r: s.dm_r * frac,
        },
        WheelEncoderSample {
            t: s.t,
            dt: s.t - t,
            dm_l: s.dm_l * (1.0 - frac),
            dm_r: s.dm_r * (1.0 - frac),
        },
    )
}

/// Run the filter from `t0` over time-ordered streams.
///
/// Events are merged by timestamp; at equal times encoder samples come first,
/// then camera frames, then GPS fixes. A camera frame that falls inside an
/// encoder interval splits it so clones sit exactly at frame times. GPS fixes
/// are ignored in VWO mode.
pub fn run_filter(
    t0: f64,
    encoder: &[WheelEncoderSample],
    frames: &[Frame],
    gps: &[GpsFix],
    setup: &RunSetup,
) -> Result<RunReport> {
    let mut r = Runner {
        setup,
        state: setup.initial_state(t0)?,
        tracker: Tracker::default(),
        gps: GpsBuffer::default(),
        records: Vec::new(),
        warnings: Vec::new(),
        rejected_streak: 0,
    };
    let gps: &[GpsFix] = if setup.mode.uses_gps() { gps } else { &[] };
    let (wheel, noise) = (&setup.filter.wheel, &setup.filter.odom_noise);
    let (mut ie, mut ic, mut ig) = (0, 0, 0);
    let mut pending: Option<WheelEncoderSample> = None;
    let mut skipped_frames = 0usize;
    loop {
        let next_enc = pending.or_else(|| encoder.get(ie).copied());
        let te = next_enc.map_or(f64::INFINITY, |s| s.t);
        let tc = frames.get(ic).map_or(f64::INFINITY, |f| f.t);
        let tg = gps.get(ig).map_or(f64::INFINITY, |f| f.t);
        if te.is_infinite() && tc.is_infinite() && tg.is_infinite() {
            break;
        }
        if te <= tc && te <= tg {
            let s = next_enc.expect("finite time");
            if s.dt > MAX_ENCODER_GAP {
                return Err(Error::StreamGap {
                    stream: "encoder",
                    gap: s.dt,
                    t: s.t,
                });
            }
            if s.t > r.state.time {
                propagate(&mut r.state, &s, wheel, noise)?;
            }
            if pending.take().is_none() {
                ie += 1;
            }
            if !r.gps.is_empty() {
                r.process_gps()?;
            }
        } else if tc <= tg {
            let frame = &frames[ic];
            ic += 1;
            if frame.t > r.state.time {
                let Some(s) = next_enc else { break };
                if s.t - s.dt > r.state.time + 1e-9 || s.dt > MAX_ENCODER_GAP {
                    return Err(Error::StreamGap {
                        stream: "encoder",
                        gap: frame.t - r.state.time,
                        t: frame.t,
                    });
                }
                let (head, tail) = split_sample(&s, frame.t);
                propagate(&mut r.state, &head, wheel, noise)?;
                pending = Some(tail);
            }
            let newest = r.state.clones.last().map(|c| c.timestamp);
            if frame.t < r.state.time || newest.is_some_and(|t| frame.t <= t) {
                skipped_frames += 1;
                continue;
            }
            r.on_frame(frame)?;
            if !r.gps.is_empty() {
                r.process_gps()?;
            }
            r.record();
        } else {
            r.gps.push(gps[ig])?;
            ig += 1;
            r.process_gps()?;
            if frames.is_empty() {
                r.record();
            }
        }
    }
    if skipped_frames > 0 {
        r.warnings.push(format!(
            "{skipped_frames} camera frames arrived behind the filter and were skipped"
        ));
    }
    if !r.gps.is_empty() {
        r.warnings.push(format!(
            "{} GPS fixes newer than the last encoder sample were not used",
            r.gps.len()
        ));
    }
    Ok(RunReport {
        mode: setup.mode,
        records: r.records,
        final_extrinsic: r.state.extrinsic.clone(),
        diagnostics: r.state.diagnostics,
        warnings: r.warnings,
    })
}

/// Run a mode over synthesized streams.
pub fn run_streams(streams: &SensorStreams, setup: &RunSetup) -> Result<RunReport> {
    let t0 = streams
        .encoder
        .first()
        .ok_or_else(|| invalid("empty encoder stream"))?
        .t;
    let mut report = run_filter(
        t0,
        &streams.encoder_samples()?,
        &streams.frames,
        &streams.gps,
        setup,
    )?;
    let mut warnings = streams.warnings.clone();
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::TrajectorySpec;
    use crate::sim::sensors::synthesize_sensors;
    use crate::sim::truth::generate_truth;
    use crate::wheel::OdomNoise;

    fn noiseless(duration: f64) -> SimScenario {
        let mut sc = SimScenario {
            duration,
            trajectory: TrajectorySpec::Circle {
                radius: 40.0,
                speed: 5.0,
            },
            odom_noise: OdomNoise::zero(),
            sigma_px: 0.0,
            ..Default::default()
        };
        sc.features.count = 400;
        sc
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            RunMode::Vwo,
            RunMode::GpsVwoFixed,
            RunMode::GpsVwo1Dof(EulerAxis::Yaw),
            RunMode::GpsVwo1Dof(EulerAxis::Pitch),
            RunMode::GpsVwo1Dof(EulerAxis::Roll),
            RunMode::GpsVwo3Dof,
        ] {
            assert_eq!(m.to_string().parse::<RunMode>().unwrap(), m);
        }
        assert!("gps".parse::<RunMode>().is_err());
    }

    #[test]
    fn noiseless_vwo_tracks_truth() {
        let sc = noiseless(20.0);
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        let report = run_streams(&streams, &RunSetup::from_scenario(&sc, RunMode::Vwo)).unwrap();
        assert_eq!(report.records.len(), streams.frames.len());
        for rec in &report.records {
            let s = truth.at(rec.t).unwrap();
            assert!((rec.position - s.position).norm() < 1e-6);
        }
        assert!(report.diagnostics.tracks_used > 0);
    }

    #[test]
    fn split_sample_preserves_ticks() {
        let s = WheelEncoderSample {
            t: 1.0,
            dt: 0.1,
            dm_l: 10.0,
            dm_r: 12.0,
        };
        let (a, b) = split_sample(&s, 0.95);
        assert!((a.dm_l + b.dm_l - 10.0).abs() < 1e-12 && (a.dt + b.dt - 0.1).abs() < 1e-12);
        assert!((a.dm_r / a.dt - b.dm_r / b.dt).abs() < 1e-9);
    }

    #[test]
    fn frames_between_encoder_samples_are_cloned_at_frame_time() {
        let sc = noiseless(5.0);
        let truth = generate_truth(&sc).unwrap();
        let mut streams = synthesize_sensors(&truth, &sc).unwrap();
        for f in streams.frames.iter_mut() {
            f.t += 0.004;
        }
        let report = run_streams(&streams, &RunSetup::from_scenario(&sc, RunMode::Vwo)).unwrap();
        assert!(report
            .records
            .iter()
            .all(|r| ((r.t - 0.004) * 10.0 - ((r.t - 0.004) * 10.0).round()).abs() < 1e-9));
    }

    #[test]
    fn encoder_gap_is_fatal() {
        let enc = vec![
            WheelEncoderSample {
                t: 0.01,
                dt: 0.01,
                dm_l: 1.0,
                dm_r: 1.0,
            },
            WheelEncoderSample {
                t: 6.01,
                dt: 6.0,
                dm_l: 1.0,
                dm_r: 1.0,
            },
        ];
        let sc = noiseless(10.0);
        let err = run_filter(
            0.0,
            &enc,
            &[],
            &[],
            &RunSetup::from_scenario(&sc, RunMode::Vwo),
        )
        .unwrap_err();
        assert!(matches!(err, Error::StreamGap { .. }));
    }

    #[test]
    fn in_state_mode_runs_and_bounds_landmarks() {
        let mut sc = noiseless(15.0);
        sc.filter.feature_mode = FeatureMode::InState;
        sc.filter.max_landmarks = 5;
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        let report = run_streams(&streams, &RunSetup::from_scenario(&sc, RunMode::Vwo)).unwrap();
        let end = truth.samples.last().unwrap();
        assert!((report.records.last().unwrap().position - end.position).norm() < 1e-5);
    }

    #[test]
    fn gate_lock_out_resets_the_extrinsic_prior() {
        let mut sc = SimScenario {
            seed: 2,
            duration: 60.0,
            initial_perturbation_deg: [-170.0, 0.0, 0.0],
            ..Default::default()
        };
        sc.features.count = 600;
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        let run = |reset_after| {
            let mut setup = RunSetup::from_scenario(&sc, RunMode::GpsVwo1Dof(EulerAxis::Yaw));
            setup.filter.gps_reset_after = reset_after;
            let report = run_streams(&streams, &setup).unwrap();
            let yaw = report.final_extrinsic.angles().yaw - sc.mounting.rotation().yaw;
            (
                report.diagnostics.extrinsic_resets,
                crate::geometry::wrap_angle(yaw).abs(),
            )
        };
        let (resets, err) = run(10);
        assert!(resets > 0);
        assert!(err < 1f64.to_radians(), "{}", err.to_degrees());
        let (resets, err) = run(0);
        assert_eq!(resets, 0);
        assert!(err > 10f64.to_radians(), "{}", err.to_degrees());
    }
}
