//! Synthetic encoder, camera and GPS streams from a ground-truth trajectory.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::SimScenario;
use super::truth::Truth;
use super::{stream_rng, STREAM_CAMERA, STREAM_ENCODER, STREAM_GPS, STREAM_LANDMARKS};
use crate::error::{invalid, Result};
use crate::gps::GpsFix;
use crate::io::{self, EncoderRow, Frame, GpsRow};
use crate::state::ExtrinsicBlock;
use crate::state::ExtrinsicMode;
use crate::vision::{camera_point, CameraExtrinsics};
use crate::wheel::{body_rates_to_ticks, WheelEncoderSample};

/// File names used by [`SensorStreams::write_dir`].
pub const ENCODER_FILE: &str = "encoder.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const GPS_FILE: &str = "gps.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SCENARIO_FILE: &str = "scenario.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStreams {
    /// First row marks the start time.
    pub encoder: Vec<EncoderRow>,
    pub frames: Vec<Frame>,
    pub gps: Vec<GpsFix>,
    /// Landmark positions in {V}, indexed by feature id.
    pub landmarks: Vec<Vector3<f64>>,
    pub warnings: Vec<String>,
}

impl SensorStreams {
    pub fn encoder_samples(&self) -> Result<Vec<WheelEncoderSample>> {
        io::encoder_samples(&self.encoder)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_rows_path(&dir.join(ENCODER_FILE), &self.encoder)?;
        io::write_rows_path(&dir.join(FEATURES_FILE), &io::frame_rows(&self.frames))?;
        let gps: Vec<GpsRow> = self.gps.iter().map(GpsRow::from).collect();
        io::write_rows_path(&dir.join(GPS_FILE), &gps)
    }

    /// Streams from a directory written by [`SensorStreams::write_dir`]; a
    /// missing GPS file means no GPS. Landmarks are not stored, and frames
    /// without observations have no rows, so they do not come back.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let encoder = io::read_rows_path(&dir.join(ENCODER_FILE))?;
        let frames = io::frames(&io::read_rows_path(&dir.join(FEATURES_FILE))?)?;
        let gps_path = dir.join(GPS_FILE);
        let gps = if gps_path.exists() {
            io::gps_fixes(&io::read_rows_path(&gps_path)?)?
        } else {
            Vec::new()
        };
        Ok(Self {
            encoder,
            frames,
            gps,
            landmarks: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

/// True {V}→{E} transform of the scenario (nothing estimated).
pub fn true_extrinsic(sc: &SimScenario) -> ExtrinsicBlock {
    ExtrinsicBlock::new(
        ExtrinsicMode::Fixed,
        sc.mounting.rotation(),
        Vector3::from(sc.mounting.p_v_in_e),
        Vector3::from(sc.mounting.lever_arm),
        false,
    )
}

pub fn camera_of(sc: &SimScenario) -> CameraExtrinsics {
    CameraExtrinsics::forward_facing(Vector3::from(sc.mounting.camera))
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

fn noisy(n: &Option<Normal<f64>>, rng: &mut impl Rng) -> f64 {
    n.as_ref().map_or(0.0, |d| d.sample(rng))
}

/// Landmarks beside random points of the path, offset sideways, upward and
/// ahead in the body frame.
///
/// The forward offset reaches the distance at which the widest lateral offset
/// enters the field of view, so the camera still sees landmarks near the end
/// of the path.
pub fn place_landmarks(truth: &Truth, sc: &SimScenario) -> Vec<Vector3<f64>> {
    let f = &sc.features;
    let lookahead = (f.lateral_max / (f.fov_deg.to_radians() / 2.0).tan()).min(f.max_depth);
    let mut rng = stream_rng(sc.seed, STREAM_LANDMARKS);
    (0..f.count)
        .map(|_| {
            let s = &truth.samples[rng.random_range(0..truth.samples.len())];
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = side * rng.random_range(f.lateral_min..=f.lateral_max);
            let height = rng.random_range(f.height_min..=f.height_max);
            let ahead = rng.random_range(0.0..=lookahead);
            s.position + s.orientation * Vector3::new(ahead, lateral, height)
        })
        .collect()
}

/// Sample every stream of a scenario. Camera and GPS epochs must fall on encoder samples.
pub fn synthesize_sensors(truth: &Truth, sc: &SimScenario) -> Result<SensorStreams> {
    sc.validate()?;
    let mut warnings = Vec::new();

    let mut rng = stream_rng(sc.seed, STREAM_ENCODER);
    let (nl, nr) = (
        normal(sc.odom_noise.sigma_nl),
        normal(sc.odom_noise.sigma_nr),
    );
    let mut encoder = Vec::with_capacity(truth.samples.len());
    encoder.push(EncoderRow {
        t: truth.samples[0].t,
        dm_l: 0.0,
        dm_r: 0.0,
    });
    for w in truth.samples.windows(2) {
        let (l, r) = body_rates_to_ticks(w[1].v_x, w[1].w_z, w[1].t - w[0].t, &sc.wheel);
        encoder.push(EncoderRow {
            t: w[1].t,
            dm_l: l + noisy(&nl, &mut rng),
            dm_r: r + noisy(&nr, &mut rng),
        });
    }

    let landmarks = place_landmarks(truth, sc);
    let cam = camera_of(sc);
    let f = &sc.features;
    let tan_half = (f.fov_deg.to_radians() / 2.0).tan();
    let reach = f.max_depth * (1.0 + 2.0 * tan_half * tan_half).sqrt() + cam.center_in_o().norm();
    let pixel = normal(sc.sigma_px);
    let mut rng = stream_rng(sc.seed, STREAM_CAMERA);
    let n_frames = (sc.duration * sc.rates.camera).round() as usize;
    let mut frames = Vec::with_capacity(n_frames + 1);
    let mut blind_since: Option<f64> = None;
    for j in 0..=n_frames {
        let t = j as f64 / sc.rates.camera;
        let s = truth
            .at(t)
            .ok_or_else(|| invalid(format!("no truth sample at camera time {t}")))?;
        let mut features = Vec::new();
        for (id, p_f) in landmarks.iter().enumerate() {
            if (p_f - s.position).norm_squared() > reach * reach {
                continue;
            }
            let pc = camera_point(&s.orientation, &s.position, p_f, &cam);
            if pc.z < f.min_depth || pc.z > f.max_depth {
                continue;
            }
            let uv = Vector2::new(pc.x / pc.z, pc.y / pc.z);
            if uv.x.abs() > tan_half || uv.y.abs() > tan_half {
                continue;
            }
            let noise = Vector2::new(noisy(&pixel, &mut rng), noisy(&pixel, &mut rng));
            features.push((id as u64, uv + noise));
        }
        if features.is_empty() {
            blind_since.get_or_insert(t);
        } else if let Some(t0) = blind_since.take() {
            if t - t0 > 1.0 {
                warnings.push(format!(
                    "no visible landmarks from t = {t0:.1} s to {t:.1} s"
                ));
            }
        }
        frames.push(Frame { t, features });
    }
    if let Some(t0) = blind_since {
        warnings.push(format!(
            "no visible landmarks from t = {t0:.1} s to the end"
        ));
    }

    let ext = true_extrinsic(sc);
    let mut rng = stream_rng(sc.seed, STREAM_GPS);
    let axes: Vec<_> = sc.gps_variance.iter().map(|v| normal(v.sqrt())).collect();
    let n_fixes = (sc.duration * sc.rates.gps).round() as usize;
    let mut gps = Vec::with_capacity(n_fixes + 1);
    for i in 0..=n_fixes {
        let t = i as f64 / sc.rates.gps;
        let s = truth
            .at(t)
            .ok_or_else(|| invalid(format!("no truth sample at GPS time {t}")))?;
        // draw even during outages so the noise sequence does not depend on them
        let noise = Vector3::new(
            noisy(&axes[0], &mut rng),
            noisy(&axes[1], &mut rng),
            noisy(&axes[2], &mut rng),
        );
        if !sc.gps_available(t) {
            continue;
        }
        let antenna = ext.to_enu(&(s.position + s.orientation * ext.p_g_in_o));
        gps.push(GpsFix {
            t,
            p_g_in_e: antenna + noise,
            var: Vector3::from(sc.gps_variance),
        });
    }

    Ok(SensorStreams {
        encoder,
        frames,
        gps,
        landmarks,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;
    use crate::sim::scenario::TrajectorySpec;
    use crate::sim::truth::generate_truth;
    use crate::wheel::{encoder_to_body_rates, propagate_pose};
    use nalgebra::Matrix3;

    fn scenario(duration: f64) -> SimScenario {
        SimScenario {
            duration,
            trajectory: TrajectorySpec::Circle {
                radius: 30.0,
                speed: 4.0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_ticks_dead_reckon_exactly() {
        let mut sc = scenario(60.0);
        sc.odom_noise = crate::wheel::OdomNoise::zero();
        sc.features.count = 0;
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        let (mut q, mut p) = (Quat::identity(), Vector3::zeros());
        for s in streams.encoder_samples().unwrap() {
            let (v, w) = encoder_to_body_rates(&s, &sc.wheel).unwrap();
            (q, p) = propagate_pose(
                &q,
                &p,
                &Vector3::new(0.0, 0.0, w),
                &Vector3::new(v, 0.0, 0.0),
                s.dt,
            );
        }
        let end = truth.samples.last().unwrap();
        assert!((p - end.position).norm() < 1e-9);
        assert!(q.angle_to(&end.orientation) < 1e-10);
    }

    #[test]
    fn gps_noise_matches_configured_covariance() {
        let mut sc = SimScenario {
            duration: 2000.0,
            trajectory: TrajectorySpec::Straight { speed: 1.0 },
            ..Default::default()
        };
        sc.features.count = 0;
        sc.gps_variance = [1.0, 2.0, 4.0];
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        assert!(streams.gps.len() >= 10_000);
        let ext = true_extrinsic(&sc);
        let errs: Vec<Vector3<f64>> = streams
            .gps
            .iter()
            .map(|f| {
                let s = truth.at(f.t).unwrap();
                f.p_g_in_e - ext.to_enu(&s.position)
            })
            .collect();
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<Vector3<f64>>() / n;
        let cov = errs
            .iter()
            .map(|e| (e - mean) * (e - mean).transpose())
            .sum::<Matrix3<f64>>()
            / (n - 1.0);
        for i in 0..3 {
            let want = sc.gps_variance[i];
            assert!(
                (cov[(i, i)] - want).abs() < 0.1 * want,
                "axis {i}: {} vs {want}",
                cov[(i, i)]
            );
        }
        assert!(cov[(0, 1)].abs() < 0.1);
    }

    #[test]
    fn outages_remove_fixes() {
        let mut sc = scenario(60.0);
        sc.gps_outages = vec![[10.0, 20.0]];
        sc.features.count = 0;
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        assert!(streams.gps.iter().all(|f| !(10.0..20.0).contains(&f.t)));
        assert_eq!(streams.gps.len(), 301 - 50);
    }

    #[test]
    fn observations_are_in_view_and_consistent() {
        let mut sc = scenario(30.0);
        sc.sigma_px = 0.0;
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        let cam = camera_of(&sc);
        let seen: usize = streams.frames.iter().map(|f| f.features.len()).sum();
        assert!(seen > 100, "only {seen} observations");
        for fr in &streams.frames {
            let s = truth.at(fr.t).unwrap();
            for (id, uv) in &fr.features {
                let pc = camera_point(
                    &s.orientation,
                    &s.position,
                    &streams.landmarks[*id as usize],
                    &cam,
                );
                assert!((uv - Vector2::new(pc.x / pc.z, pc.y / pc.z)).norm() < 1e-12);
                assert!(pc.z >= sc.features.min_depth && pc.z <= sc.features.max_depth);
            }
        }
    }

    #[test]
    fn empty_field_warns() {
        let mut sc = scenario(5.0);
        sc.features.count = 0;
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        assert_eq!(streams.warnings.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let sc = scenario(10.0);
        let truth = generate_truth(&sc).unwrap();
        let streams = synthesize_sensors(&truth, &sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        streams.write_dir(dir.path()).unwrap();
        let back = SensorStreams::read_dir(dir.path()).unwrap();
        assert_eq!(back.encoder, streams.encoder);
        assert_eq!(back.gps, streams.gps);
        assert_eq!(
            back.frames
                .iter()
                .filter(|f| !f.features.is_empty())
                .count(),
            streams
                .frames
                .iter()
                .filter(|f| !f.features.is_empty())
                .count()
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let sc = scenario(10.0);
        let truth = generate_truth(&sc).unwrap();
        assert_eq!(
            synthesize_sensors(&truth, &sc).unwrap(),
            synthesize_sensors(&truth, &sc).unwrap()
        );
    }
}
