//! Scenario description, loaded from TOML.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{EulerAxis, EulerZYX};
use crate::state::DEFAULT_WINDOW;
use crate::vision::FeatureMode;
use crate::wheel::{OdomNoise, WheelGeometry};

/// Ground-truth path. Speeds in m/s, lengths in meters, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Straight {
        speed: f64,
    },
    Circle {
        radius: f64,
        speed: f64,
    },
    /// Heading `c·sin(2πt/T)` with `c` the first zero of `J₀`, which closes the loop.
    FigureEight {
        speed: f64,
        period: f64,
    },
    /// Random sequence of straights and ±90° turns.
    Urban {
        speed_min: f64,
        speed_max: f64,
        straight_min: f64,
        straight_max: f64,
        turn_radius_min: f64,
        turn_radius_max: f64,
    },
    /// Planar polyline with circular fillets at the corners.
    Waypoints {
        points: Vec<[f64; 2]>,
        speed: f64,
        turn_radius: f64,
    },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::Urban {
            speed_min: 3.0,
            speed_max: 8.0,
            straight_min: 50.0,
            straight_max: 300.0,
            turn_radius_min: 10.0,
            turn_radius_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRates {
    pub encoder: f64,
    pub camera: f64,
    pub gps: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            encoder: 100.0,
            camera: 10.0,
            gps: 5.0,
        }
    }
}

/// Landmarks scattered beside the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureField {
    pub count: usize,
    /// Distance from the path centerline, either side.
    pub lateral_min: f64,
    pub lateral_max: f64,
    /// Height above the path.
    pub height_min: f64,
    pub height_max: f64,
    /// Visible depth range along the optical axis.
    pub min_depth: f64,
    pub max_depth: f64,
    /// Full field of view, degrees, applied to both image axes.
    pub fov_deg: f64,
}

impl Default for FeatureField {
    fn default() -> Self {
        Self {
            count: 2000,
            lateral_min: 4.0,
            lateral_max: 20.0,
            height_min: -1.0,
            height_max: 8.0,
            min_depth: 1.0,
            max_depth: 60.0,
            fov_deg: 70.0,
        }
    }
}

/// True {V}→{E} transform and sensor mounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mounting {
    /// True extrinsic rotation, `[yaw, pitch, roll]` in degrees.
    pub extrinsic_deg: [f64; 3],
    pub p_v_in_e: [f64; 3],
    /// GPS antenna in the odometer frame.
    pub lever_arm: [f64; 3],
    /// Camera optical center in the odometer frame (camera looks along +x).
    pub camera: [f64; 3],
}

impl Default for Mounting {
    fn default() -> Self {
        Self {
            extrinsic_deg: [35.0, 1.5, -1.0],
            p_v_in_e: [120.0, -45.0, 3.0],
            lever_arm: [0.0; 3],
            camera: [1.5, 0.0, 1.4],
        }
    }
}

impl Mounting {
    pub fn rotation(&self) -> EulerZYX {
        let [y, p, r] = self.extrinsic_deg;
        EulerZYX::from_degrees(y, p, r)
    }
}

/// Estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Maximum number of clones.
    pub window: usize,
    pub feature_mode: FeatureMode,
    /// Shortest track used in an update.
    pub min_track: usize,
    /// Landmarks kept in the state at once (in-state mode).
    pub max_landmarks: usize,
    /// Normalized image noise assumed by the filter.
    pub sigma_px: f64,
    /// Initial 1σ of the estimated extrinsic angles, degrees, `[yaw, pitch, roll]`.
    pub extrinsic_sigma_deg: [f64; 3],
    /// Initial 1σ of `^Ep_V` when estimated, meters.
    pub translation_sigma: f64,
    /// GPS fixes are chi-square gated only once every estimated extrinsic
    /// angle has a 1σ below this, degrees.
    pub gps_gate_sigma_deg: f64,
    /// After this many consecutive gated-out fixes the extrinsic covariance
    /// goes back to its initial value, reopening the ungated warm-up. 0 disables.
    pub gps_reset_after: usize,
    pub wheel: WheelGeometry,
    pub odom_noise: OdomNoise,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            feature_mode: FeatureMode::Nullspace,
            min_track: 3,
            max_landmarks: 20,
            sigma_px: 1e-3,
            extrinsic_sigma_deg: [90.0, 45.0, 45.0],
            translation_sigma: 1.0,
            gps_gate_sigma_deg: 5.0,
            gps_reset_after: 10,
            wheel: WheelGeometry::default(),
            odom_noise: OdomNoise::default(),
        }
    }
}

impl FilterConfig {
    pub fn sigma_for(&self, axis: EulerAxis) -> f64 {
        let i = match axis {
            EulerAxis::Yaw => 0,
            EulerAxis::Pitch => 1,
            EulerAxis::Roll => 2,
        };
        self.extrinsic_sigma_deg[i].to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub seed: u64,
    pub duration: f64,
    pub trajectory: TrajectorySpec,
    pub rates: SensorRates,
    pub wheel: WheelGeometry,
    /// Odometer noise; drives both the tick noise and, when
    /// `truth_process_noise` is set, random motion on the unmeasured channels.
    pub odom_noise: OdomNoise,
    pub truth_process_noise: bool,
    pub sigma_px: f64,
    /// GPS noise variance per axis, m².
    pub gps_variance: [f64; 3],
    /// `[start, end)` intervals without GPS, seconds.
    pub gps_outages: Vec<[f64; 2]>,
    pub mounting: Mounting,
    /// Error added to the true extrinsic angles to form the initial guess, degrees.
    pub initial_perturbation_deg: [f64; 3],
    pub features: FeatureField,
    pub filter: FilterConfig,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 600.0,
            trajectory: TrajectorySpec::default(),
            rates: SensorRates::default(),
            wheel: WheelGeometry::default(),
            odom_noise: OdomNoise::default(),
            truth_process_noise: true,
            sigma_px: 1e-3,
            gps_variance: [1.0, 1.0, 4.0],
            gps_outages: Vec::new(),
            mounting: Mounting::default(),
            initial_perturbation_deg: [0.0; 3],
            features: FeatureField::default(),
            filter: FilterConfig::default(),
        }
    }
}

impl SimScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SimScenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rates;
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration must be positive"));
        }
        if ![r.encoder, r.camera, r.gps]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite())
        {
            return Err(invalid("sensor rates must be positive"));
        }
        for rate in [r.camera, r.gps] {
            let ratio = r.encoder / rate;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return Err(invalid(format!(
                    "encoder rate {} must be a multiple of {rate}",
                    r.encoder
                )));
            }
        }
        for [a, b] in &self.gps_outages {
            if !(a < b) || *a < 0.0 || *b > self.duration {
                return Err(invalid(format!(
                    "outage [{a}, {b}) not inside [0, {}]",
                    self.duration
                )));
            }
        }
        if !self.gps_variance.iter().all(|v| *v > 0.0) || !(self.sigma_px >= 0.0) {
            return Err(invalid("noise parameters must be positive"));
        }
        let f = &self.features;
        if !(f.lateral_min <= f.lateral_max
            && f.height_min <= f.height_max
            && 0.0 < f.min_depth
            && f.min_depth < f.max_depth)
            || !(f.fov_deg > 0.0 && f.fov_deg < 180.0)
        {
            return Err(invalid("feature field bounds are inconsistent"));
        }
        if self.filter.window < 2 || self.filter.min_track < 2 {
            return Err(invalid("window and min_track must be at least 2"));
        }
        self.wheel.validate()?;
        self.odom_noise.validate()?;
        self.filter.wheel.validate()?;
        self.filter.odom_noise.validate()
    }

    /// True while GPS is available at `t`.
    pub fn gps_available(&self, t: f64) -> bool {
        !self.gps_outages.iter().any(|[a, b]| *a <= t && t < *b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_use_nominal_noise() {
        let s = SimScenario::default();
        assert_eq!(s.gps_variance, [1.0, 1.0, 4.0]);
        assert_eq!(
            (s.rates.encoder, s.rates.camera, s.rates.gps),
            (100.0, 10.0, 5.0)
        );
        assert_eq!(s.odom_noise, OdomNoise::default());
        s.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut s = SimScenario {
            seed: 7,
            duration: 120.0,
            ..Default::default()
        };
        s.trajectory = TrajectorySpec::Waypoints {
            points: vec![[0.0, 0.0], [100.0, 0.0], [100.0, 80.0]],
            speed: 5.0,
            turn_radius: 12.0,
        };
        s.gps_outages = vec![[30.0, 50.0]];
        let back = SimScenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let s = SimScenario::from_toml("seed = 3\nduration = 60.0\n[trajectory]\ntype = \"circle\"\nradius = 10.0\nspeed = 2.0\n").unwrap();
        assert_eq!(
            s.trajectory,
            TrajectorySpec::Circle {
                radius: 10.0,
                speed: 2.0
            }
        );
        assert_eq!(s.features, FeatureField::default());
    }

    #[test]
    fn bad_outage_rejected() {
        let s = SimScenario {
            duration: 10.0,
            gps_outages: vec![[5.0, 20.0]],
            ..Default::default()
        };
        assert!(s.validate().is_err());
        assert!(SimScenario::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn outage_window_is_half_open() {
        let s = SimScenario {
            gps_outages: vec![[10.0, 20.0]],
            ..Default::default()
        };
        assert!(s.gps_available(9.99));
        assert!(!s.gps_available(10.0));
        assert!(s.gps_available(20.0));
    }
}
