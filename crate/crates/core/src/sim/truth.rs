//! Ground-truth trajectories from piecewise-constant controls.
//!
//! Each encoder interval holds a forward speed and yaw rate fixed, and the
//! pose is advanced with the same zero-order hold the filter uses, so noiseless
//! dead reckoning reproduces the truth exactly. Truth is expressed in {V}: the
//! vehicle starts at the origin facing +x.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::{SimScenario, TrajectorySpec};
use crate::error::{invalid, Result};
use crate::geometry::Quat;
use crate::io::TrajectoryPoint;
use crate::wheel::{propagate_pose, OdomNoise};

/// First zero of the Bessel function `J₀`; this heading amplitude returns the
/// figure-eight to its start after one period.
pub const FIGURE_EIGHT_AMPLITUDE: f64 = 2.404_825_557_695_773;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub orientation: Quat,
    pub position: Vector3<f64>,
    /// Controls held over the interval ending at `t` (zero for the first sample).
    pub v_x: f64,
    pub w_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub rate: f64,
    pub samples: Vec<TruthSample>,
}

impl Truth {
    /// Sample whose timestamp is `t` (within 1 ns).
    pub fn at(&self, t: f64) -> Option<&TruthSample> {
        let t0 = self.samples.first()?.t;
        let k = ((t - t0) * self.rate).round();
        if k < 0.0 {
            return None;
        }
        self.samples
            .get(k as usize)
            .filter(|s| (s.t - t).abs() < 1e-9)
    }

    pub fn trajectory(&self) -> Vec<TrajectoryPoint> {
        self.samples
            .iter()
            .map(|s| TrajectoryPoint {
                t: s.t,
                position: s.position,
                orientation: s.orientation,
            })
            .collect()
    }

    /// Truth from a uniformly sampled trajectory (controls unknown, left zero).
    pub fn from_trajectory(points: &[TrajectoryPoint]) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("truth trajectory needs at least two samples"));
        }
        let rate = 1.0 / (points[1].t - points[0].t);
        positive("truth sample rate", rate)?;
        let samples = points
            .iter()
            .map(|p| TruthSample {
                t: p.t,
                orientation: p.orientation,
                position: p.position,
                v_x: 0.0,
                w_z: 0.0,
            })
            .collect();
        Ok(Self { rate, samples })
    }

    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }
}

/// Straight or constant-curvature stretch of a planar path.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    length: f64,
    curvature: f64,
}

enum Steering {
    /// Curvature as a function of arc length; straight past the end.
    Path(Vec<Segment>),
    /// Yaw rate as a function of time.
    Sine { amplitude: f64, period: f64 },
}

struct Controls {
    steering: Steering,
    speed: Box<dyn Fn(f64) -> f64>,
}

impl Controls {
    /// Yaw rate over `[t0, t0 + dt]` starting at arc length `s0`. Along a path
    /// this is the exact heading change divided by `dt`, so headings never drift.
    fn yaw_rate(&self, t0: f64, dt: f64, s0: f64, v: f64) -> f64 {
        match &self.steering {
            Steering::Path(segs) => (heading(segs, s0 + v * dt) - heading(segs, s0)) / dt,
            Steering::Sine { amplitude, period } => {
                let w = 2.0 * PI / period;
                amplitude * w * (w * (t0 + dt / 2.0)).cos()
            }
        }
    }
}

/// Heading accumulated along the segments up to arc length `s`.
fn heading(segs: &[Segment], s: f64) -> f64 {
    let mut start = 0.0;
    let mut h = 0.0;
    for seg in segs {
        if s < start + seg.length {
            return h + seg.curvature * (s - start);
        }
        h += seg.curvature * seg.length;
        start += seg.length;
    }
    h
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {x}")))
    }
}

/// Straights joined by circular fillets; the first leg defines +x.
fn waypoint_segments(points: &[[f64; 2]], radius: f64) -> Result<Vec<Segment>> {
    if points.len() < 2 {
        return Err(invalid("need at least two waypoints"));
    }
    let pts: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    let legs: Vec<Vector2<f64>> = pts.windows(2).map(|w| w[1] - w[0]).collect();
    if legs.iter().any(|l| l.norm() < 1e-9) {
        return Err(invalid("repeated waypoint"));
    }
    // signed turn at each interior corner and the tangent length it consumes
    let turns: Vec<f64> = legs
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].normalize(), w[1].normalize());
            (a.x * b.y - a.y * b.x).atan2(a.dot(&b))
        })
        .collect();
    if turns.iter().any(|d| d.abs() > PI - 1e-6) {
        return Err(invalid("waypoints reverse direction"));
    }
    let cut: Vec<f64> = turns
        .iter()
        .map(|d| radius * (d.abs() / 2.0).tan())
        .collect();
    let mut segs = Vec::new();
    for (i, leg) in legs.iter().enumerate() {
        let before = if i > 0 { cut[i - 1] } else { 0.0 };
        let after = cut.get(i).copied().unwrap_or(0.0);
        let straight = leg.norm() - before - after;
        if straight < -1e-9 {
            return Err(invalid(format!(
                "leg {i} is too short for a turn radius of {radius} m"
            )));
        }
        segs.push(Segment {
            length: straight.max(0.0),
            curvature: 0.0,
        });
        if let Some(&d) = turns.get(i) {
            if d != 0.0 {
                segs.push(Segment {
                    length: radius * d.abs(),
                    curvature: d.signum() / radius,
                });
            }
        }
    }
    Ok(segs)
}

fn build_controls(spec: &TrajectorySpec, duration: f64, rng: &mut impl Rng) -> Result<Controls> {
    Ok(match spec.clone() {
        TrajectorySpec::Straight { speed } => {
            positive("speed", speed)?;
            Controls {
                steering: Steering::Path(Vec::new()),
                speed: Box::new(move |_| speed),
            }
        }
        TrajectorySpec::Circle { radius, speed } => {
            positive("radius", radius)?;
            positive("speed", speed)?;
            let seg = Segment {
                length: f64::INFINITY,
                curvature: 1.0 / radius,
            };
            Controls {
                steering: Steering::Path(vec![seg]),
                speed: Box::new(move |_| speed),
            }
        }
        TrajectorySpec::FigureEight { speed, period } => {
            positive("speed", speed)?;
            positive("period", period)?;
            Controls {
                steering: Steering::Sine {
                    amplitude: FIGURE_EIGHT_AMPLITUDE,
                    period,
                },
                speed: Box::new(move |_| speed),
            }
        }
        TrajectorySpec::Urban {
            speed_min,
            speed_max,
            straight_min,
            straight_max,
            turn_radius_min,
            turn_radius_max,
        } => {
            positive("speed_min", speed_min)?;
            positive("straight_min", straight_min)?;
            positive("turn_radius_min", turn_radius_min)?;
            if speed_max < speed_min
                || straight_max < straight_min
                || turn_radius_max < turn_radius_min
            {
                return Err(invalid("urban ranges must have min <= max"));
            }
            let needed = speed_max * duration + straight_max;
            let mut segs = Vec::new();
            let mut total = 0.0;
            while total < needed {
                let straight = rng.random_range(straight_min..=straight_max);
                let radius = rng.random_range(turn_radius_min..=turn_radius_max);
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                segs.push(Segment {
                    length: straight,
                    curvature: 0.0,
                });
                segs.push(Segment {
                    length: radius * PI / 2.0,
                    curvature: side / radius,
                });
                total += straight + radius * PI / 2.0;
            }
            let base = rng.random_range(speed_min..=speed_max);
            let phase = rng.random_range(0.0..2.0 * PI);
            let speed = move |t: f64| {
                (base * (1.0 + 0.1 * (2.0 * PI * t / 60.0 + phase).sin()))
                    .clamp(speed_min, speed_max)
            };
            Controls {
                steering: Steering::Path(segs),
                speed: Box::new(speed),
            }
        }
        TrajectorySpec::Waypoints {
            points,
            speed,
            turn_radius,
        } => {
            positive("speed", speed)?;
            positive("turn_radius", turn_radius)?;
            Controls {
                steering: Steering::Path(waypoint_segments(&points, turn_radius)?),
                speed: Box::new(move |_| speed),
            }
        }
    })
}

/// Integrate a trajectory at `rate` Hz for `duration` seconds.
///
/// With `process_noise`, the unmeasured channels (`ω_x`, `ω_y`, `v_y`, `v_z`)
/// receive per-interval Gaussian draws with the given deviations, the motion the
/// filter's noise model allows for.
pub fn generate_truth_with(
    spec: &TrajectorySpec,
    duration: f64,
    rate: f64,
    process_noise: Option<&OdomNoise>,
    rng: &mut impl Rng,
) -> Result<Truth> {
    positive("duration", duration)?;
    positive("rate", rate)?;
    let controls = build_controls(spec, duration, rng)?;
    let steps = (duration * rate).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let (mut q, mut p) = (Quat::identity(), Vector3::zeros());
    let mut s = 0.0;
    samples.push(TruthSample {
        t: 0.0,
        orientation: q,
        position: p,
        v_x: 0.0,
        w_z: 0.0,
    });
    let draw = |sigma: f64, rng: &mut dyn rand::RngCore| -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
        } else {
            0.0
        }
    };
    for k in 1..=steps {
        let t0 = (k - 1) as f64 / rate;
        let t = k as f64 / rate;
        let dt = t - t0;
        let v = (controls.speed)(t0 + dt / 2.0);
        let w = controls.yaw_rate(t0, dt, s, v);
        let (mut omega, mut vel) = (Vector3::new(0.0, 0.0, w), Vector3::new(v, 0.0, 0.0));
        if let Some(n) = process_noise {
            omega.x = draw(n.sigma_wx, rng);
            omega.y = draw(n.sigma_wy, rng);
            vel.y = draw(n.sigma_vy, rng);
            vel.z = draw(n.sigma_vz, rng);
        }
        (q, p) = propagate_pose(&q, &p, &omega, &vel, dt);
        s += v * dt;
        samples.push(TruthSample {
            t,
            orientation: q,
            position: p,
            v_x: v,
            w_z: w,
        });
    }
    Ok(Truth { rate, samples })
}

/// Ground truth for a scenario, at the encoder rate.
pub fn generate_truth(sc: &SimScenario) -> Result<Truth> {
    sc.validate()?;
    let mut rng = super::stream_rng(sc.seed, super::STREAM_TRUTH);
    let noise = sc.truth_process_noise.then_some(&sc.odom_noise);
    generate_truth_with(
        &sc.trajectory,
        sc.duration,
        sc.rates.encoder,
        noise,
        &mut rng,
    )
}
