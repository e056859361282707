//! Trajectory and calibration error metrics.

use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::runner::RunReport;
use super::truth::Truth;
use crate::align::{align_rigid, associate};
use crate::error::{invalid, Error, Result};
use crate::geometry::{log_so3, wrap_angle, EulerZYX, Quat};
use crate::gps::{GpsFix, ASSOCIATION_TOLERANCE};
use crate::io::TrajectoryPoint;
use crate::state::{ExtrinsicBlock, ExtrinsicMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    None,
    Se3,
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Alignment::None),
            "se3" => Ok(Alignment::Se3),
            _ => Err(invalid(format!("unknown alignment {s:?} (none|se3)"))),
        }
    }
}

/// RMS position error between time-associated poses (nearest timestamp within
/// 0.05 s), optionally after rigidly aligning the estimate onto the truth.
pub fn compute_ate(
    est: &[TrajectoryPoint],
    truth: &[TrajectoryPoint],
    alignment: Alignment,
) -> Result<f64> {
    let te: Vec<f64> = est.iter().map(|p| p.t).collect();
    let tt: Vec<f64> = truth.iter().map(|p| p.t).collect();
    let pairs = associate(&te, &tt, ASSOCIATION_TOLERANCE);
    if pairs.len() < 3 {
        return Err(invalid(format!(
            "only {} time-associated poses",
            pairs.len()
        )));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est[i].position).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| truth[j].position).collect();
    let moved: Vec<Vector3<f64>> = match alignment {
        Alignment::None => src,
        Alignment::Se3 => {
            let tf = align_rigid(&src, &dst)?;
            src.iter().map(|p| tf.apply(p)).collect()
        }
    };
    let sq: f64 = moved
        .iter()
        .zip(&dst)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sq / moved.len() as f64).sqrt())
}

/// Extrinsic rotation error. Euler-angle differences (wrapped) for fixed and
/// one-DoF estimates; the global rotation vector `Log(R̂ Rᵀ)` for three-DoF.
pub fn extrinsic_error(
    mode: ExtrinsicMode,
    est_angles: &EulerZYX,
    est_rotation: &Rotation3<f64>,
    truth: &EulerZYX,
) -> [f64; 3] {
    match mode {
        ExtrinsicMode::ThreeDof => {
            let d = est_rotation * truth.to_rotation().inverse();
            let v = log_so3(&Quat::from_rotation_matrix(&d));
            [v.x, v.y, v.z]
        }
        _ => [
            wrap_angle(est_angles.yaw - truth.yaw),
            wrap_angle(est_angles.pitch - truth.pitch),
            wrap_angle(est_angles.roll - truth.roll),
        ],
    }
}

/// Per-epoch comparison of a run against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub t: Vec<f64>,
    /// Distance between estimated and true odometer origin in {E}.
    pub distance_error: Vec<f64>,
    pub extrinsic_error: Vec<[f64; 3]>,
    /// ATE in {E}: unaligned for GPS modes, SE(3)-aligned for VWO.
    pub ate: f64,
}

impl Evaluation {
    pub fn final_extrinsic_error(&self) -> [f64; 3] {
        *self.extrinsic_error.last().expect("non-empty evaluation")
    }

    /// Distance errors with `t` inside `[a, b)`.
    pub fn distance_between(&self, a: f64, b: f64) -> Vec<f64> {
        self.t
            .iter()
            .zip(&self.distance_error)
            .filter(|(t, _)| **t >= a && **t < b)
            .map(|(_, d)| *d)
            .collect()
    }
}

pub fn evaluate(
    report: &RunReport,
    truth: &Truth,
    true_ext: &ExtrinsicBlock,
) -> Result<Evaluation> {
    if report.records.is_empty() {
        return Err(invalid("run produced no records"));
    }
    let mut t = Vec::with_capacity(report.records.len());
    let mut dist = Vec::with_capacity(report.records.len());
    let mut ext = Vec::with_capacity(report.records.len());
    let mut truth_enu = Vec::with_capacity(report.records.len());
    let mode = report.final_extrinsic.mode();
    for r in &report.records {
        let s = truth
            .at(r.t)
            .ok_or_else(|| invalid(format!("no truth at t = {}", r.t)))?;
        let p = true_ext.to_enu(&s.position);
        t.push(r.t);
        dist.push((r.position_enu - p).norm());
        ext.push(extrinsic_error(
            mode,
            &r.angles,
            &r.rotation,
            &true_ext.angles(),
        ));
        truth_enu.push(TrajectoryPoint {
            t: r.t,
            position: p,
            orientation: s.orientation,
        });
    }
    let alignment = if report.mode.uses_gps() {
        Alignment::None
    } else {
        Alignment::Se3
    };
    let ate = compute_ate(&report.enu_trajectory(), &truth_enu, alignment)?;
    Ok(Evaluation {
        t,
        distance_error: dist,
        extrinsic_error: ext,
        ate,
    })
}

/// Distance between each fix and the true antenna position.
pub fn raw_gps_errors(gps: &[GpsFix], truth: &Truth, true_ext: &ExtrinsicBlock) -> Vec<(f64, f64)> {
    gps.iter()
        .filter_map(|f| {
            let s = truth.at(f.t)?;
            let antenna = true_ext.to_enu(&(s.position + s.orientation * true_ext.p_g_in_o));
            Some((f.t, (f.p_g_in_e - antenna).norm()))
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
