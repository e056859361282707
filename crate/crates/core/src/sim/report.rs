//! Run report files.
//!
//! `records.csv` (format 1), one row per epoch:
//! `t,x,y,z,qw,qx,qy,qz,x_e,y_e,z_e,yaw,pitch,roll,sigma_0,sigma_1,sigma_2,err_0,err_1,err_2,distance_error`.
//! Positions in meters, angles in degrees. `x..z` and the quaternion are the
//! pose in {V}; `x_e..z_e` the same position mapped into {E}. `sigma_k` are the
//! 1σ of the estimated extrinsic components (blank when not estimated);
//! `err_k` and `distance_error` are blank without ground truth.
//!
//! `summary.toml` holds the format version, mode, ATE, final extrinsic and counters.
//!
//! `trajectory.csv` is the estimated {V} pose track in the same
//! `t,x,y,z,qw,qx,qy,qz` layout as the simulator's `truth.csv`.

use std::path::Path;

use serde::Serialize;

use super::metrics::Evaluation;
use super::runner::RunReport;
use crate::error::Result;
use crate::io::{write_rows_path, write_trajectory_path};

pub const FORMAT_VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

#[derive(Debug, Serialize)]
struct RecordRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    x_e: f64,
    y_e: f64,
    z_e: f64,
    yaw: f64,
    pitch: f64,
    roll: f64,
    sigma_0: Option<f64>,
    sigma_1: Option<f64>,
    sigma_2: Option<f64>,
    err_0: Option<f64>,
    err_1: Option<f64>,
    err_2: Option<f64>,
    distance_error: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub format_version: u32,
    pub mode: String,
    pub records: usize,
    pub ate: Option<f64>,
    pub final_angles_deg: [f64; 3],
    pub final_sigma_deg: Vec<f64>,
    pub final_extrinsic_error_deg: Option<[f64; 3]>,
    pub p_v_in_e: [f64; 3],
    pub gps_accepted: usize,
    pub gps_rejected: usize,
    pub gps_dropped: usize,
    pub tracks_used: usize,
    pub tracks_gated: usize,
    pub tracks_degenerate: usize,
    pub psd_violations: usize,
    pub extrinsic_resets: usize,
    pub warnings: Vec<String>,
}

pub fn summary(report: &RunReport, eval: Option<&Evaluation>) -> Summary {
    let d = &report.diagnostics;
    let last = report.records.last();
    Summary {
        format_version: FORMAT_VERSION,
        mode: report.mode.to_string(),
        records: report.records.len(),
        ate: eval.map(|e| e.ate),
        final_angles_deg: report.final_extrinsic.angles().to_degrees(),
        final_sigma_deg: last
            .map(|r| r.sigma.iter().map(|s| s.to_degrees()).collect())
            .unwrap_or_default(),
        final_extrinsic_error_deg: eval.map(|e| e.final_extrinsic_error().map(f64::to_degrees)),
        p_v_in_e: report.final_extrinsic.p_v_in_e.into(),
        gps_accepted: d.gps_accepted,
        gps_rejected: d.gps_rejected,
        gps_dropped: d.gps_dropped,
        tracks_used: d.tracks_used,
        tracks_gated: d.tracks_gated,
        tracks_degenerate: d.tracks_degenerate,
        psd_violations: d.psd_violations,
        extrinsic_resets: d.extrinsic_resets,
        warnings: report.warnings.clone(),
    }
}

/// Write `records.csv`, `summary.toml` and `trajectory.csv` into `dir`.
pub fn write_report(dir: &Path, report: &RunReport, eval: Option<&Evaluation>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<RecordRow> = report
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let q = r.orientation.quaternion();
            let [yaw, pitch, roll] = r.angles.to_degrees();
            let sigma = |k: usize| r.sigma.get(k).map(|s| s.to_degrees());
            let err = |k: usize| eval.map(|e| e.extrinsic_error[i][k].to_degrees());
            RecordRow {
                t: r.t,
                x: r.position.x,
                y: r.position.y,
                z: r.position.z,
                qw: q.w,
                qx: q.i,
                qy: q.j,
                qz: q.k,
                x_e: r.position_enu.x,
                y_e: r.position_enu.y,
                z_e: r.position_enu.z,
                yaw,
                pitch,
                roll,
                sigma_0: sigma(0),
                sigma_1: sigma(1),
                sigma_2: sigma(2),
                err_0: err(0),
                err_1: err(1),
                err_2: err(2),
                distance_error: eval.map(|e| e.distance_error[i]),
            }
        })
        .collect();
    write_rows_path(&dir.join(RECORDS_FILE), &rows)?;
    write_trajectory_path(&dir.join(TRAJECTORY_FILE), &report.vwo_trajectory())?;
    let text = toml::to_string_pretty(&summary(report, eval)).expect("summary serializes");
    std::fs::write(dir.join(SUMMARY_FILE), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, RunMode, SimScenario, TrajectorySpec};

    #[test]
    fn writes_versioned_files() {
        let mut sc = SimScenario {
            duration: 5.0,
            trajectory: TrajectorySpec::Straight { speed: 3.0 },
            ..Default::default()
        };
        sc.features.count = 100;
        let (report, eval) =
            run_scenario(&sc, RunMode::GpsVwo1Dof(crate::geometry::EulerAxis::Yaw)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &report, Some(&eval)).unwrap();
        let csv = std::fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
        assert!(csv.starts_with(
            "t,x,y,z,qw,qx,qy,qz,x_e,y_e,z_e,yaw,pitch,roll,sigma_0,sigma_1,sigma_2,err_0"
        ));
        assert_eq!(csv.lines().count(), report.records.len() + 1);
        let summary: toml::Value =
            toml::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap())
                .unwrap();
        assert_eq!(summary["format_version"].as_integer(), Some(1));
        assert_eq!(summary["mode"].as_str(), Some("gps-vwo-1dof-yaw"));
        let traj = crate::io::read_trajectory_path(&dir.path().join(TRAJECTORY_FILE)).unwrap();
        assert_eq!(traj.len(), report.records.len());
    }
}
