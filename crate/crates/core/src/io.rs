//! CSV playback and export.
//!
//! | stream     | header                        |
//! |------------|-------------------------------|
//! | encoder    | `t,dm_l,dm_r`                 |
//! | features   | `t,feature_id,u,v`            |
//! | gps        | `t,x,y,z,var_x,var_y,var_z`   |
//! | trajectory | `t,x,y,z,qw,qx,qy,qz`         |
//!
//! Encoder rows hold tick increments since the previous row; the first row
//! only marks the start time and its increments are ignored.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Quat;
use crate::gps::GpsFix;
use crate::wheel::WheelEncoderSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderRow {
    pub t: f64,
    pub dm_l: f64,
    pub dm_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub t: f64,
    pub feature_id: u64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub var_z: f64,
}

impl From<&GpsFix> for GpsRow {
    fn from(f: &GpsFix) -> Self {
        Self {
            t: f.t,
            x: f.p_g_in_e.x,
            y: f.p_g_in_e.y,
            z: f.p_g_in_e.z,
            var_x: f.var.x,
            var_y: f.var.y,
            var_z: f.var.z,
        }
    }
}

impl From<&GpsRow> for GpsFix {
    fn from(r: &GpsRow) -> Self {
        GpsFix {
            t: r.t,
            p_g_in_e: Vector3::new(r.x, r.y, r.z),
            var: Vector3::new(r.var_x, r.var_y, r.var_z),
        }
    }
}

/// Timestamped pose: `^Vp_O` and the body orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub position: Vector3<f64>,
    pub orientation: Quat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn write_rows<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_path<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_rows(std::fs::File::open(path)?)
}

pub fn write_rows_path<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(std::io::BufWriter::new(std::fs::File::create(path)?), rows)
}

fn check_monotone(name: &str, ts: impl Iterator<Item = f64>) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for t in ts {
        if !t.is_finite() || t < last {
            return Err(invalid(format!(
                "{name} timestamps must be finite and non-decreasing (saw {t} after {last})"
            )));
        }
        last = t;
    }
    Ok(())
}

/// Encoder rows to propagation samples; the first row sets the epoch.
pub fn encoder_samples(rows: &[EncoderRow]) -> Result<Vec<WheelEncoderSample>> {
    check_monotone("encoder", rows.iter().map(|r| r.t))?;
    Ok(rows
        .windows(2)
        .map(|w| WheelEncoderSample {
            t: w[1].t,
            dt: w[1].t - w[0].t,
            dm_l: w[1].dm_l,
            dm_r: w[1].dm_r,
        })
        .collect())
}

pub fn gps_fixes(rows: &[GpsRow]) -> Result<Vec<GpsFix>> {
    check_monotone("gps", rows.iter().map(|r| r.t))?;
    rows.iter()
        .map(|r| {
            let f = GpsFix::from(r);
            f.validate()?;
            Ok(f)
        })
        .collect()
}

/// One camera frame: its timestamp and the normalized coordinates seen in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub features: Vec<(u64, Vector2<f64>)>,
}

/// Group feature rows into frames by timestamp (rows must be time-ordered).
pub fn frames(rows: &[FeatureRow]) -> Result<Vec<Frame>> {
    check_monotone("feature", rows.iter().map(|r| r.t))?;
    let mut out: Vec<Frame> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(f) if f.t == r.t => f.features.push((r.feature_id, Vector2::new(r.u, r.v))),
            _ => out.push(Frame {
                t: r.t,
                features: vec![(r.feature_id, Vector2::new(r.u, r.v))],
            }),
        }
    }
    Ok(out)
}

pub fn frame_rows(frames: &[Frame]) -> Vec<FeatureRow> {
    frames
        .iter()
        .flat_map(|f| {
            f.features.iter().map(move |(id, uv)| FeatureRow {
                t: f.t,
                feature_id: *id,
                u: uv.x,
                v: uv.y,
            })
        })
        .collect()
}

pub fn write_trajectory(writer: impl Write, traj: &[TrajectoryPoint]) -> Result<()> {
    let rows: Vec<TrajectoryRow> = traj
        .iter()
        .map(|p| {
            let q = p.orientation.quaternion();
            TrajectoryRow {
                t: p.t,
                x: p.position.x,
                y: p.position.y,
                z: p.position.z,
                qw: q.w,
                qx: q.i,
                qy: q.j,
                qz: q.k,
            }
        })
        .collect();
    write_rows(writer, &rows)
}

pub fn read_trajectory(reader: impl Read) -> Result<Vec<TrajectoryPoint>> {
    let rows: Vec<TrajectoryRow> = read_rows(reader)?;
    check_monotone("trajectory", rows.iter().map(|r| r.t))?;
    Ok(rows
        .iter()
        .map(|r| TrajectoryPoint {
            t: r.t,
            position: Vector3::new(r.x, r.y, r.z),
            orientation: unit(Quaternion::new(r.qw, r.qx, r.qy, r.qz)),
        })
        .collect())
}

/// Keep already-normalized quaternions bit-exact.
fn unit(q: Quaternion<f64>) -> Quat {
    if (q.norm() - 1.0).abs() < 1e-12 {
        Quat::new_unchecked(q)
    } else {
        Quat::from_quaternion(q)
    }
}

pub fn write_trajectory_path(path: &Path, traj: &[TrajectoryPoint]) -> Result<()> {
    write_trajectory(std::io::BufWriter::new(std::fs::File::create(path)?), traj)
}

pub fn read_trajectory_path(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    read_trajectory(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;

    #[test]
    fn gps_round_trip() {
        let fixes = vec![
            GpsFix {
                t: 0.0,
                p_g_in_e: Vector3::new(1.0, 2.0, 3.0),
                var: Vector3::new(1.0, 1.0, 4.0),
            },
            GpsFix {
                t: 0.2,
                p_g_in_e: Vector3::new(-1.5, 0.1, 1e-9),
                var: Vector3::new(0.5, 0.5, 2.0),
            },
        ];
        let rows: Vec<GpsRow> = fixes.iter().map(GpsRow::from).collect();
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,y,z,var_x,var_y,var_z\n"));
        let back = gps_fixes(&read_rows::<GpsRow>(&buf[..]).unwrap()).unwrap();
        assert_eq!(back, fixes);
    }

    #[test]
    fn encoder_first_row_is_epoch() {
        let text = "t,dm_l,dm_r\n0.0,0,0\n0.01,10.5,11\n0.02,10,9\n";
        let s = encoder_samples(&read_rows(text.as_bytes()).unwrap()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].t, s[0].dm_l, s[0].dm_r), (0.01, 10.5, 11.0));
        assert!((s[1].dt - 0.01).abs() < 1e-15);
    }

    #[test]
    fn out_of_order_rejected() {
        let text = "t,dm_l,dm_r\n0.0,0,0\n0.02,1,1\n0.01,1,1\n";
        assert!(encoder_samples(&read_rows(text.as_bytes()).unwrap()).is_err());
    }

    #[test]
    fn feature_rows_group_into_frames() {
        let text = "t,feature_id,u,v\n0.1,3,0.1,0.2\n0.1,4,0.0,0.0\n0.2,3,0.11,0.2\n";
        let f = frames(&read_rows(text.as_bytes()).unwrap()).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].features.len(), 2);
        assert_eq!(frame_rows(&f).len(), 3);
    }

    #[test]
    fn trajectory_round_trip() {
        let traj: Vec<_> = (0..5)
            .map(|k| TrajectoryPoint {
                t: k as f64 * 0.1,
                position: Vector3::new(k as f64, 0.5, -0.25),
                orientation: exp_so3(&Vector3::new(0.0, 0.1, k as f64 * 0.3)),
            })
            .collect();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        assert_eq!(read_trajectory(&buf[..]).unwrap(), traj);
    }
}
