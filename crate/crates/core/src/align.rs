//! Rigid (rotation + translation, no scale) alignment of point sets and
//! nearest-timestamp association of trajectories.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Rot3;

/// `dst ≈ rotation · src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rot3,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rot3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Least-squares rigid transform mapping `src` onto `dst` (Umeyama, no scale).
///
/// Fails with [`Error::DegenerateAlignment`] when `src` has fewer than three
/// points or is (nearly) collinear.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::DegenerateAlignment(format!(
            "{} vs {} points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need 3 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cross += cd * cs.transpose();
        spread += cs * cs.transpose();
    }
    let mut ev = spread.symmetric_eigen().eigenvalues.as_slice().to_vec();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] < 1e-10 * ev[0] {
        return Err(Error::DegenerateAlignment("trajectory is collinear".into()));
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let rotation = Rot3::from_matrix_unchecked(r);
    Ok(RigidTransform {
        rotation,
        translation: mu_d - rotation * mu_s,
    })
}

/// Pairs `(i, j)` with `|a[i] - b[j]| ≤ tol`, each `a[i]` matched to its nearest `b[j]`.
/// Both slices must be sorted ascending.
pub fn associate(a: &[f64], b: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if b.is_empty() {
        return out;
    }
    let mut j = 0;
    for (i, &t) in a.iter().enumerate() {
        while j + 1 < b.len() && (b[j + 1] - t).abs() <= (b[j] - t).abs() {
            j += 1;
        }
        if (b[j] - t).abs() <= tol {
            out.push((i, j));
        }
    }
    out
}
