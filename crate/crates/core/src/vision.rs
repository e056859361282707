//! Camera measurement model, triangulation and the MSCKF visual update.
//!
//! Measurements are normalized image coordinates `(x/z, y/z)` of the
//! feature expressed in the camera frame:
//! `^Cp_f = R_CO · R_VOᵀ · (^Vp_f − ^Vp_O) + ^Cp_O`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::ekf::{chi2_95, ekf_update, mahalanobis};
use crate::error::{invalid, Error, Result};
use crate::geometry::{skew, Quat, Rot3};
use crate::state::{FilterState, PoseClone};

/// Minimum camera-frame depth accepted by the projection.
pub const MIN_DEPTH: f64 = 1e-6;

/// Rigid transform from the odometer frame {O} to the camera frame {C}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    /// `^C_O R`: maps odometer-frame vectors into the camera frame.
    pub r_co: Rot3,
    /// Odometer origin expressed in the camera frame.
    pub p_o_in_c: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        Self {
            r_co: Rot3::identity(),
            p_o_in_c: Vector3::zeros(),
        }
    }

    /// Camera looking along the vehicle's forward axis (+x of {O}),
    /// image x to the right and image y down, mounted at `center_in_o`.
    pub fn forward_facing(center_in_o: Vector3<f64>) -> Self {
        let r_co = Rot3::from_matrix_unchecked(Matrix3::new(
            0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0,
        ));
        Self {
            r_co,
            p_o_in_c: -(r_co * center_in_o),
        }
    }

    /// Camera optical center in the odometer frame.
    pub fn center_in_o(&self) -> Vector3<f64> {
        -(self.r_co.inverse() * self.p_o_in_c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub uv: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    pub observations: Vec<Observation>,
}

/// Feature `p_f` (in {V}) expressed in the camera frame of a body pose.
pub fn camera_point(
    orientation: &Quat,
    position: &Vector3<f64>,
    p_f: &Vector3<f64>,
    ext: &CameraExtrinsics,
) -> Vector3<f64> {
    ext.r_co * (orientation.inverse() * (p_f - position)) + ext.p_o_in_c
}

pub fn project(
    orientation: &Quat,
    position: &Vector3<f64>,
    p_f: &Vector3<f64>,
    ext: &CameraExtrinsics,
) -> Result<Vector2<f64>> {
    let pc = camera_point(orientation, position, p_f, ext);
    if pc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    Ok(Vector2::new(pc.x / pc.z, pc.y / pc.z))
}

/// Derivatives of [`project`] with respect to the body attitude error
/// (local, `q ⊗ Exp(δθ)`), the body position and the feature position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionJacobian {
    pub attitude: Matrix2x3<f64>,
    pub position: Matrix2x3<f64>,
    pub feature: Matrix2x3<f64>,
}

pub fn project_with_jacobian(
    orientation: &Quat,
    position: &Vector3<f64>,
    p_f: &Vector3<f64>,
    ext: &CameraExtrinsics,
) -> Result<(Vector2<f64>, ProjectionJacobian)> {
    let r_t = orientation.inverse().to_rotation_matrix().into_inner();
    let r_co = ext.r_co.matrix();
    let local = r_t * (p_f - position);
    let pc = r_co * local + ext.p_o_in_c;
    if pc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let iz = 1.0 / pc.z;
    let dpi = Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
    let d_feature = dpi * r_co * r_t;
    let jac = ProjectionJacobian {
        attitude: dpi * r_co * skew(&local),
        position: -d_feature,
        feature: d_feature,
    };
    Ok((Vector2::new(pc.x * iz, pc.y * iz), jac))
}

/// Minimum spread of camera centers accepted by [`triangulate`].
pub const MIN_BASELINE: f64 = 1e-3;
const GN_ITERATIONS: usize = 5;

/// Linear least-squares ray intersection refined by Gauss-Newton on the
/// reprojection error. `poses[i]` is the body pose of `track.observations[i]`.
pub fn triangulate(
    track: &FeatureTrack,
    poses: &[PoseClone],
    ext: &CameraExtrinsics,
) -> Result<Vector3<f64>> {
    if track.observations.len() < 2 || poses.len() != track.observations.len() {
        return Err(Error::DegenerateGeometry(format!(
            "feature {} needs ≥ 2 observations with poses ({} obs, {} poses)",
            track.id,
            track.observations.len(),
            poses.len()
        )));
    }
    let c_o = ext.center_in_o();
    let r_oc = ext.r_co.inverse();
    let centers: Vec<Vector3<f64>> = poses
        .iter()
        .map(|p| p.position + p.orientation * c_o)
        .collect();
    let baseline = centers
        .iter()
        .flat_map(|a| centers.iter().map(move |b| (a - b).norm()))
        .fold(0.0, f64::max);
    if baseline < MIN_BASELINE {
        return Err(Error::DegenerateGeometry(format!(
            "feature {}: baseline {baseline:.2e} m",
            track.id
        )));
    }

    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for ((obs, pose), c) in track.observations.iter().zip(poses).zip(&centers) {
        let d = (pose.orientation * (r_oc * Vector3::new(obs.uv.x, obs.uv.y, 1.0))).normalize();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * c;
    }
    let eig = a.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if lo < 1e-8 * hi {
        return Err(Error::DegenerateGeometry(format!(
            "feature {}: parallel rays",
            track.id
        )));
    }
    let mut x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateGeometry("singular ray system".into()))?;

    let cost = |x: &Vector3<f64>| -> Option<f64> {
        let mut c = 0.0;
        for (obs, pose) in track.observations.iter().zip(poses) {
            let z = project(&pose.orientation, &pose.position, x, ext).ok()?;
            c += (obs.uv - z).norm_squared();
        }
        Some(c)
    };
    let mut current = cost(&x).ok_or_else(|| {
        Error::DegenerateGeometry(format!("feature {}: behind a camera", track.id))
    })?;
    for _ in 0..GN_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (obs, pose) in track.observations.iter().zip(poses) {
            let (z, jac) = project_with_jacobian(&pose.orientation, &pose.position, &x, ext)?;
            let r = obs.uv - z;
            jtj += jac.feature.transpose() * jac.feature;
            jtr += jac.feature.transpose() * r;
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&jtr)) else {
            break;
        };
        let candidate = x + step;
        match cost(&candidate) {
            Some(c) if c <= current => {
                x = candidate;
                current = c;
                if step.norm() < 1e-12 * (1.0 + x.norm()) {
                    break;
                }
            }
            _ => break,
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateGeometry(format!(
            "feature {}: diverged",
            track.id
        )));
    }
    Ok(x)
}

/// Orthonormal basis of the left nullspace of `h` (columns `n` with `nᵀ h = 0`).
pub fn left_nullspace(h: &DMatrix<f64>) -> DMatrix<f64> {
    let m = h.nrows();
    let q = h.clone().qr().q();
    let rank = h.ncols().min(m);
    let proj = DMatrix::identity(m, m) - q.columns(0, rank) * q.columns(0, rank).transpose();
    let eig = proj.symmetric_eigen();
    let keep: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    DMatrix::from_fn(m, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Landmarks are added to the state and updated jointly with the poses.
    InState,
    /// Landmarks are marginalized by projecting on the left nullspace of their Jacobian.
    #[default]
    Nullspace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualUpdateConfig {
    pub mode: FeatureMode,
    /// Isotropic noise on normalized image coordinates.
    pub sigma_px: f64,
}

impl Default for VisualUpdateConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Nullspace,
            sigma_px: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VisualUpdateReport {
    pub used: usize,
    pub gated: usize,
    pub degenerate: usize,
    /// Tracks whose landmark was added to the state (in-state mode).
    pub initialized: usize,
}

/// Linearized reprojection residuals of one track against the clone window.
struct TrackSystem {
    r: DVector<f64>,
    h_x: DMatrix<f64>,
    h_f: DMatrix<f64>,
    p_f: Vector3<f64>,
}

fn linearize_track(
    state: &FilterState,
    track: &FeatureTrack,
    p_f: Vector3<f64>,
    ext: &CameraExtrinsics,
    feature_col: Option<usize>,
) -> Result<TrackSystem> {
    let layout = state.layout();
    let n = state.dim();
    let m = track.observations.len();
    let mut r = DVector::zeros(2 * m);
    let mut h_x = DMatrix::zeros(2 * m, n);
    let mut h_f = DMatrix::zeros(2 * m, 3);
    for (k, obs) in track.observations.iter().enumerate() {
        let j = state
            .clone_index(obs.t)
            .ok_or_else(|| invalid(format!("feature {}: no clone at t = {}", track.id, obs.t)))?;
        let c = &state.clones[j];
        let (z, jac) = project_with_jacobian(&c.orientation, &c.position, &p_f, ext)?;
        r.fixed_rows_mut::<2>(2 * k).copy_from(&(obs.uv - z));
        h_x.fixed_view_mut::<2, 3>(2 * k, layout.clone_attitude(j))
            .copy_from(&jac.attitude);
        h_x.fixed_view_mut::<2, 3>(2 * k, layout.clone_position(j))
            .copy_from(&jac.position);
        h_f.fixed_view_mut::<2, 3>(2 * k, 0).copy_from(&jac.feature);
        if let Some(col) = feature_col {
            h_x.fixed_view_mut::<2, 3>(2 * k, col)
                .copy_from(&jac.feature);
        }
    }
    Ok(TrackSystem { r, h_x, h_f, p_f })
}

fn track_poses(state: &FilterState, track: &FeatureTrack) -> Option<Vec<PoseClone>> {
    track
        .observations
        .iter()
        .map(|o| state.clone_index(o.t).map(|j| state.clones[j].clone()))
        .collect()
}

/// Stack rows from several tracks and compress them against the state dimension.
fn stack_and_compress(
    blocks: Vec<(DVector<f64>, DMatrix<f64>)>,
    n: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let rows: usize = blocks.iter().map(|(r, _)| r.len()).sum();
    let mut r = DVector::zeros(rows);
    let mut h = DMatrix::zeros(rows, n);
    let mut at = 0;
    for (rb, hb) in blocks {
        r.rows_mut(at, rb.len()).copy_from(&rb);
        h.view_mut((at, 0), hb.shape()).copy_from(&hb);
        at += rb.len();
    }
    if rows > n {
        // isotropic noise is invariant under the orthogonal compression
        let qr = h.qr();
        let q = qr.q();
        let r_small = q.transpose() * r;
        let h_small = qr.r();
        (r_small, h_small)
    } else {
        (r, h)
    }
}

/// MSCKF visual update over the given tracks. Every observation time must
/// match a clone; tracks with fewer than two usable observations are skipped.
///
/// Nullspace mode marginalizes each landmark. In-state mode updates landmarks
/// already in the state with the given observations and adds new landmarks
/// to the state, using the remaining rows to update the poses.
pub fn visual_update(
    state: &mut FilterState,
    tracks: &[FeatureTrack],
    ext: &CameraExtrinsics,
    cfg: &VisualUpdateConfig,
) -> Result<VisualUpdateReport> {
    let mut report = VisualUpdateReport::default();
    let var = cfg.sigma_px * cfg.sigma_px;
    if !(var > 0.0) {
        return Err(invalid("visual noise must be positive"));
    }
    let mut blocks = Vec::new();
    let mut new_landmarks = Vec::new();
    let in_state: HashMap<u64, usize> = state
        .nav
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.id, i))
        .collect();

    for track in tracks {
        if let (FeatureMode::InState, Some(&i)) = (cfg.mode, in_state.get(&track.id)) {
            if track.observations.is_empty() {
                continue;
            }
            let col = state.layout().feature(i);
            let p_f = state.nav.features[i].position;
            let sys = match linearize_track(state, track, p_f, ext, Some(col)) {
                Ok(s) => s,
                Err(Error::BehindCamera { .. }) => {
                    report.degenerate += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let noise = DMatrix::identity(sys.r.len(), sys.r.len()) * var;
            let (chi2, _, _) = mahalanobis(state, &sys.r, &sys.h_x, &noise)?;
            if chi2 > chi2_95(sys.r.len()) {
                report.gated += 1;
                continue;
            }
            report.used += 1;
            blocks.push((sys.r, sys.h_x));
            continue;
        }

        let Some(poses) = track_poses(state, track) else {
            return Err(invalid(format!(
                "feature {}: observation without a clone",
                track.id
            )));
        };
        let p_f = match triangulate(track, &poses, ext) {
            Ok(p) => p,
            Err(Error::DegenerateGeometry(_)) | Err(Error::BehindCamera { .. }) => {
                report.degenerate += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let sys = match linearize_track(state, track, p_f, ext, None) {
            Ok(s) => s,
            Err(Error::BehindCamera { .. }) => {
                report.degenerate += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let rows = sys.r.len();
        if rows <= 3 {
            report.degenerate += 1;
            continue;
        }
        let null = left_nullspace(&sys.h_f);
        let r0 = null.transpose() * &sys.r;
        let h0 = null.transpose() * &sys.h_x;
        let noise = DMatrix::identity(r0.len(), r0.len()) * var;
        let (chi2, _, _) = mahalanobis(state, &r0, &h0, &noise)?;
        if chi2 > chi2_95(r0.len()) {
            report.gated += 1;
            continue;
        }
        report.used += 1;
        match cfg.mode {
            FeatureMode::Nullspace => blocks.push((r0, h0)),
            FeatureMode::InState => new_landmarks.push((track, sys.p_f)),
        }
    }

    // landmark initialization, then the pose update on the remaining rows
    for (track, p_f) in new_landmarks {
        // relinearize: earlier landmarks may have grown the state
        let sys = linearize_track(state, track, p_f, ext, None)?;
        let n = state.dim();
        let qr = sys.h_f.clone().qr();
        let q1 = qr.q();
        let r1 = qr.r();
        let Some(r1_inv) = r1.clone().try_inverse() else {
            report.degenerate += 1;
            continue;
        };
        let hx1 = q1.transpose() * &sys.h_x;
        let r_top = q1.transpose() * &sys.r;
        let p_hx1t = &state.cov * hx1.transpose();
        let inner = &hx1 * &p_hx1t + DMatrix::identity(3, 3) * var;
        let cov_ff = &r1_inv * inner * r1_inv.transpose();
        let cross = -(p_hx1t * r1_inv.transpose());
        let position = sys.p_f + Vector3::from_iterator((&r1_inv * r_top).iter().copied());
        debug_assert_eq!(cross.nrows(), n);
        state.add_feature(track.id, position, &cov_ff, &cross)?;
        report.initialized += 1;
        // rows orthogonal to the landmark; feature columns are zero there
        let null = left_nullspace(&sys.h_f);
        let at = state.layout().feature(state.nav.features.len() - 1);
        let mut h = DMatrix::zeros(null.ncols(), state.dim());
        let h0 = null.transpose() * &sys.h_x;
        let map = |c: usize| if c < at { c } else { c + 3 };
        for c in 0..n {
            h.column_mut(map(c)).copy_from(&h0.column(c));
        }
        blocks.push((null.transpose() * &sys.r, h));
    }

    if blocks.is_empty() {
        state.diagnostics.empty_visual_updates += 1;
    } else {
        let n = state.dim();
        // earlier blocks may predate landmark insertion
        let blocks = blocks
            .into_iter()
            .map(|(r, h)| {
                if h.ncols() == n {
                    (r, h)
                } else {
                    (r, widen_for_landmarks(&h, state, n))
                }
            })
            .collect();
        let (r, h) = stack_and_compress(blocks, n);
        let noise = DMatrix::identity(r.len(), r.len()) * var;
        ekf_update(state, &r, &h, &noise, None)?;
    }
    state.diagnostics.tracks_used += report.used;
    state.diagnostics.tracks_gated += report.gated;
    state.diagnostics.tracks_degenerate += report.degenerate;
    Ok(report)
}

/// Re-index Jacobian columns built before new landmarks were appended.
fn widen_for_landmarks(h: &DMatrix<f64>, state: &FilterState, n: usize) -> DMatrix<f64> {
    let added = n - h.ncols();
    let at = state.layout().feature(state.nav.features.len()) - added;
    let mut out = DMatrix::zeros(h.nrows(), n);
    for c in 0..h.ncols() {
        let dst = if c < at { c } else { c + added };
        out.column_mut(dst).copy_from(&h.column(c));
    }
    out
}
