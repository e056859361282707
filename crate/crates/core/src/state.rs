//! MSCKF state vector, error-state layout and joint covariance.
//!
//! Error-state ordering:
//! `[δθ_VO(3), δp_O(3), δp_f(3·F), (δθ_Oi, δp_Oi)(6·N), δθ_EV(D), δp_V(0|3)]`.
//!
//! Attitude errors of the body and clone orientations are local:
//! `q = q̂ ⊗ Exp(δθ)`. The 3-DoF extrinsic rotation uses a global error,
//! `R_EV = Exp(-δθ) R̂_EV`, under which the GPS Jacobian is `[R_EV ^Vp_G]×`.
//! One-DoF extrinsic errors are additive on the active Euler angle.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{invalid, Error, Result};
use crate::geometry::{exp_so3, EulerAxis, EulerZYX, Quat, Rot3};

/// A landmark estimated jointly with the poses.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeature {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// Current odometer pose in the VWO frame plus in-state landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    /// Rotation taking odometer-frame vectors into {V}.
    pub orientation: Quat,
    pub position: Vector3<f64>,
    pub features: Vec<StateFeature>,
}

impl Default for NavState {
    fn default() -> Self {
        Self {
            orientation: Quat::identity(),
            position: Vector3::zeros(),
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseClone {
    pub orientation: Quat,
    pub position: Vector3<f64>,
    pub timestamp: f64,
}

/// Which part of the {V}→{E} rotation is estimated online.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtrinsicMode {
    ThreeDof,
    OneDof(EulerAxis),
    Fixed,
}

impl ExtrinsicMode {
    pub fn rotation_dim(self) -> usize {
        match self {
            ExtrinsicMode::ThreeDof => 3,
            ExtrinsicMode::OneDof(_) => 1,
            ExtrinsicMode::Fixed => 0,
        }
    }
}

/// Transform between the VWO frame {V} and the ENU frame {E}, plus the GPS lever arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicBlock {
    mode: ExtrinsicMode,
    angles: EulerZYX,
    rotation: Rot3,
    pub p_v_in_e: Vector3<f64>,
    /// Antenna position in the odometer frame; known, never estimated.
    pub p_g_in_o: Vector3<f64>,
    estimate_translation: bool,
}

impl ExtrinsicBlock {
    pub fn new(
        mode: ExtrinsicMode,
        angles: EulerZYX,
        p_v_in_e: Vector3<f64>,
        p_g_in_o: Vector3<f64>,
        estimate_translation: bool,
    ) -> Self {
        Self {
            mode,
            angles,
            rotation: angles.to_rotation(),
            p_v_in_e,
            p_g_in_o,
            estimate_translation,
        }
    }

    pub fn from_rotation(
        mode: ExtrinsicMode,
        rotation: Rot3,
        p_v_in_e: Vector3<f64>,
        p_g_in_o: Vector3<f64>,
        estimate_translation: bool,
    ) -> Self {
        let angles = EulerZYX::from_rotation(&rotation);
        // one-DoF and fixed modes are defined by their angles
        let rotation = if mode == ExtrinsicMode::ThreeDof {
            rotation
        } else {
            angles.to_rotation()
        };
        Self {
            mode,
            angles,
            rotation,
            p_v_in_e,
            p_g_in_o,
            estimate_translation,
        }
    }

    /// Identity transform, nothing estimated.
    pub fn identity() -> Self {
        Self::new(
            ExtrinsicMode::Fixed,
            EulerZYX::default(),
            Vector3::zeros(),
            Vector3::zeros(),
            false,
        )
    }

    pub fn mode(&self) -> ExtrinsicMode {
        self.mode
    }

    pub fn angles(&self) -> EulerZYX {
        self.angles
    }

    /// `R_EV`, maps {V} vectors into {E}.
    pub fn rotation(&self) -> &Rot3 {
        &self.rotation
    }

    pub fn estimates_translation(&self) -> bool {
        self.estimate_translation
    }

    pub fn rotation_dim(&self) -> usize {
        self.mode.rotation_dim()
    }

    pub fn translation_dim(&self) -> usize {
        if self.estimate_translation {
            3
        } else {
            0
        }
    }

    /// Map a point from {V} into {E}.
    pub fn to_enu(&self, p_in_v: &Vector3<f64>) -> Vector3<f64> {
        self.p_v_in_e + self.rotation * p_in_v
    }

    fn correct_rotation(&mut self, delta: &[f64]) {
        match self.mode {
            ExtrinsicMode::ThreeDof => {
                let d = Vector3::new(delta[0], delta[1], delta[2]);
                let r = exp_so3(&-d).to_rotation_matrix() * self.rotation;
                self.rotation = crate::geometry::orthonormalize(r.matrix());
                self.angles = EulerZYX::from_rotation(&self.rotation);
            }
            ExtrinsicMode::OneDof(axis) => {
                *self.angles.get_mut(axis) += delta[0];
                self.rotation = self.angles.to_rotation();
            }
            ExtrinsicMode::Fixed => {}
        }
    }
}

/// Offsets of every block of the error state. All index arithmetic goes through here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_features: usize,
    pub n_clones: usize,
    pub ext_rotation_dim: usize,
    pub ext_translation_dim: usize,
}

impl StateLayout {
    pub const NAV_ATTITUDE: usize = 0;
    pub const NAV_POSITION: usize = 3;
    pub const NAV_DIM: usize = 6;
    pub const CLONE_DIM: usize = 6;

    pub fn feature(&self, i: usize) -> usize {
        debug_assert!(i <= self.n_features);
        Self::NAV_DIM + 3 * i
    }

    pub fn clones_start(&self) -> usize {
        Self::NAV_DIM + 3 * self.n_features
    }

    pub fn clone_attitude(&self, j: usize) -> usize {
        debug_assert!(j <= self.n_clones);
        self.clones_start() + Self::CLONE_DIM * j
    }

    pub fn clone_position(&self, j: usize) -> usize {
        self.clone_attitude(j) + 3
    }

    pub fn ext_rotation(&self) -> usize {
        self.clones_start() + Self::CLONE_DIM * self.n_clones
    }

    pub fn ext_translation(&self) -> usize {
        self.ext_rotation() + self.ext_rotation_dim
    }

    pub fn dim(&self) -> usize {
        self.ext_translation() + self.ext_translation_dim
    }
}

/// Counters for events that are reported rather than raised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub psd_violations: usize,
    pub gps_accepted: usize,
    pub gps_rejected: usize,
    pub gps_dropped: usize,
    pub tracks_used: usize,
    pub tracks_gated: usize,
    pub tracks_degenerate: usize,
    pub empty_visual_updates: usize,
    pub extrinsic_resets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub nav: NavState,
    pub clones: Vec<PoseClone>,
    pub extrinsic: ExtrinsicBlock,
    pub cov: DMatrix<f64>,
    /// Time of the nav state.
    pub time: f64,
    pub max_clones: usize,
    pub diagnostics: Diagnostics,
}

/// Default sliding-window length: one clone per 10 Hz image, about one second.
pub const DEFAULT_WINDOW: usize = 11;

impl FilterState {
    /// New filter with no clones or features. `nav_cov` is the 6×6 pose covariance,
    /// `ext_cov` the covariance of the estimated extrinsic components.
    pub fn new(
        time: f64,
        nav: NavState,
        extrinsic: ExtrinsicBlock,
        nav_cov: &DMatrix<f64>,
        ext_cov: &DMatrix<f64>,
        max_clones: usize,
    ) -> Result<Self> {
        if !nav.features.is_empty() {
            return Err(invalid(
                "initial state cannot carry features; add them with add_feature",
            ));
        }
        let ext_dim = extrinsic.rotation_dim() + extrinsic.translation_dim();
        if nav_cov.shape() != (6, 6) || ext_cov.shape() != (ext_dim, ext_dim) {
            return Err(invalid(format!(
                "covariance shapes {:?}/{:?} do not match layout (6, {ext_dim})",
                nav_cov.shape(),
                ext_cov.shape()
            )));
        }
        if max_clones == 0 {
            return Err(invalid("window size must be positive"));
        }
        let mut cov = DMatrix::zeros(6 + ext_dim, 6 + ext_dim);
        cov.view_mut((0, 0), (6, 6)).copy_from(nav_cov);
        cov.view_mut((6, 6), (ext_dim, ext_dim)).copy_from(ext_cov);
        let mut s = Self {
            nav,
            clones: Vec::new(),
            extrinsic,
            cov,
            time,
            max_clones,
            diagnostics: Diagnostics::default(),
        };
        s.finish_op();
        Ok(s)
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_features: self.nav.features.len(),
            n_clones: self.clones.len(),
            ext_rotation_dim: self.extrinsic.rotation_dim(),
            ext_translation_dim: self.extrinsic.translation_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn clone_index(&self, t: f64) -> Option<usize> {
        self.clones.iter().position(|c| c.timestamp == t)
    }

    /// Append a copy of the current pose as a clone stamped `t`.
    pub fn augment_clone(&mut self, t: f64) -> Result<()> {
        if self.clones.len() >= self.max_clones {
            return Err(Error::InvalidState(format!(
                "clone window full ({} clones); marginalize first",
                self.clones.len()
            )));
        }
        if let Some(last) = self.clones.last() {
            if t <= last.timestamp {
                return Err(invalid(format!(
                    "clone time {t} not after last clone time {}",
                    last.timestamp
                )));
            }
        }
        let layout = self.layout();
        self.cov = insert_copy(
            &self.cov,
            StateLayout::NAV_ATTITUDE,
            layout.ext_rotation(),
            6,
        );
        self.clones.push(PoseClone {
            orientation: self.nav.orientation,
            position: self.nav.position,
            timestamp: t,
        });
        self.finish_op();
        Ok(())
    }

    pub fn marginalize_oldest_clone(&mut self) -> Result<()> {
        if self.clones.is_empty() {
            return Err(Error::InvalidState("no clone to marginalize".into()));
        }
        self.marginalize_clone(0)
    }

    pub fn marginalize_clone(&mut self, j: usize) -> Result<()> {
        if j >= self.clones.len() {
            return Err(Error::InvalidState(format!("no clone at index {j}")));
        }
        let off = self.layout().clone_attitude(j);
        self.cov = remove_block(&self.cov, off, 6);
        self.clones.remove(j);
        self.finish_op();
        Ok(())
    }

    /// Insert a landmark with its covariance block and cross-covariance against
    /// the current state (`cross` is `dim × 3`, ordered by the current layout).
    pub fn add_feature(
        &mut self,
        id: u64,
        position: Vector3<f64>,
        cov_ff: &DMatrix<f64>,
        cross: &DMatrix<f64>,
    ) -> Result<()> {
        let n = self.dim();
        if cov_ff.shape() != (3, 3) || cross.shape() != (n, 3) {
            return Err(invalid("feature covariance blocks have the wrong shape"));
        }
        if self.nav.features.iter().any(|f| f.id == id) {
            return Err(invalid(format!("feature {id} already in state")));
        }
        let at = self.layout().feature(self.nav.features.len());
        let mut grown = DMatrix::zeros(n + 3, n + 3);
        let map = |i: usize| if i < at { i } else { i + 3 };
        for j in 0..n {
            for i in 0..n {
                grown[(map(i), map(j))] = self.cov[(i, j)];
            }
            for k in 0..3 {
                grown[(map(j), at + k)] = cross[(j, k)];
                grown[(at + k, map(j))] = cross[(j, k)];
            }
        }
        grown.view_mut((at, at), (3, 3)).copy_from(cov_ff);
        self.cov = grown;
        self.nav.features.push(StateFeature { id, position });
        self.finish_op();
        Ok(())
    }

    pub fn remove_feature(&mut self, id: u64) -> Result<()> {
        let i = self
            .nav
            .features
            .iter()
            .position(|f| f.id == id)
            .ok_or_else(|| invalid(format!("feature {id} not in state")))?;
        let off = self.layout().feature(i);
        self.cov = remove_block(&self.cov, off, 3);
        self.nav.features.remove(i);
        self.finish_op();
        Ok(())
    }

    /// Inject an error-state correction into the mean.
    pub fn apply_correction(&mut self, dx: &DVector<f64>) -> Result<()> {
        let l = self.layout();
        if dx.len() != l.dim() {
            return Err(invalid(format!(
                "correction length {} != state dim {}",
                dx.len(),
                l.dim()
            )));
        }
        let v3 = |o: usize| Vector3::new(dx[o], dx[o + 1], dx[o + 2]);
        self.nav.orientation *= exp_so3(&v3(StateLayout::NAV_ATTITUDE));
        self.nav.orientation.renormalize();
        self.nav.position += v3(StateLayout::NAV_POSITION);
        for (i, f) in self.nav.features.iter_mut().enumerate() {
            f.position += v3(l.feature(i));
        }
        for (j, c) in self.clones.iter_mut().enumerate() {
            c.orientation *= exp_so3(&v3(l.clone_attitude(j)));
            c.orientation.renormalize();
            c.position += v3(l.clone_position(j));
        }
        let rot = l.ext_rotation();
        let rows: Vec<f64> = dx.rows(rot, l.ext_rotation_dim).iter().copied().collect();
        self.extrinsic.correct_rotation(&rows);
        if l.ext_translation_dim == 3 {
            self.extrinsic.p_v_in_e += v3(l.ext_translation());
        }
        self.finish_op();
        Ok(())
    }

    /// Symmetrize and flag (never clamp) loss of positive semi-definiteness.
    pub(crate) fn finish_op(&mut self) {
        symmetrize(&mut self.cov);
        debug_assert_eq!(self.cov.nrows(), self.dim());
        if !is_psd(&self.cov) {
            self.diagnostics.psd_violations += 1;
        }
    }

    /// Replace the extrinsic covariance block with `ext_cov` and drop its
    /// correlations with the rest of the state.
    pub fn reset_extrinsic_cov(&mut self, ext_cov: &DMatrix<f64>) -> Result<()> {
        let l = self.layout();
        let (at, d) = (l.ext_rotation(), l.ext_rotation_dim + l.ext_translation_dim);
        if ext_cov.shape() != (d, d) {
            return Err(invalid(format!(
                "extrinsic covariance {:?} does not match dimension {d}",
                ext_cov.shape()
            )));
        }
        self.cov.rows_mut(at, d).fill(0.0);
        self.cov.columns_mut(at, d).fill(0.0);
        self.cov.view_mut((at, at), (d, d)).copy_from(ext_cov);
        self.diagnostics.extrinsic_resets += 1;
        self.finish_op();
        Ok(())
    }

    /// One-sigma bounds of the extrinsic rotation error (empty when not estimated).
    pub fn extrinsic_sigma(&self) -> Vec<f64> {
        let l = self.layout();
        (0..l.ext_rotation_dim)
            .map(|k| {
                self.cov[(l.ext_rotation() + k, l.ext_rotation() + k)]
                    .max(0.0)
                    .sqrt()
            })
            .collect()
    }

    /// Line-oriented record: `t,qw,qx,qy,qz,px,py,pz,yaw,pitch,roll,n,d_1..d_n`
    /// where `d` is the covariance diagonal.
    pub fn to_record(&self) -> String {
        let q = self.nav.orientation.quaternion();
        let p = self.nav.position;
        let e = self.extrinsic.angles();
        let mut s = String::new();
        write!(
            s,
            "{:.6},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            self.time, q.w, q.i, q.j, q.k, p.x, p.y, p.z, e.yaw, e.pitch, e.roll, self.cov.nrows()
        )
        .unwrap();
        for d in self.cov.diagonal().iter() {
            write!(s, ",{d:.17e}").unwrap();
        }
        s
    }
}

/// Parsed form of [`FilterState::to_record`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub time: f64,
    pub orientation: Quat,
    pub position: Vector3<f64>,
    pub extrinsic_angles: EulerZYX,
    pub cov_diagonal: Vec<f64>,
}

impl StateRecord {
    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<f64> = line
            .trim()
            .split(',')
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| invalid(format!("bad field `{t}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if f.len() < 12 {
            return Err(invalid("record too short"));
        }
        let n = f[11] as usize;
        if f.len() != 12 + n {
            return Err(invalid(format!(
                "record declares {n} diagonal entries, has {}",
                f.len() - 12
            )));
        }
        Ok(Self {
            time: f[0],
            orientation: Quat::from_quaternion(nalgebra::Quaternion::new(f[1], f[2], f[3], f[4])),
            position: Vector3::new(f[5], f[6], f[7]),
            extrinsic_angles: EulerZYX::new(f[8], f[9], f[10]),
            cov_diagonal: f[12..].to_vec(),
        })
    }
}

pub(crate) fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Minimum eigenvalue no lower than `-1e-9 · trace`, tested by a Cholesky
/// factorization of the shifted matrix.
pub fn is_psd(p: &DMatrix<f64>) -> bool {
    if p.nrows() == 0 {
        return true;
    }
    let tr = p.trace().max(0.0);
    let shift = 1e-9 * tr + f64::MIN_POSITIVE;
    let mut shifted = p.clone();
    for i in 0..p.nrows() {
        shifted[(i, i)] += shift;
    }
    shifted.cholesky().is_some()
}

/// Grow `p` by `size` rows/cols at `dst`, filled with a copy of the block at `src`
/// (the covariance of `x ↦ [x_before, x[src..src+size], x_after]`).
pub(crate) fn insert_copy(p: &DMatrix<f64>, src: usize, dst: usize, size: usize) -> DMatrix<f64> {
    let n = p.nrows();
    debug_assert!(src + size <= dst || src >= dst);
    let map = |i: usize| {
        if i < dst {
            i
        } else if i < dst + size {
            src + (i - dst)
        } else {
            i - size
        }
    };
    DMatrix::from_fn(n + size, n + size, |i, j| p[(map(i), map(j))])
}

/// Principal submatrix without the rows/cols `[at, at + size)`.
pub(crate) fn remove_block(p: &DMatrix<f64>, at: usize, size: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let map = |i: usize| if i < at { i } else { i + size };
    DMatrix::from_fn(n - size, n - size, |i, j| p[(map(i), map(j))])
}
