//! Observability laboratory: stacked Lie-derivative gradients of the
//! camera / unit-norm / GPS measurement functions, numerical rank tests,
//! and the straight-line Riccati system for the 3DoF extrinsic rotation.
//!
//! The quaternion here is the JPL global-to-local quaternion `q = [q_v, q_4]`
//! of `^O_V R`, kept as four independent coordinates so that the unit-norm
//! constraint appears as its own measurement.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4x3, Vector3, Vector4};

use crate::error::{invalid, Error, Result};
use crate::geometry::{exp_so3, skew, EulerZYX};
use crate::state::ExtrinsicMode;
use crate::vision::CameraExtrinsics;

/// `C(q)` for a (not necessarily unit) JPL quaternion; quadratic in `q`.
pub fn jpl_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let qv = q.xyz();
    let q4 = q[3];
    Matrix3::identity() * (q4 * q4 - qv.dot(&qv)) - skew(&qv) * (2.0 * q4)
        + qv * qv.transpose() * 2.0
}

/// `∂(C(q) p) / ∂q`, bilinear in `(q, p)`.
pub fn d_rotate(q: &Vector4<f64>, p: &Vector3<f64>) -> Matrix3x4<f64> {
    let qv = q.xyz();
    let q4 = q[3];
    let dv = -p * qv.transpose() * 2.0
        + skew(p) * (2.0 * q4)
        + Matrix3::identity() * (2.0 * qv.dot(p))
        + qv * p.transpose() * 2.0;
    let d4 = p * (2.0 * q4) - qv.cross(p) * 2.0;
    let mut out = Matrix3x4::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&dv);
    out.set_column(3, &d4);
    out
}

/// `∂(C(q)ᵀ p) / ∂q`.
pub fn d_rotate_transpose(q: &Vector4<f64>, p: &Vector3<f64>) -> Matrix3x4<f64> {
    let qv = q.xyz();
    let q4 = q[3];
    let dv = -p * qv.transpose() * 2.0 - skew(p) * (2.0 * q4)
        + Matrix3::identity() * (2.0 * qv.dot(p))
        + qv * p.transpose() * 2.0;
    let d4 = p * (2.0 * q4) + qv.cross(p) * 2.0;
    let mut out = Matrix3x4::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&dv);
    out.set_column(3, &d4);
    out
}

/// `Ξ(q)` with `q̇ = ½ Ξ(q) ω`.
pub fn xi(q: &Vector4<f64>) -> Matrix4x3<f64> {
    let qv = q.xyz();
    let mut out = Matrix4x3::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * q[3] + skew(&qv)));
    out.fixed_view_mut::<1, 3>(3, 0)
        .copy_from(&(-qv.transpose()));
    out
}

/// A sampled system state for the observability analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilitySystem {
    /// JPL quaternion of `^O_V R`, `[x, y, z, w]`.
    pub q: Vector4<f64>,
    pub p_o: Vector3<f64>,
    pub p_f: Vector3<f64>,
    /// Extrinsic rotation angles (the 1DoF active angle is read from here).
    pub angles: EulerZYX,
    pub p_v: Vector3<f64>,
    pub camera: CameraExtrinsics,
    pub mode: ExtrinsicMode,
}

impl ObservabilitySystem {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ExtrinsicMode::Fixed {
            return Err(invalid(
                "observability analysis needs a 1DoF or 3DoF extrinsic rotation",
            ));
        }
        Ok(())
    }

    pub fn rotation_dim(&self) -> usize {
        self.mode.rotation_dim()
    }

    /// Number of state coordinates: `4 + 3 + 3 + D + 3`.
    pub fn dim(&self) -> usize {
        13 + self.rotation_dim()
    }

    pub fn r_ev(&self) -> Matrix3<f64> {
        *self.angles.to_rotation().matrix()
    }

    /// State vector; the 3DoF rotation coordinates are a perturbation
    /// `R_EV = Exp(−δθ) R̂_EV` about the sample, so they are zero here.
    pub fn state_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x.fixed_rows_mut::<4>(0).copy_from(&self.q);
        x.fixed_rows_mut::<3>(4).copy_from(&self.p_o);
        x.fixed_rows_mut::<3>(7).copy_from(&self.p_f);
        if let ExtrinsicMode::OneDof(axis) = self.mode {
            x[10] = self.angles.get(axis);
        }
        let d = self.rotation_dim();
        x.fixed_rows_mut::<3>(10 + d).copy_from(&self.p_v);
        x
    }

    fn r_ev_of(&self, x: &DVector<f64>) -> Matrix3<f64> {
        match self.mode {
            ExtrinsicMode::ThreeDof => {
                let d = Vector3::new(x[10], x[11], x[12]);
                exp_so3(&-d).to_rotation_matrix().into_inner() * self.r_ev()
            }
            ExtrinsicMode::OneDof(axis) => {
                let mut a = self.angles;
                *a.get_mut(axis) = x[10];
                *a.to_rotation().matrix()
            }
            ExtrinsicMode::Fixed => self.r_ev(),
        }
    }

    fn d_r_ev(&self) -> Matrix3<f64> {
        match self.mode {
            ExtrinsicMode::OneDof(axis) => self.angles.rotation_derivative(axis),
            _ => Matrix3::zeros(),
        }
    }
}

fn parts(x: &DVector<f64>, d: usize) -> (Vector4<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    (
        x.fixed_rows::<4>(0).into_owned(),
        x.fixed_rows::<3>(4).into_owned(),
        x.fixed_rows::<3>(7).into_owned(),
        x.fixed_rows::<3>(10 + d).into_owned(),
    )
}

/// Camera measurement of the landmark, `R_CO C(q)(p_f − p_O) + ^Cp_O`.
pub fn h_camera(sys: &ObservabilitySystem, x: &DVector<f64>) -> Vector3<f64> {
    let (q, p_o, p_f, _) = parts(x, sys.rotation_dim());
    sys.camera.r_co.matrix() * jpl_rotation(&q) * (p_f - p_o) + sys.camera.p_o_in_c
}

/// Unit-norm constraint `qᵀq − 1`.
pub fn h_norm(x: &DVector<f64>) -> f64 {
    x.fixed_rows::<4>(0).norm_squared() - 1.0
}

/// GPS measurement with zero lever arm, `p_V + R_EV p_O`.
pub fn h_gps(sys: &ObservabilitySystem, x: &DVector<f64>) -> Vector3<f64> {
    let (_, p_o, _, p_v) = parts(x, sys.rotation_dim());
    p_v + sys.r_ev_of(x) * p_o
}

/// First-order Lie derivative of the camera measurement along the yaw-rate
/// field. Evaluated as a central difference along `½ Ξ(q) e₃`, which is exact
/// because the measurement is quadratic in `q`.
pub fn lie_camera_yaw(sys: &ObservabilitySystem, x: &DVector<f64>) -> Vector3<f64> {
    let q = x.fixed_rows::<4>(0).into_owned();
    let w = xi(&q) * Vector3::z() * 0.5;
    let mut plus = x.clone();
    let mut minus = x.clone();
    for k in 0..4 {
        plus[k] += w[k];
        minus[k] -= w[k];
    }
    (h_camera(sys, &plus) - h_camera(sys, &minus)) * 0.5
}

/// First-order Lie derivative of the GPS measurement along the forward-speed field.
pub fn lie_gps_forward(sys: &ObservabilitySystem, x: &DVector<f64>) -> Vector3<f64> {
    let q = x.fixed_rows::<4>(0).into_owned();
    sys.r_ev_of(x) * jpl_rotation(&q).transpose() * Vector3::x()
}

/// Labeled row groups of the observability matrix.
pub const ROW_GROUPS: [(&str, usize); 5] = [
    ("camera", 3),
    ("unit-norm", 1),
    ("gps", 3),
    ("camera-yaw-rate", 3),
    ("gps-forward-speed", 3),
];

/// Column blocks: `(name, start, width)` for a given rotation dimension.
pub fn column_blocks(d: usize) -> [(&'static str, usize, usize); 5] {
    [
        ("q", 0, 4),
        ("p_O", 4, 3),
        ("p_f", 7, 3),
        ("theta_EV", 10, d),
        ("p_V", 10 + d, 3),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityMatrix {
    /// `13 × (13 + D)`.
    pub matrix: DMatrix<f64>,
    pub rotation_dim: usize,
    /// `Y`, the extrinsic-rotation block of the forward-speed row group.
    pub y: DMatrix<f64>,
}

impl ObservabilityMatrix {
    pub fn block(&self, name: &str) -> Option<DMatrix<f64>> {
        column_blocks(self.rotation_dim)
            .iter()
            .find(|b| b.0 == name)
            .map(|&(_, c, w)| self.matrix.columns(c, w).into_owned())
    }
}

/// Analytic observability matrix at the sample.
pub fn analytic_gradients(sys: &ObservabilitySystem) -> Result<ObservabilityMatrix> {
    sys.validate()?;
    let d = sys.rotation_dim();
    let n = sys.dim();
    let q = sys.q;
    let c = jpl_rotation(&q);
    let r_co = *sys.camera.r_co.matrix();
    let r_ev = sys.r_ev();
    let p = sys.p_f - sys.p_o;
    let w = xi(&q) * Vector3::z() * 0.5;
    let mut o = DMatrix::zeros(13, n);

    // camera
    o.view_mut((0, 0), (3, 4))
        .copy_from(&(r_co * d_rotate(&q, &p)));
    o.view_mut((0, 4), (3, 3)).copy_from(&(-r_co * c));
    o.view_mut((0, 7), (3, 3)).copy_from(&(r_co * c));
    // unit norm
    o.view_mut((3, 0), (1, 4)).copy_from(&(q.transpose() * 2.0));
    // gps
    o.view_mut((4, 4), (3, 3)).copy_from(&r_ev);
    let h_theta = match sys.mode {
        ExtrinsicMode::ThreeDof => {
            DMatrix::from_column_slice(3, 3, skew(&(r_ev * sys.p_o)).as_slice())
        }
        _ => DMatrix::from_column_slice(3, 1, (sys.d_r_ev() * sys.p_o).as_slice()),
    };
    o.view_mut((4, 10), (3, d)).copy_from(&h_theta);
    o.view_mut((4, 10 + d), (3, 3))
        .copy_from(&Matrix3::identity());
    // camera along the yaw-rate field: Γ, −Υ, Υ
    let mut upsilon = Matrix3::zeros();
    for k in 0..3 {
        upsilon.set_column(k, &(r_co * d_rotate(&q, &Vector3::ith(k, 1.0)) * w));
    }
    let mut gamma = Matrix3x4::zeros();
    for j in 0..4 {
        let e = Vector4::ith(j, 1.0);
        let we = xi(&e) * Vector3::z() * 0.5;
        gamma.set_column(j, &(r_co * (d_rotate(&e, &p) * w + d_rotate(&q, &p) * we)));
    }
    o.view_mut((7, 0), (3, 4)).copy_from(&gamma);
    o.view_mut((7, 4), (3, 3)).copy_from(&(-upsilon));
    o.view_mut((7, 7), (3, 3)).copy_from(&upsilon);
    // gps along the forward-speed field: X, Y
    let ct_e1 = c.transpose() * Vector3::x();
    o.view_mut((10, 0), (3, 4))
        .copy_from(&(r_ev * d_rotate_transpose(&q, &Vector3::x())));
    let y = match sys.mode {
        ExtrinsicMode::ThreeDof => {
            DMatrix::from_column_slice(3, 3, skew(&(r_ev * ct_e1)).as_slice())
        }
        _ => DMatrix::from_column_slice(3, 1, (sys.d_r_ev() * ct_e1).as_slice()),
    };
    o.view_mut((10, 10), (3, d)).copy_from(&y);
    Ok(ObservabilityMatrix {
        matrix: o,
        rotation_dim: d,
        y,
    })
}

const FD_STEP: f64 = 1e-5;

/// Observability matrix by central differences of the Lie derivatives.
pub fn numeric_gradients(sys: &ObservabilitySystem) -> Result<DMatrix<f64>> {
    sys.validate()?;
    let x0 = sys.state_vector();
    let n = sys.dim();
    let stack = |x: &DVector<f64>| -> DVector<f64> {
        let mut v = DVector::zeros(13);
        v.fixed_rows_mut::<3>(0).copy_from(&h_camera(sys, x));
        v[3] = h_norm(x);
        v.fixed_rows_mut::<3>(4).copy_from(&h_gps(sys, x));
        v.fixed_rows_mut::<3>(7).copy_from(&lie_camera_yaw(sys, x));
        v.fixed_rows_mut::<3>(10)
            .copy_from(&lie_gps_forward(sys, x));
        v
    };
    let mut o = DMatrix::zeros(13, n);
    for k in 0..n {
        let mut plus = x0.clone();
        let mut minus = x0.clone();
        plus[k] += FD_STEP;
        minus[k] -= FD_STEP;
        o.set_column(k, &((stack(&plus) - stack(&minus)) / (2.0 * FD_STEP)));
    }
    Ok(o)
}

/// Relative agreement required between analytic and numeric rows.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// Analytic observability matrix, cross-checked against finite differences
/// row group by row group.
pub fn lie_gradients(sys: &ObservabilitySystem) -> Result<ObservabilityMatrix> {
    let analytic = analytic_gradients(sys)?;
    let numeric = numeric_gradients(sys)?;
    cross_check(&analytic, &numeric)?;
    Ok(analytic)
}

/// Compare every (row group, column block) pair; the first disagreement is
/// reported by name.
pub fn cross_check(analytic: &ObservabilityMatrix, numeric: &DMatrix<f64>) -> Result<()> {
    let mut row = 0;
    for (name, rows) in ROW_GROUPS {
        let a = analytic.matrix.rows(row, rows);
        let b = numeric.rows(row, rows);
        for (block, c, w) in column_blocks(analytic.rotation_dim) {
            let (ab, bb) = (a.columns(c, w), b.columns(c, w));
            let err = (ab - bb).norm();
            if err > GRADIENT_TOLERANCE * ab.norm().max(1.0) {
                return Err(Error::InternalConsistency {
                    block: format!("{name}/{block}"),
                    detail: format!("analytic vs numeric differ by {err:.3e}"),
                });
            }
        }
        row += rows;
    }
    Ok(())
}

/// Full SVD `(σ, U, V)` with σ in descending order. nalgebra's bidiagonal
/// SVD loses accuracy on these sparse, rank-deficient stacks (errors up to
/// 1e-2 on unit-scale entries), so this goes through faer.
fn svd_full(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let f = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = f.svd().expect("SVD of a finite matrix converges");
    let s = svd.S().column_vector();
    let sigma = (0..r.min(c)).map(|i| s[i]).collect();
    let (u, v) = (svd.U(), svd.V());
    (
        sigma,
        DMatrix::from_fn(r, r, |i, j| u[(i, j)]),
        DMatrix::from_fn(c, c, |i, j| v[(i, j)]),
    )
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    f.singular_values()
        .expect("SVD of a finite matrix converges")
}

/// Singular-value rank with the relative threshold `1e-8·σ_max` of `reference`.
fn rank_against(m: &DMatrix<f64>, reference: f64) -> usize {
    singular_values(m)
        .iter()
        .filter(|&&s| s > RANK_THRESHOLD * reference)
        .count()
}

pub const RANK_THRESHOLD: f64 = 1e-8;

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Columns of `m` projected onto the orthogonal complement of span(`others`).
fn project_out(m: &DMatrix<f64>, others: &DMatrix<f64>, reference: f64) -> DMatrix<f64> {
    if others.ncols() == 0 {
        return m.clone();
    }
    let (sigma, u, _) = svd_full(others);
    let rank = sigma
        .iter()
        .filter(|&&s| s > RANK_THRESHOLD * reference)
        .count();
    let basis = u.columns(0, rank);
    m - basis * (basis.transpose() * m)
}

fn gather(o: &DMatrix<f64>, d: usize, names: &[&str]) -> DMatrix<f64> {
    let blocks: Vec<_> = column_blocks(d)
        .into_iter()
        .filter(|b| names.contains(&b.0))
        .collect();
    let width = blocks.iter().map(|b| b.2).sum();
    let mut out = DMatrix::zeros(o.nrows(), width);
    let mut at = 0;
    for (_, c, w) in blocks {
        out.columns_mut(at, w).copy_from(&o.columns(c, w));
        at += w;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rotation_dim: usize,
    pub full_rank: usize,
    /// Dimension of the right nullspace of the whole matrix.
    pub nullspace_dim: usize,
    /// Orthonormal nullspace basis, one column per unobservable direction.
    pub nullspace: DMatrix<f64>,
    /// Rank of each column block on its own.
    pub block_ranks: Vec<(&'static str, usize)>,
    /// Rank of the extrinsic-rotation block after removing the span of the
    /// position, landmark and extrinsic-translation blocks.
    pub rotation_rank: usize,
    /// Same, removing the span of every other block including the quaternion.
    pub rotation_rank_strict: usize,
    /// Rank of the extrinsic-translation block after removing every other block.
    pub translation_rank: usize,
    /// Frobenius norm of `Y`.
    pub y_norm: f64,
}

pub fn rank_report(o: &ObservabilityMatrix) -> RankReport {
    let m = &o.matrix;
    let d = o.rotation_dim;
    let reference = largest_singular_value(m);
    let (sigma, _, v) = svd_full(m);
    let full_rank = sigma
        .iter()
        .filter(|&&s| s > RANK_THRESHOLD * reference)
        .count();
    // columns of V past the rank span the nullspace, including the extra
    // columns of a wide matrix
    let n = m.ncols();
    let nullspace = v.columns(full_rank, n - full_rank).into_owned();

    let block_ranks = column_blocks(d)
        .iter()
        .map(|&(name, c, w)| (name, rank_against(&m.columns(c, w).into_owned(), reference)))
        .collect();
    let theta = gather(m, d, &["theta_EV"]);
    let rotation_rank = rank_against(
        &project_out(&theta, &gather(m, d, &["p_O", "p_f", "p_V"]), reference),
        reference,
    );
    let rotation_rank_strict = rank_against(
        &project_out(
            &theta,
            &gather(m, d, &["q", "p_O", "p_f", "p_V"]),
            reference,
        ),
        reference,
    );
    let translation_rank = rank_against(
        &project_out(
            &gather(m, d, &["p_V"]),
            &gather(m, d, &["q", "p_O", "p_f", "theta_EV"]),
            reference,
        ),
        reference,
    );
    RankReport {
        rotation_dim: d,
        full_rank,
        nullspace_dim: n - full_rank,
        nullspace,
        block_ranks,
        rotation_rank,
        rotation_rank_strict,
        translation_rank,
        y_norm: o.y.norm(),
    }
}

/// Draw a generic sample: random unit quaternion, positions and extrinsics,
/// resampled while `‖Y‖ < 1e-6`.
pub fn random_system(
    rng: &mut impl rand::Rng,
    mode: ExtrinsicMode,
    camera: CameraExtrinsics,
) -> ObservabilitySystem {
    loop {
        let mut q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if q.norm() < 1e-3 {
            continue;
        }
        q.normalize_mut();
        let mut v = || Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0));
        let (p_o, p_f, p_v) = (v(), v(), v());
        let angles = EulerZYX::new(
            rng.random_range(-3.1..3.1),
            rng.random_range(-1.4..1.4),
            rng.random_range(-3.1..3.1),
        );
        let sys = ObservabilitySystem {
            q,
            p_o,
            p_f,
            angles,
            p_v,
            camera,
            mode,
        };
        let y_norm = match analytic_gradients(&sys) {
            Ok(o) => o.y.norm(),
            Err(_) => return sys,
        };
        if y_norm >= 1e-6 {
            return sys;
        }
    }
}

/// Sampled covariance diagonals of the straight-line Riccati system.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiTrace {
    pub t: Vec<f64>,
    pub diag: Vec<[f64; 3]>,
    /// Largest `|P − Pᵀ|` entry seen after any step.
    pub max_asymmetry: f64,
    pub final_cov: Matrix3<f64>,
}

/// `HᵀH / t²` for horizontal velocity `(v_x, v_y)`.
pub fn riccati_information(v_x: f64, v_y: f64) -> Matrix3<f64> {
    Matrix3::new(
        v_y * v_y,
        -v_x * v_y,
        0.0,
        -v_x * v_y,
        v_x * v_x,
        0.0,
        0.0,
        0.0,
        v_x * v_x + v_y * v_y,
    )
}

const MAX_HALVINGS: u32 = 10;

fn psd_ok(p: &Matrix3<f64>) -> bool {
    let tol = 1e-12 * p.trace().abs().max(1.0);
    p.iter().all(|v| v.is_finite()) && p.symmetric_eigen().eigenvalues.min() >= -tol
}

/// Integrate `Ṗ = −P M t² P` with RK4 from `t = 0` to `t_end`, recording the
/// diagonal after every step. A step that loses positive semi-definiteness is
/// retried with half the step, up to 10 times.
pub fn riccati_simulate(
    v_x: f64,
    v_y: f64,
    p0: &Matrix3<f64>,
    t_end: f64,
    dt: f64,
) -> Result<RiccatiTrace> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(invalid(format!(
            "need dt > 0 and t_end ≥ 0, got dt={dt}, t_end={t_end}"
        )));
    }
    if (p0 - p0.transpose()).amax() > 1e-12 || !psd_ok(p0) {
        return Err(invalid("initial covariance must be symmetric PSD"));
    }
    let m = riccati_information(v_x, v_y);
    let f = |t: f64, p: &Matrix3<f64>| -> Matrix3<f64> { -(p * m * p) * (t * t) };
    let rk4 = |t: f64, p: &Matrix3<f64>, h: f64| -> Matrix3<f64> {
        let k1 = f(t, p);
        let k2 = f(t + 0.5 * h, &(p + k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(p + k2 * (0.5 * h)));
        let k4 = f(t + h, &(p + k3 * h));
        p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };
    let steps = (t_end / dt).round() as usize;
    let mut p = *p0;
    let mut out = RiccatiTrace {
        t: vec![0.0],
        diag: vec![[p[(0, 0)], p[(1, 1)], p[(2, 2)]]],
        max_asymmetry: 0.0,
        final_cov: p,
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let mut next = rk4(t, &p, dt);
        let mut halvings = 0;
        while !psd_ok(&next) {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::IntegrationStep(format!(
                    "covariance lost PSD at t = {t}"
                )));
            }
            let sub = 1usize << halvings;
            let h = dt / sub as f64;
            next = p;
            for s in 0..sub {
                next = rk4(t + s as f64 * h, &next, h);
            }
        }
        p = next;
        out.max_asymmetry = out.max_asymmetry.max((p - p.transpose()).amax());
        out.t.push((k + 1) as f64 * dt);
        out.diag.push([p[(0, 0)], p[(1, 1)], p[(2, 2)]]);
    }
    out.final_cov = p;
    Ok(out)
}

/// Closed-form solution `P(t) = (I + P0 M t³/3)⁻¹ P0` of the same system.
pub fn riccati_closed_form(v_x: f64, v_y: f64, p0: &Matrix3<f64>, t: f64) -> Option<Matrix3<f64>> {
    let m = riccati_information(v_x, v_y);
    (Matrix3::identity() + p0 * m * (t * t * t / 3.0))
        .try_inverse()
        .map(|a| a * p0)
}
