//! Shared EKF measurement update with chi-square gating.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};
use crate::state::FilterState;

const GATE_TABLE_LEN: usize = 512;

/// 95% quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_95(dof: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..GATE_TABLE_LEN)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    ChiSquared::new(k as f64).unwrap().inverse_cdf(0.95)
                }
            })
            .collect()
    });
    if dof < GATE_TABLE_LEN {
        table[dof]
    } else {
        ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.95)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    /// Mahalanobis distance of the innovation.
    pub chi2: f64,
    pub threshold: f64,
}

/// Innovation covariance `H P Hᵀ + R` and the Mahalanobis distance of `r`.
pub fn mahalanobis(
    state: &FilterState,
    r: &DVector<f64>,
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let ph_t = &state.cov * h.transpose();
    let s = h * &ph_t + noise;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("innovation covariance is not positive definite"))?;
    let chi2 = r.dot(&chol.solve(r));
    Ok((chi2, s, ph_t))
}

/// EKF update of `state` with residual `r = z - h(x̂)`, Jacobian `h` and noise covariance.
///
/// With `gate` set, the update is skipped (state left bit-identical) when the
/// innovation fails the 95% chi-square test with `r.len()` (or the given) degrees of freedom.
pub fn ekf_update(
    state: &mut FilterState,
    r: &DVector<f64>,
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    gate: Option<usize>,
) -> Result<UpdateOutcome> {
    let n = state.dim();
    if h.ncols() != n || h.nrows() != r.len() || noise.shape() != (r.len(), r.len()) {
        return Err(invalid(format!(
            "update shapes: H {:?}, r {}, R {:?}, state {n}",
            h.shape(),
            r.len(),
            noise.shape()
        )));
    }
    if r.is_empty() {
        return Ok(UpdateOutcome {
            accepted: false,
            chi2: 0.0,
            threshold: 0.0,
        });
    }
    let (chi2, s, ph_t) = mahalanobis(state, r, h, noise)?;
    let threshold = gate.map(chi2_95).unwrap_or(f64::INFINITY);
    if chi2 > threshold {
        return Ok(UpdateOutcome {
            accepted: false,
            chi2,
            threshold,
        });
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| invalid("innovation covariance is not positive definite"))?;
    // K = P Hᵀ S⁻¹
    let k = chol.solve(&ph_t.transpose()).transpose();
    let dx = &k * r;
    // Joseph form (I-KH) P (I-KH)ᵀ + K R Kᵀ, expanded to avoid n³ products
    let a = &state.cov - &k * ph_t.transpose();
    let a_ht = &a * h.transpose();
    let cov = &a - &a_ht * k.transpose() + (&k * noise) * k.transpose();
    state.cov = cov;
    state.apply_correction(&dx)?;
    Ok(UpdateOutcome {
        accepted: true,
        chi2,
        threshold,
    })
}
