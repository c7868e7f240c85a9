use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfa::{ParamVec, TdPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub eta: f64,
    pub h: usize,
    pub delta: Vec<f64>,
    pub norm: f64,
    /// `(eta^2 H (H - 1) / 2) zeta_A zeta_theta`.
    pub second_order_bound: f64,
    /// `2 eta C_A C_proj_tilde`.
    pub crude_bound: f64,
}

/// Heterogeneity drift
/// `Delta = sum_c w_c (I - (I + eta A^(c))^H)(theta_tilde^(c) - theta*)`
/// with each `A^(c)` evaluated at `theta*`.
#[allow(clippy::too_many_arguments)]
pub fn drift_delta(
    tds_at_star: &[TdPair],
    weights: &[f64],
    theta_tildes: &[ParamVec],
    theta_star: &ParamVec,
    eta: f64,
    h: usize,
    zetas: (f64, f64),
    c_a: f64,
    c_proj_tilde: f64,
) -> Result<DriftReport> {
    if tds_at_star.len() != weights.len() || weights.len() != theta_tildes.len() {
        return Err(Error::Dimension("one weight and one theta_tilde per environment".into()));
    }
    if eta * h as f64 * c_a > 1.0 {
        log::warn!("eta H C_A = {} exceeds 1", eta * h as f64 * c_a);
    }
    let d = theta_star.dim();
    let star = theta_star.to_dvector();
    let mut delta = DVector::zeros(d);
    for ((td, w), tilde) in tds_at_star.iter().zip(weights).zip(theta_tildes) {
        let step = DMatrix::identity(d, d) + &td.a_mat * eta;
        let gamma_h = matrix_power(&step, h);
        delta += (DMatrix::identity(d, d) - gamma_h) * (tilde.to_dvector() - &star) * *w;
    }
    let hf = h as f64;
    Ok(DriftReport {
        eta,
        h,
        norm: delta.norm(),
        delta: delta.iter().copied().collect(),
        second_order_bound: eta * eta * hf * (hf - 1.0) / 2.0 * zetas.0 * zetas.1,
        crude_bound: 2.0 * eta * c_a * c_proj_tilde,
    })
}

/// `m^k` by repeated squaring.
pub fn matrix_power(m: &DMatrix<f64>, mut k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            out = &out * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    out
}
