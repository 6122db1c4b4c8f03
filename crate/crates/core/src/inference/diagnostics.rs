//! Model comparison criteria: DIC, CPO and the logarithmic score.

use std::sync::OnceLock;

use super::fit::{FitResult, PointMarginals};
use super::gaussian::{Engine, GaussianApprox};
use super::numerics::{gauss_hermite, log_sum_exp};
use super::{Dataset, Likelihood};
use crate::error::{Error, Result};

/// Quadrature order for the CPO integrals.
pub const CPO_NODES: usize = 61;
/// A CPO integral is flagged when a single node carries more than this share.
pub const CPO_DOMINANCE: f64 = 0.9;

fn nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static GH: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GH.get_or_init(|| gauss_hermite(CPO_NODES))
}

fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// Log CPO of one observation from its Gaussian marginal `N(m, v)`.
///
/// The leave-one-out marginal is the cavity obtained by removing the
/// quadratic likelihood term (`slope`, `curvature` at `eta_hat`). Returns
/// `None` when the cavity is improper, and a flag when the quadrature is
/// dominated by one node.
pub fn observation_log_cpo(
    lik: Likelihood,
    y: f64,
    e: f64,
    m: f64,
    v: f64,
    eta_hat: f64,
    slope: f64,
    curvature: f64,
) -> (Option<f64>, bool) {
    let prec = 1.0 / v - curvature;
    if !(prec > 0.0) || !v.is_finite() {
        return (None, false);
    }
    let lin = m / v - slope - curvature * eta_hat;
    let (cm, cv) = (lin / prec, 1.0 / prec);
    let (x, w) = nodes();
    let sd = (2.0 * v).sqrt();
    let terms: Vec<f64> = x
        .iter()
        .zip(w)
        .map(|(&xk, &wk)| {
            let eta = m + sd * xk;
            wk.ln() - 0.5 * std::f64::consts::PI.ln() + lik.log_density(y, e, eta) + log_normal_density(eta, cm, cv)
                - log_normal_density(eta, m, v)
        })
        .collect();
    let total = log_sum_exp(&terms);
    if !total.is_finite() {
        return (None, false);
    }
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (Some(total), (top - total).exp() > CPO_DOMINANCE)
}

/// Log CPO of every observation at one grid point.
pub fn point_cpo(engine: &Engine<'_>, approx: &GaussianApprox, mean: &[f64], var: &[f64]) -> (Vec<Option<f64>>, Vec<bool>) {
    let data = engine.data();
    (0..data.len())
        .map(|i| {
            observation_log_cpo(
                engine.likelihood(),
                data.y()[i],
                data.expected()[i],
                mean[i],
                var[i],
                approx.eta[i],
                approx.slope[i],
                approx.curvature[i],
            )
        })
        .unzip()
}

/// Combines per-point CPO values with the harmonic identity
/// `1/CPO_i = Σ_k w_k / CPO_ik`. Returns `(cpo, unstable)` per observation
/// and the logarithmic score.
pub fn combine_cpo(weights: &[f64], points: &[PointMarginals]) -> (Vec<(Option<f64>, bool)>, f64) {
    let n = points.first().map_or(0, |p| p.log_cpo.len());
    let per: Vec<(Option<f64>, bool)> = (0..n)
        .map(|i| {
            let mut terms = Vec::with_capacity(points.len());
            let mut present = 0.0;
            let mut unstable = false;
            for (p, &w) in points.iter().zip(weights) {
                if let Some(l) = p.log_cpo[i] {
                    terms.push(w.ln() - l);
                    present += w;
                }
                unstable |= w > 1e-6 && (p.cpo_unstable[i] || p.log_cpo[i].is_none());
            }
            if present < 0.5 || terms.is_empty() {
                return (None, unstable);
            }
            let log_inv = log_sum_exp(&terms) - present.ln();
            (Some((-log_inv).exp()), unstable)
        })
        .collect();
    let logs: Vec<f64> = per.iter().filter_map(|c| c.0).map(f64::ln).collect();
    let ls = if logs.is_empty() { f64::NAN } else { -logs.iter().sum::<f64>() / logs.len() as f64 };
    (per, ls)
}

/// CPO per region and the logarithmic score `-mean(log CPO)` over the
/// regions where it is available.
pub fn cpo_logscore(fit: &FitResult) -> (Vec<Option<f64>>, f64) {
    let cpo: Vec<Option<f64>> = fit.regions.iter().map(|r| r.cpo).collect();
    let logs: Vec<f64> = cpo.iter().flatten().map(|c| c.ln()).collect();
    let ls = if logs.is_empty() { f64::NAN } else { -logs.iter().sum::<f64>() / logs.len() as f64 };
    (cpo, ls)
}

fn deviance(lik: Likelihood, data: &Dataset, eta: &[f64]) -> f64 {
    -2.0 * (0..data.len()).map(|i| lik.log_density(data.y()[i], data.expected()[i], eta[i])).sum::<f64>()
}

/// DIC and effective number of parameters, with the deviance focused on
/// the posterior mean of the linear predictor.
pub fn dic(fit: &FitResult, data: &Dataset) -> Result<(f64, f64)> {
    if data.len() != fit.n_regions {
        return Err(Error::DimensionMismatch { expected: fit.n_regions, got: data.len() });
    }
    let w = fit.weights();
    let pts = &fit.point_marginals;
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut mean_dev = 0.0;
    let mut eta_bar = vec![0.0; data.len()];
    for i in 0..data.len() {
        let (y, e) = (data.y()[i], data.expected()[i]);
        let m: f64 = pts.iter().zip(&w).map(|(p, w)| w * p.eta_mean[i]).sum();
        eta_bar[i] = m;
        let expected_ll = match fit.likelihood {
            Likelihood::Poisson => {
                let mean_exp: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.eta_mean[i] + 0.5 * p.eta_var[i]).exp()).sum();
                let t = if y > 0.0 { y * (e.ln() + m) } else { 0.0 };
                t - e * mean_exp - statrs::function::gamma::ln_gamma(y + 1.0)
            }
            Likelihood::Gaussian { sd } => {
                let second: f64 = pts
                    .iter()
                    .zip(&w)
                    .map(|(p, w)| w * (p.eta_var[i] + (y - e.ln() - p.eta_mean[i]).powi(2)))
                    .sum();
                -0.5 * second / (sd * sd) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        };
        mean_dev -= 2.0 * expected_ll;
    }
    let p_d = mean_dev - deviance(fit.likelihood, data, &eta_bar);
    Ok((mean_dev + p_d, p_d))
}

/// Root mean squared difference between the SMR and the posterior mean risk.
pub fn rmse(fit: &FitResult, data: &Dataset) -> f64 {
    let smr = data.smr();
    let sse: f64 = smr.iter().zip(&fit.regions).map(|(s, r)| (s - r.theta_mean).powi(2)).sum();
    (sse / smr.len() as f64).sqrt()
}
