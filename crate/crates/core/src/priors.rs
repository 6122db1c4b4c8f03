//! Hyperpriors for precisions and the BYM2 mixing parameter.
//!
//! The penalised-complexity prior for φ puts an exponential prior on the
//! distance `d(φ) = √(2 KLD(φ))` from the pure-iid base model. The KLD only
//! depends on the eigenvalues `γ̃` of the generalized inverse of the scaled
//! structure, so it is evaluated in closed form per eigenvalue.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::dense::eigenvalues_sym;
use crate::scaling::ScaledStructure;

/// Prior on a precision parameter τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PrecPrior {
    /// Exponential prior on σ = τ^{-1/2} with `P(σ > u) = alpha`.
    Pc { u: f64, alpha: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl PrecPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PrecPrior::Pc { u, alpha } => {
                if !(u > 0.0 && u.is_finite()) || !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Domain(format!("pc precision prior needs u > 0 and 0 < alpha < 1 (u = {u}, alpha = {alpha})")));
                }
            }
            PrecPrior::Gamma { shape, rate } => {
                if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Domain(format!("gamma prior needs shape, rate > 0 (shape = {shape}, rate = {rate})")));
                }
            }
        }
        Ok(())
    }

    /// Rate θ of the exponential prior on σ, for the PC variant.
    pub fn theta(&self) -> Option<f64> {
        match *self {
            PrecPrior::Pc { u, alpha } => Some(pc_prec_theta(u, alpha)),
            PrecPrior::Gamma { .. } => None,
        }
    }

    pub fn log_density(&self, tau: f64) -> Result<f64> {
        match *self {
            PrecPrior::Pc { u, alpha } => pc_prec_log_density(tau, pc_prec_theta(u, alpha)),
            PrecPrior::Gamma { shape, rate } => gamma_prec_log_density(tau, shape, rate),
        }
    }
}

pub fn pc_prec_theta(u: f64, alpha: f64) -> f64 {
    -alpha.ln() / u
}

/// Type-2 Gumbel log density `log(θ/2) − 1.5 log τ − θ τ^{-1/2}`.
pub fn pc_prec_log_density(tau: f64, theta: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) || !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("pc precision density needs tau, theta > 0 (tau = {tau}, theta = {theta})")));
    }
    Ok((theta / 2.0).ln() - 1.5 * tau.ln() - theta / tau.sqrt())
}

pub fn gamma_prec_log_density(tau: f64, shape: f64, rate: f64) -> Result<f64> {
    if !(tau >= 0.0 && tau.is_finite()) || !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::Domain(format!("gamma density needs tau >= 0, shape, rate > 0 (tau = {tau})")));
    }
    if tau == 0.0 {
        return Ok(match shape {
            s if s == 1.0 => rate.ln(),
            s if s > 1.0 => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        });
    }
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * tau.ln() - rate * tau)
}

pub fn uniform_phi_log_density(phi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Domain(format!("phi = {phi} outside [0, 1]")));
    }
    Ok(0.0)
}

/// `q(a) = (a − log(1+a)) / a²` and its derivative, stable near zero.
fn q_and_derivative(a: f64, one_plus_a: f64) -> (f64, f64) {
    if a.abs() < 0.1 {
        // alternating series: q = Σ (−a)^k / (k+2)
        let (mut q, mut dq, mut pow) = (0.0, 0.0, 1.0);
        for k in 0..26 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            q += sign * pow / (k as f64 + 2.0);
            if k + 1 < 26 {
                let k1 = (k + 1) as f64;
                dq -= sign * k1 * pow / (k1 + 2.0);
            }
            pow *= a;
        }
        (q, dq)
    } else {
        let q = (a - one_plus_a.ln()) / (a * a);
        let dq = 1.0 / (a * one_plus_a) - 2.0 * q / a;
        (q, dq)
    }
}

/// Distance pieces at one φ: `d`, `d'`, `d''`.
#[derive(Debug, Clone, Copy)]
struct DistanceTerms {
    d: f64,
    d1: f64,
    d2: f64,
}

fn check_phi(phi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Domain(format!("phi = {phi} outside [0, 1]")));
    }
    Ok(())
}

/// Evaluates with the complement `1 − φ` passed separately.
fn distance_terms(phi: f64, one_minus_phi: f64, gamma_tilde: &[f64]) -> Result<DistanceTerms> {
    let (mut g, mut n, mut dn, mut dg) = (0.0, 0.0, 0.0, 0.0);
    for &gt in gamma_tilde {
        let delta = gt - 1.0;
        if delta == 0.0 {
            continue;
        }
        let a = phi * delta;
        let one_plus_a = one_minus_phi + phi * gt;
        if one_plus_a <= 0.0 {
            return Err(Error::InfiniteDistance);
        }
        let (q, dq) = q_and_derivative(a, one_plus_a);
        let d2 = delta * delta;
        g += d2 * q;
        n += d2 / one_plus_a;
        dn -= d2 * delta / (one_plus_a * one_plus_a);
        dg += d2 * delta * dq;
    }
    if g == 0.0 {
        return Ok(DistanceTerms { d: 0.0, d1: 0.0, d2: 0.0 });
    }
    let sg = g.sqrt();
    Ok(DistanceTerms {
        d: phi * sg,
        d1: n / (2.0 * sg),
        d2: dn / (2.0 * sg) - n * dg / (4.0 * g * sg),
    })
}

/// `KLD(φ) = ½ Σ [(1−φ+φγ̃ᵢ) − 1 − log(1−φ+φγ̃ᵢ)]`.
pub fn phi_kld(phi: f64, gamma_tilde: &[f64]) -> Result<f64> {
    let d = phi_distance(phi, gamma_tilde)?;
    Ok(0.5 * d * d)
}

pub fn phi_distance(phi: f64, gamma_tilde: &[f64]) -> Result<f64> {
    check_phi(phi)?;
    Ok(distance_terms(phi, 1.0 - phi, gamma_tilde)?.d)
}

/// Analytic `d'(φ)`; at φ = 0 this is the finite limit `√(½ Σ (γ̃ᵢ−1)²)`.
pub fn phi_distance_derivative(phi: f64, gamma_tilde: &[f64]) -> Result<f64> {
    check_phi(phi)?;
    Ok(distance_terms(phi, 1.0 - phi, gamma_tilde)?.d1)
}

/// Rate of the exponential prior on distance so that `P(φ < u) = alpha`.
pub fn phi_pc_lambda(u: f64, alpha: f64, gamma_tilde: &[f64]) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("phi pc prior needs 0 < u < 1 and 0 < alpha < 1 (u = {u}, alpha = {alpha})")));
    }
    let d = phi_distance(u, gamma_tilde)?;
    if !(d > 0.0) {
        return Err(Error::Domain("distance at u is zero; the structure carries no information".into()));
    }
    Ok(-(1.0 - alpha).ln() / d)
}

/// `log λ − λ d(φ) + log d'(φ)`.
pub fn phi_pc_log_density(phi: f64, lambda: f64, gamma_tilde: &[f64]) -> Result<f64> {
    check_phi(phi)?;
    let t = distance_terms(phi, 1.0 - phi, gamma_tilde)?;
    Ok(lambda.ln() - lambda * t.d + t.d1.ln())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log density of `s = logit φ` under the PC prior, evaluated from
/// `log φ` and `log(1 − φ)` so it stays finite for every finite `s`.
pub fn phi_pc_log_density_logit(s: f64, lambda: f64, gamma_tilde: &[f64]) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::Domain(format!("logit phi = {s} must be finite")));
    }
    let (ln_phi, ln_om) = (-softplus(-s), -softplus(s));
    let (phi, om) = (ln_phi.exp(), ln_om.exp());
    let (mut g, mut n_om) = (0.0, 0.0);
    for &gt in gamma_tilde {
        let delta = gt - 1.0;
        if delta == 0.0 {
            continue;
        }
        let a = phi * delta;
        let (ln_one_plus_a, ratio) = if gt == 0.0 { (ln_om, 1.0) } else { ((om + phi * gt).ln(), om / (om + phi * gt)) };
        let q = if a.abs() < 0.1 { q_and_derivative(a, om + phi * gt).0 } else { (a - ln_one_plus_a) / (a * a) };
        g += delta * delta * q;
        n_om += delta * delta * ratio;
    }
    if g <= 0.0 || n_om <= 0.0 {
        return Err(Error::Domain("distance is identically zero".into()));
    }
    let d = phi * g.sqrt();
    Ok(lambda.ln() - lambda * d + ln_phi + n_om.ln() - std::f64::consts::LN_2 - 0.5 * g.ln())
}

/// `log(φ(1 − φ))` at `φ = logistic(s)`.
fn log_jacobian(s: f64) -> f64 {
    -softplus(-s) - softplus(s)
}

/// Prior CDF `P(φ' < φ) = 1 − exp(−λ d(φ))`.
pub fn phi_pc_cdf(phi: f64, lambda: f64, gamma_tilde: &[f64]) -> Result<f64> {
    Ok(-(-lambda * phi_distance(phi, gamma_tilde)?).exp_m1())
}

/// `γ̃` for a scaled structure: inverses of the non-null eigenvalues of the
/// scaled block, zeros for its null space and for every singleton region.
pub fn gamma_tilde(s: &ScaledStructure) -> Result<Vec<f64>> {
    let mut out = vec![0.0; s.singleton_regions().len()];
    if s.block_dim() > 0 {
        let eig = eigenvalues_sym(&s.q_star().to_dense())?;
        let r = s.rank_deficiency();
        out.extend(eig.iter().enumerate().map(|(i, &e)| if i < r { 0.0 } else { 1.0 / e }));
    }
    Ok(out)
}

/// Prior on the mixing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PhiPrior {
    Pc { u: f64, alpha: f64 },
    Uniform,
}

pub const TABLE_POINTS: usize = 1000;
pub const TABLE_LOGIT_RANGE: f64 = 10.0;

/// Log density of φ tabulated on an equispaced logit grid.
///
/// Values are `log π(φ)` (density with respect to φ). Between knots a cubic
/// Hermite interpolant with analytic slopes is used; where the knot values
/// are monotone the slopes are limited so the interpolant stays monotone.
/// Outside the grid the closed form is evaluated directly.
#[derive(Debug, Clone)]
pub struct PhiPriorTable {
    prior: PhiPrior,
    gamma_tilde: Vec<f64>,
    lambda: Option<f64>,
    logit: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

fn logistic_pair(s: f64) -> (f64, f64) {
    if s >= 0.0 {
        let e = (-s).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = s.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

impl PhiPriorTable {
    pub fn new(prior: PhiPrior, gamma_tilde: Vec<f64>) -> Result<Self> {
        let lambda = match prior {
            PhiPrior::Pc { u, alpha } => Some(phi_pc_lambda(u, alpha, &gamma_tilde)?),
            PhiPrior::Uniform => None,
        };
        let step = 2.0 * TABLE_LOGIT_RANGE / (TABLE_POINTS - 1) as f64;
        let logit: Vec<f64> = (0..TABLE_POINTS).map(|j| -TABLE_LOGIT_RANGE + step * j as f64).collect();
        let mut values = Vec::with_capacity(TABLE_POINTS);
        let mut slopes = Vec::with_capacity(TABLE_POINTS);
        for &s in &logit {
            let (v, dv) = match lambda {
                Some(l) => Self::exact_with_slope(s, l, &gamma_tilde)?,
                None => (0.0, 0.0),
            };
            values.push(v);
            slopes.push(dv);
        }
        limit_monotone(&values, &mut slopes, step);
        Ok(Self { prior, gamma_tilde, lambda, logit, values, slopes })
    }

    pub fn from_structure(prior: PhiPrior, s: &ScaledStructure) -> Result<Self> {
        Self::new(prior, gamma_tilde(s)?)
    }

    /// `log π(φ(s))` and its derivative in `s = logit φ`.
    fn exact_with_slope(s: f64, lambda: f64, gt: &[f64]) -> Result<(f64, f64)> {
        let (phi, om) = logistic_pair(s);
        let t = distance_terms(phi, om, gt)?;
        let v = lambda.ln() - lambda * t.d + t.d1.ln();
        let dphi = -lambda * t.d1 + t.d2 / t.d1;
        Ok((v, dphi * phi * om))
    }

    pub fn prior(&self) -> PhiPrior {
        self.prior
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn gamma_tilde(&self) -> &[f64] {
        &self.gamma_tilde
    }

    /// Knots as (logit φ, log density) pairs.
    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.logit.iter().copied().zip(self.values.iter().copied())
    }

    /// Closed-form log density at logit φ = `s`.
    pub fn exact_logit(&self, s: f64) -> Result<f64> {
        match self.lambda {
            Some(l) => Ok(phi_pc_log_density_logit(s, l, &self.gamma_tilde)? - log_jacobian(s)),
            None => Ok(0.0),
        }
    }

    /// Log density of `s = logit φ` itself: the interpolated table inside
    /// the grid, the closed form in log space outside it.
    pub fn logit_log_density(&self, s: f64) -> Result<f64> {
        match self.lambda {
            Some(l) if s.is_finite() && s.abs() > TABLE_LOGIT_RANGE => phi_pc_log_density_logit(s, l, &self.gamma_tilde),
            _ => Ok(self.log_density_logit(s)? + log_jacobian(s)),
        }
    }

    /// Interpolated log density of φ at logit φ = `s`.
    pub fn log_density_logit(&self, s: f64) -> Result<f64> {
        if s.is_nan() {
            return Err(Error::Domain("logit phi is NaN".into()));
        }
        if self.lambda.is_none() {
            return Ok(0.0);
        }
        let (lo, hi) = (self.logit[0], self.logit[TABLE_POINTS - 1]);
        if s == f64::NEG_INFINITY {
            return Ok(self.values[0]);
        }
        if s == f64::INFINITY {
            return Ok(self.values[TABLE_POINTS - 1]);
        }
        if s < lo || s > hi {
            return self.exact_logit(s);
        }
        let step = self.logit[1] - self.logit[0];
        let j = (((s - lo) / step).floor() as usize).min(TABLE_POINTS - 2);
        let t = (s - self.logit[j]) / step;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        Ok(h00 * self.values[j] + h10 * step * self.slopes[j] + h01 * self.values[j + 1] + h11 * step * self.slopes[j + 1])
    }

    /// Log density with respect to φ; φ ∈ {0, 1} map to the grid boundary.
    pub fn log_density(&self, phi: f64) -> Result<f64> {
        check_phi(phi)?;
        let s = if phi == 0.0 {
            self.logit[0]
        } else if phi == 1.0 {
            self.logit[TABLE_POINTS - 1]
        } else {
            (phi / (1.0 - phi)).ln()
        };
        self.log_density_logit(s)
    }
}

/// Fritsch–Carlson slope limiting on monotone stretches of the knot values.
fn limit_monotone(values: &[f64], slopes: &mut [f64], step: f64) {
    for j in 0..values.len() - 1 {
        let secant = (values[j + 1] - values[j]) / step;
        if secant == 0.0 {
            continue;
        }
        let (a, b) = (slopes[j] / secant, slopes[j + 1] / secant);
        if a < 0.0 || b < 0.0 {
            continue;
        }
        let r = a * a + b * b;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            slopes[j] = t * a * secant;
            slopes[j + 1] = t * b * secant;
        }
    }
}
