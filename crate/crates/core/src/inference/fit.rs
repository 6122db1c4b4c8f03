//! Hyperparameter mode search, grid exploration and posterior summaries.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::diagnostics::{self, point_cpo};
use super::gaussian::{Engine, FixedEffectsPrior, NewtonConfig};
use super::numerics::{nelder_mead, weighted_quantile, NelderMeadConfig, NormalMixture};
use super::{Dataset, Likelihood};
use crate::error::{Error, Result};
use crate::models::{logit, LatentModel, ModelSpec, Transform, PHI_MAX, PHI_MIN};
use crate::parallel::{map_slice, Execution};

/// Box on the internal `log τ` scale explored by the mode search and grid.
pub const LOG_TAU_BOUNDS: (f64, f64) = (-10.0, 20.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Grid step in standardized units.
    pub dz: f64,
    /// Grid points whose log density falls more than this below the
    /// maximum are dropped.
    pub diff_logdens: f64,
    pub max_grid_points: usize,
    pub likelihood: Likelihood,
    pub fixed_effects: FixedEffectsPrior,
    pub newton: NewtonConfig,
    pub execution: Execution,
    /// Start of the mode search on the internal scale.
    pub theta_start: Option<Vec<f64>>,
    /// Skip the search and use a single grid point at this internal value.
    pub fixed_theta: Option<Vec<f64>>,
    /// Finite-difference step for the Hessian at the mode.
    pub hessian_step: f64,
    /// Lower bound on Hessian eigenvalues used for standardization.
    pub hessian_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            dz: 0.2,
            diff_logdens: 20.0,
            max_grid_points: 20_000,
            likelihood: Likelihood::Poisson,
            fixed_effects: FixedEffectsPrior::default(),
            newton: NewtonConfig::default(),
            execution: Execution::default(),
            theta_start: None,
            fixed_theta: None,
            hessian_step: 0.05,
            hessian_floor: 1e-2,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dz > 0.0 && self.dz.is_finite()) {
            return Err(Error::Config(format!("dz must be positive, got {}", self.dz)));
        }
        if !(self.diff_logdens > 0.0) {
            return Err(Error::Config(format!("diff_logdens must be positive, got {}", self.diff_logdens)));
        }
        if self.max_grid_points == 0 {
            return Err(Error::Config("max_grid_points must be at least 1".into()));
        }
        if !(self.hessian_step > 0.0) || !(self.hessian_floor > 0.0) {
            return Err(Error::Config("hessian step and floor must be positive".into()));
        }
        Ok(())
    }
}

/// Summary of one marginal posterior.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MarginalSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub mode: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RegionSummary {
    pub eta_mean: f64,
    pub eta_sd: f64,
    pub theta_mean: f64,
    pub theta_sd: f64,
    pub theta_q025: f64,
    pub theta_median: f64,
    pub theta_q975: f64,
    /// Posterior mean of the region's random effect (predictor minus fixed part).
    pub effect_mean: f64,
    pub cpo: Option<f64>,
    pub cpo_unstable: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Diagnostics {
    pub dic: f64,
    pub p_d: f64,
    pub dic_focus: String,
    pub log_score: f64,
    pub rmse: f64,
    pub cpo_missing: usize,
    pub cpo_unstable: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub user: Vec<f64>,
    pub log_density: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridSummary {
    pub hyper_names: Vec<String>,
    pub dz: f64,
    pub diff_logdens: f64,
    pub n_evaluated: usize,
    pub n_failed: usize,
    pub truncated: bool,
    pub points: Vec<GridPoint>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Convergence {
    pub mode_theta: Vec<f64>,
    pub mode_log_density: f64,
    pub optimizer_evaluations: usize,
    pub optimizer_converged: bool,
    pub hessian_floored: bool,
    pub max_newton_iterations: usize,
    pub max_gradient_norm: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StructureInfo {
    pub scale_factors: Vec<f64>,
    pub rank_deficiency: usize,
    pub singleton_regions: Vec<usize>,
    pub singleton_rule: String,
}

/// Per grid point predictor moments and CPO pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMarginals {
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
    pub effect_mean: Vec<f64>,
    pub fixed: Vec<(f64, f64)>,
    pub log_cpo: Vec<Option<f64>>,
    pub cpo_unstable: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub likelihood: Likelihood,
    pub n_regions: usize,
    pub hyperparameters: Vec<MarginalSummary>,
    pub fixed_effects: Vec<MarginalSummary>,
    pub regions: Vec<RegionSummary>,
    pub diagnostics: Diagnostics,
    pub grid: GridSummary,
    pub convergence: Convergence,
    pub structure: StructureInfo,
    #[serde(skip)]
    pub point_marginals: Vec<PointMarginals>,
}

impl FitResult {
    pub fn weights(&self) -> Vec<f64> {
        self.grid.points.iter().map(|p| p.weight).collect()
    }

    pub fn hyper(&self, name: &str) -> Option<&MarginalSummary> {
        self.hyperparameters.iter().find(|h| h.name == name)
    }

    pub fn intercept(&self) -> &MarginalSummary {
        &self.fixed_effects[0]
    }

    pub fn fitted_risk(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.theta_mean).collect()
    }
}

struct Evaluated {
    theta: Vec<f64>,
    log_density: f64,
    marginals: PointMarginals,
    iterations: usize,
    gradient_norm: f64,
}

fn in_bounds(model: &LatentModel, theta: &[f64]) -> bool {
    model.hypers().iter().zip(theta).all(|(h, &t)| match h.transform {
        Transform::LogPrecision => (LOG_TAU_BOUNDS.0..=LOG_TAU_BOUNDS.1).contains(&t),
        Transform::LogitPhi => (logit(PHI_MIN)..=logit(PHI_MAX)).contains(&t),
    })
}

fn evaluate(engine: &Engine<'_>, theta: &[f64], start: Option<&[f64]>) -> Result<Evaluated> {
    let lp = engine.log_posterior(theta, start)?;
    let (eta_mean, eta_var) = engine.predictor_moments(&lp.approx)?;
    let d = engine.latent_dim();
    let effect_mean = (0..engine.data().len())
        .map(|i| engine.predictor_row(i).iter().filter(|(j, _)| *j < d).map(|&(j, c)| c * lp.approx.mode[j]).sum())
        .collect();
    let (log_cpo, cpo_unstable) = point_cpo(engine, &lp.approx, &eta_mean, &eta_var);
    Ok(Evaluated {
        theta: theta.to_vec(),
        log_density: lp.log_density,
        marginals: PointMarginals {
            eta_mean,
            eta_var,
            effect_mean,
            fixed: engine.fixed_moments(&lp.approx),
            log_cpo,
            cpo_unstable,
        },
        iterations: lp.approx.iterations,
        gradient_norm: lp.approx.gradient_norm,
    })
}

fn default_start(model: &LatentModel) -> Vec<f64> {
    model
        .hypers()
        .iter()
        .map(|h| match h.transform {
            Transform::LogPrecision => 2.0,
            Transform::LogitPhi => 0.0,
        })
        .collect()
}

/// Negative Hessian of `f` at `x` by central differences.
fn neg_hessian<F: Fn(&[f64]) -> Option<f64>>(f: F, x: &[f64], f0: f64, h: f64) -> Option<DMatrix<f64>> {
    let n = x.len();
    let at = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in d {
            y[i] += s;
        }
        f(&y)
    };
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let (p, q) = (at(&[(i, h)])?, at(&[(i, -h)])?);
        m[(i, i)] = -(p - 2.0 * f0 + q) / (h * h);
        for j in 0..i {
            let v = at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])? + at(&[(i, -h), (j, -h)])?;
            m[(i, j)] = -v / (4.0 * h * h);
            m[(j, i)] = m[(i, j)];
        }
    }
    Some(m)
}

fn neighbours(k: &[i32]) -> Vec<Vec<i32>> {
    let mut out = Vec::with_capacity(2 * k.len());
    for i in 0..k.len() {
        for s in [-1, 1] {
            let mut v = k.to_vec();
            v[i] += s;
            out.push(v);
        }
    }
    out
}

fn discrete_summary(name: String, values: &[f64], weights: &[f64]) -> MarginalSummary {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values.iter().zip(weights).map(|(v, w)| w * (v - mean) * (v - mean)).sum();
    let mode_idx = (0..weights.len()).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).expect("non-empty grid");
    MarginalSummary {
        name,
        mean,
        sd: var.max(0.0).sqrt(),
        q025: weighted_quantile(values, weights, 0.025),
        median: weighted_quantile(values, weights, 0.5),
        q975: weighted_quantile(values, weights, 0.975),
        mode: values[mode_idx],
    }
}

/// Fits `model` to `data`: mode search over the internal hyperparameters,
/// standardized grid exploration, and mixture summaries over the grid.
pub fn fit(model: &LatentModel, data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let engine = Engine::new(model, data, config.likelihood, config.fixed_effects, config.newton)?;
    let n_hyper = model.hypers().len();

    let (mode_theta, mode_lp, nm_evals, nm_converged, reference, basis, floored) = match &config.fixed_theta {
        Some(t) => {
            if t.len() != n_hyper {
                return Err(Error::DimensionMismatch { expected: n_hyper, got: t.len() });
            }
            let lp = engine.log_posterior(t, None)?;
            (t.clone(), lp.log_density, 1, true, lp.approx.mode, DMatrix::zeros(n_hyper, n_hyper), false)
        }
        None => {
            let start = config.theta_start.clone().unwrap_or_else(|| default_start(model));
            if start.len() != n_hyper {
                return Err(Error::DimensionMismatch { expected: n_hyper, got: start.len() });
            }
            let warm = engine.log_posterior(&start, None).ok().map(|p| p.approx.mode);
            let objective = |t: &[f64]| -> f64 {
                if !in_bounds(model, t) {
                    return f64::INFINITY;
                }
                engine.log_posterior(t, warm.as_deref()).map_or(f64::INFINITY, |p| -p.log_density)
            };
            let min = nelder_mead(objective, &start, NelderMeadConfig::default());
            if !min.value.is_finite() {
                return Err(Error::NonConvergence { iterations: min.evaluations, last_increment: f64::NAN });
            }
            let at_mode = engine.log_posterior(&min.x, warm.as_deref())?;
            let lp0 = at_mode.log_density;
            let reference = at_mode.approx.mode;
            let f = |t: &[f64]| -> Option<f64> {
                if !in_bounds(model, t) {
                    return None;
                }
                engine.log_posterior(t, Some(&reference)).ok().map(|p| p.log_density)
            };
            let hess = neg_hessian(f, &min.x, lp0, config.hessian_step)
                .unwrap_or_else(|| DMatrix::identity(n_hyper, n_hyper));
            let eig = SymmetricEigen::new(hess);
            let mut floored = false;
            let mut basis = eig.eigenvectors.clone();
            for j in 0..n_hyper {
                let mut l = eig.eigenvalues[j];
                if !(l >= config.hessian_floor) {
                    l = config.hessian_floor;
                    floored = true;
                }
                let s = 1.0 / l.sqrt();
                for i in 0..n_hyper {
                    basis[(i, j)] *= s;
                }
            }
            (min.x.clone(), lp0, min.evaluations, min.converged, reference, basis, floored)
        }
    };

    let theta_at = |k: &[i32]| -> Vec<f64> {
        (0..n_hyper)
            .map(|i| mode_theta[i] + (0..n_hyper).map(|j| basis[(i, j)] * config.dz * k[j] as f64).sum::<f64>())
            .collect()
    };

    let mut results: BTreeMap<Vec<i32>, Option<Evaluated>> = BTreeMap::new();
    let mut frontier: BTreeSet<Vec<i32>> = BTreeSet::from([vec![0; n_hyper]]);
    let mut best = mode_lp;
    let mut truncated = false;
    let single = config.fixed_theta.is_some();
    while !frontier.is_empty() {
        let mut batch: Vec<Vec<i32>> = frontier.into_iter().collect();
        let room = config.max_grid_points - results.len();
        if batch.len() > room {
            batch.truncate(room);
            truncated = true;
        }
        let evals = map_slice(config.execution, &batch, |k| {
            let t = theta_at(k);
            if !in_bounds(model, &t) {
                return None;
            }
            evaluate(&engine, &t, Some(&reference)).ok()
        });
        let mut next = BTreeSet::new();
        for (k, e) in batch.into_iter().zip(evals) {
            if let Some(ev) = &e {
                best = best.max(ev.log_density);
                if !single && ev.log_density >= best - config.diff_logdens {
                    for nb in neighbours(&k) {
                        if !results.contains_key(&nb) {
                            next.insert(nb);
                        }
                    }
                }
            }
            results.insert(k, e);
        }
        next.retain(|k| !results.contains_key(k));
        if results.len() >= config.max_grid_points && !next.is_empty() {
            truncated = true;
            break;
        }
        frontier = next;
    }

    let n_evaluated = results.len();
    let n_failed = results.values().filter(|e| e.is_none()).count();
    let kept: Vec<Evaluated> = results
        .into_values()
        .flatten()
        .filter(|e| e.log_density >= best - config.diff_logdens)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let raw: Vec<f64> = kept.iter().map(|e| (e.log_density - best).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let hyper_names: Vec<String> = model.hypers().iter().map(|h| h.user_name()).collect();
    let hyperparameters = model
        .hypers()
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let vals: Vec<f64> = kept.iter().map(|e| h.to_user(e.theta[j])).collect();
            discrete_summary(h.user_name(), &vals, &weights)
        })
        .collect();

    let n_fixed = engine.dim() - engine.latent_dim();
    let fixed_names: Vec<String> = std::iter::once("intercept".to_string())
        .chain(data.covariate_names().iter().cloned())
        .collect();
    let fixed_effects = (0..n_fixed)
        .map(|j| {
            let means: Vec<f64> = kept.iter().map(|e| e.marginals.fixed[j].0).collect();
            let vars: Vec<f64> = kept.iter().map(|e| e.marginals.fixed[j].1).collect();
            let mix = NormalMixture { weights: &weights, means: &means, vars: &vars };
            MarginalSummary {
                name: fixed_names[j].clone(),
                mean: mix.mean(),
                sd: mix.variance().sqrt(),
                q025: mix.quantile(0.025),
                median: mix.quantile(0.5),
                q975: mix.quantile(0.975),
                mode: mix.mode(),
            }
        })
        .collect();

    let point_marginals: Vec<PointMarginals> = kept.iter().map(|e| e.marginals.clone()).collect();
    let (cpo, _) = diagnostics::combine_cpo(&weights, &point_marginals);
    let regions = (0..data.len())
        .map(|i| {
            let means: Vec<f64> = point_marginals.iter().map(|p| p.eta_mean[i]).collect();
            let vars: Vec<f64> = point_marginals.iter().map(|p| p.eta_var[i]).collect();
            let mix = NormalMixture { weights: &weights, means: &means, vars: &vars };
            let (m, s) = (mix.mean(), mix.variance().sqrt());
            let theta_mean = (m + 0.5 * s * s).exp();
            let z = 1.959963984540054;
            RegionSummary {
                eta_mean: m,
                eta_sd: s,
                theta_mean,
                theta_sd: theta_mean * (s * s).exp_m1().sqrt(),
                theta_q025: (m - z * s).exp(),
                theta_median: m.exp(),
                theta_q975: (m + z * s).exp(),
                effect_mean: point_marginals.iter().zip(&weights).map(|(p, w)| w * p.effect_mean[i]).sum(),
                cpo: cpo[i].0,
                cpo_unstable: cpo[i].1,
            }
        })
        .collect();

    let grid_points = kept
        .iter()
        .zip(&weights)
        .map(|(e, &w)| GridPoint {
            theta: e.theta.clone(),
            user: model.hypers().iter().zip(&e.theta).map(|(h, &t)| h.to_user(t)).collect(),
            log_density: e.log_density,
            weight: w,
        })
        .collect();
    let convergence = Convergence {
        mode_theta,
        mode_log_density: mode_lp,
        optimizer_evaluations: nm_evals,
        optimizer_converged: nm_converged,
        hessian_floored: floored,
        max_newton_iterations: kept.iter().map(|e| e.iterations).max().unwrap_or(0),
        max_gradient_norm: kept.iter().map(|e| e.gradient_norm).fold(0.0, f64::max),
    };
    let s = model.structure();
    let structure = StructureInfo {
        scale_factors: s.scale_factors(),
        rank_deficiency: s.rank_deficiency(),
        singleton_regions: s.singleton_regions().to_vec(),
        singleton_rule: "singleton regions carry no structured effect".into(),
    };

    let mut result = FitResult {
        model: *model.spec(),
        likelihood: config.likelihood,
        n_regions: data.len(),
        hyperparameters,
        fixed_effects,
        regions,
        diagnostics: Diagnostics {
            dic: f64::NAN,
            p_d: f64::NAN,
            dic_focus: "posterior mean of the linear predictor".into(),
            log_score: f64::NAN,
            rmse: f64::NAN,
            cpo_missing: 0,
            cpo_unstable: 0,
        },
        grid: GridSummary {
            hyper_names,
            dz: config.dz,
            diff_logdens: config.diff_logdens,
            n_evaluated,
            n_failed,
            truncated,
            points: grid_points,
        },
        convergence,
        structure,
        point_marginals,
    };
    let (dic, p_d) = diagnostics::dic(&result, data)?;
    let (cpo, ls) = diagnostics::cpo_logscore(&result);
    result.diagnostics.dic = dic;
    result.diagnostics.p_d = p_d;
    result.diagnostics.log_score = ls;
    result.diagnostics.cpo_missing = cpo.iter().filter(|c| c.is_none()).count();
    result.diagnostics.cpo_unstable = result.regions.iter().filter(|r| r.cpo_unstable).count();
    result.diagnostics.rmse = diagnostics::rmse(&result, data);
    Ok(result)
}
