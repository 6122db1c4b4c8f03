//! Synthetic risk surfaces and the replication study runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inference::{fit, Dataset, FitConfig};
use crate::linalg::{default_jitter, sample_constrained_gmrf};
use crate::models::{LatentModel, ModelKind, ModelSpec};
use crate::parallel::map_indexed;
use crate::priors::{PhiPrior, PrecPrior};
use crate::scaling::{scale_structured, ScaledStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Constant,
    Iid,
    Structured,
}

impl RiskKind {
    pub fn name(self) -> &'static str {
        match self {
            RiskKind::Constant => "constant",
            RiskKind::Iid => "iid",
            RiskKind::Structured => "structured",
        }
    }
}

/// One simulation setting: `log θ_i = μ + σ b_i`, `y_i ~ Poisson(E θ_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub risk: RiskKind,
    pub sigma: f64,
    pub expected: f64,
    #[serde(default)]
    pub mu: f64,
}

impl Scenario {
    pub fn new(risk: RiskKind, expected: f64) -> Self {
        let sigma = if risk == RiskKind::Constant { 0.0 } else { 0.5 };
        Self { risk, sigma, expected, mu: 0.0 }
    }

    pub fn label(&self) -> String {
        format!("{}_E{}", self.risk.name(), self.expected)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.expected > 0.0 && self.expected.is_finite()) {
            return Err(Error::Config(format!("expected count must be positive, got {}", self.expected)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return Err(Error::Config(format!("invalid scenario {}", self.label())));
        }
        Ok(())
    }
}

/// The nine default settings: three risk surfaces at E ∈ {15, 60, 200}.
pub fn default_scenarios() -> Vec<Scenario> {
    let mut out = Vec::with_capacity(9);
    for risk in [RiskKind::Constant, RiskKind::Iid, RiskKind::Structured] {
        for e in [15.0, 60.0, 200.0] {
            out.push(Scenario::new(risk, e));
        }
    }
    out
}

/// Independent random stream for one replicate of one scenario.
pub fn replicate_rng(seed: u64, scenario: usize, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((scenario as u64) << 32) | replicate as u64);
    rng
}

/// Simulates the standardized effect `b` and returns the log-risk.
///
/// Structured effects are drawn from the scaled ICAR on each connected
/// component; isolated regions get an independent standard normal draw.
pub fn simulate_log_risk<R: rand::Rng + ?Sized>(scenario: &Scenario, s: &ScaledStructure, rng: &mut R) -> Result<Vec<f64>> {
    scenario.validate()?;
    let n = s.n_regions();
    let b: Vec<f64> = match scenario.risk {
        RiskKind::Constant => vec![0.0; n],
        RiskKind::Iid => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        RiskKind::Structured => {
            let mut b = vec![0.0; n];
            if s.block_dim() > 0 {
                let u = sample_constrained_gmrf(s.q_star(), s.constraints(), default_jitter(s.q_star()), rng)?;
                for (k, &r) in s.structured_regions().iter().enumerate() {
                    b[r] = u[k];
                }
            }
            for &r in s.singleton_regions() {
                b[r] = StandardNormal.sample(rng);
            }
            b
        }
    };
    Ok(b.into_iter().map(|v| scenario.mu + scenario.sigma * v).collect())
}

pub fn simulate_dataset<R: rand::Rng + ?Sized>(scenario: &Scenario, s: &ScaledStructure, rng: &mut R) -> Result<Dataset> {
    let eta = simulate_log_risk(scenario, s, rng)?;
    let y = eta
        .iter()
        .map(|&v| {
            let mean = scenario.expected * v.exp();
            Poisson::new(mean).map(|p| p.sample(rng)).map_err(|e| Error::Domain(format!("poisson mean {mean}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Dataset::new(y, vec![scenario.expected; eta.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyModel {
    pub label: String,
    pub spec: ModelSpec,
}

impl StudyModel {
    pub fn new(label: &str, spec: ModelSpec) -> Self {
        Self { label: label.to_string(), spec }
    }
}

/// The six comparison models: iid, Besag, Leroux, Dean and BYM2 under a
/// uniform and a PC prior on φ.
pub fn default_models() -> Vec<StudyModel> {
    let bym2 = ModelSpec::default_for(ModelKind::Bym2);
    vec![
        StudyModel::new("iid", ModelSpec::default_for(ModelKind::Iid)),
        StudyModel::new("besag", ModelSpec::default_for(ModelKind::Besag)),
        StudyModel::new("leroux", ModelSpec::default_for(ModelKind::Leroux)),
        StudyModel::new("dean", ModelSpec::default_for(ModelKind::Dean)),
        StudyModel::new("bym2_unif", ModelSpec { phi_prior: Some(PhiPrior::Uniform), ..bym2 }),
        StudyModel::new("bym2_pc", bym2),
    ]
}

/// BYM2 variants for a prior sweep over the φ prior.
pub fn phi_prior_sweep(tau_prior: PrecPrior) -> Vec<StudyModel> {
    let pc = |alpha: f64| PhiPrior::Pc { u: 0.5, alpha };
    vec![
        StudyModel::new("bym2_pc_a0.667", ModelSpec::bym2(tau_prior, pc(2.0 / 3.0))),
        StudyModel::new("bym2_pc_a0.5", ModelSpec::bym2(tau_prior, pc(0.5))),
        StudyModel::new("bym2_pc_a0.1", ModelSpec::bym2(tau_prior, pc(0.1))),
        StudyModel::new("bym2_unif", ModelSpec::bym2(tau_prior, PhiPrior::Uniform)),
    ]
}

/// Grid settings used by the study runner, coarser than the single-fit
/// defaults.
pub fn study_fit_config() -> FitConfig {
    FitConfig { dz: 0.75, diff_logdens: 6.0, ..FitConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
    pub models: Vec<StudyModel>,
    pub replicates: usize,
    pub seed: u64,
    /// Side of the square lattice used when no graph file is given.
    pub lattice: (usize, usize),
    /// Optional graph file; overrides `lattice`.
    pub graph: Option<String>,
    pub fit: FitConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            models: default_models(),
            replicates: 50,
            seed: 20180101,
            lattice: (10, 10),
            graph: None,
            fit: study_fit_config(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.models.is_empty() || self.replicates == 0 {
            return Err(Error::Config("study needs scenarios, models and at least one replicate".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        for m in &self.models {
            m.spec.validate()?;
        }
        self.fit.validate()
    }

    /// Graph named by the config, or the default lattice.
    pub fn load_graph(&self) -> Result<Graph> {
        match &self.graph {
            Some(path) => Graph::parse(&std::fs::read_to_string(path)?),
            None => Graph::lattice(self.lattice.0, self.lattice.1),
        }
    }
}

/// Outcome of one model fitted to one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub scenario_index: usize,
    pub replicate: usize,
    pub model: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Posterior mean of the intercept.
    pub mu: f64,
    /// Posterior mean of `1/√τ` for the main precision.
    pub sigma: f64,
    /// Posterior mean of φ, NaN for models without one.
    pub phi: f64,
    pub rmse: f64,
    pub dic: f64,
    pub p_d: f64,
    pub log_score: f64,
    pub grid_points: usize,
}

/// Aggregates over the successful replicates of one scenario × model cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub model: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub sigma_mean: f64,
    pub sigma_sd: f64,
    pub sigma_median: f64,
    pub phi_mean: f64,
    pub phi_sd: f64,
    pub phi_median: f64,
    pub rmse_mean: f64,
    pub dic_mean: f64,
    pub ls_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicateRecord>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

fn failed_record(base: ReplicateRecord, err: String) -> ReplicateRecord {
    ReplicateRecord { ok: false, error: Some(err), ..base }
}

impl StudySummary {
    pub fn row(&self, scenario: &str, model: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.model == model)
    }

    pub fn records_for<'a>(&'a self, scenario: &'a str, model: &'a str) -> impl Iterator<Item = &'a ReplicateRecord> + 'a {
        self.records.iter().filter(move |r| r.ok && r.scenario == scenario && r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,model,n_ok,n_failed,mu_mean,mu_sd,sigma_mean,sigma_sd,sigma_median,phi_mean,phi_sd,phi_median,rmse_mean,dic_mean,ls_mean\n",
        );
        let f = |x: f64| if x.is_finite() { format!("{x:.6}") } else { String::new() };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.model,
                r.n_ok,
                r.n_failed,
                f(r.mu_mean),
                f(r.mu_sd),
                f(r.sigma_mean),
                f(r.sigma_sd),
                f(r.sigma_median),
                f(r.phi_mean),
                f(r.phi_sd),
                f(r.phi_median),
                f(r.rmse_mean),
                f(r.dic_mean),
                f(r.ls_mean)
            );
        }
        out
    }

    /// One JSON object per replicate record.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Simulates every scenario × replicate on `graph` and fits every model.
///
/// Failed fits are recorded with their error and excluded from the
/// aggregates.
pub fn run_study(config: &StudyConfig, graph: &Graph) -> Result<StudySummary> {
    config.validate()?;
    let s = scale_structured(graph)?;
    let models = config
        .models
        .iter()
        .map(|m| LatentModel::with_structure(m.spec, graph, s.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut datasets = Vec::with_capacity(config.scenarios.len() * config.replicates);
    for (si, sc) in config.scenarios.iter().enumerate() {
        for r in 0..config.replicates {
            let mut rng = replicate_rng(config.seed, si, r);
            datasets.push((si, r, simulate_dataset(sc, &s, &mut rng)?));
        }
    }

    let n_models = models.len();
    let records = map_indexed(config.fit.execution, datasets.len() * n_models, |t| {
        let (si, r, data) = &datasets[t / n_models];
        let mi = t % n_models;
        let base = ReplicateRecord {
            scenario: config.scenarios[*si].label(),
            scenario_index: *si,
            replicate: *r,
            model: config.models[mi].label.clone(),
            ok: true,
            error: None,
            mu: f64::NAN,
            sigma: f64::NAN,
            phi: f64::NAN,
            rmse: f64::NAN,
            dic: f64::NAN,
            p_d: f64::NAN,
            log_score: f64::NAN,
            grid_points: 0,
        };
        match fit(&models[mi], data, &config.fit) {
            Ok(res) => {
                let sigma = res.hyperparameters.first().map_or(f64::NAN, |h| h.mean);
                ReplicateRecord {
                    mu: res.intercept().mean,
                    sigma,
                    phi: res.hyper("phi").map_or(f64::NAN, |h| h.mean),
                    rmse: res.diagnostics.rmse,
                    dic: res.diagnostics.dic,
                    p_d: res.diagnostics.p_d,
                    log_score: res.diagnostics.log_score,
                    grid_points: res.grid.points.len(),
                    ..base
                }
            }
            Err(e) => failed_record(base, e.to_string()),
        }
    });

    let mut cells: BTreeMap<(usize, usize), Vec<&ReplicateRecord>> = BTreeMap::new();
    for (t, rec) in records.iter().enumerate() {
        cells.entry((rec.scenario_index, t % n_models)).or_default().push(rec);
    }
    let rows = cells
        .into_iter()
        .map(|((si, mi), recs)| {
            let ok: Vec<&&ReplicateRecord> = recs.iter().filter(|r| r.ok).collect();
            let col = |f: fn(&ReplicateRecord) -> f64| -> Vec<f64> {
                ok.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect()
            };
            let (mu, sigma, phi) = (col(|r| r.mu), col(|r| r.sigma), col(|r| r.phi));
            SummaryRow {
                scenario: config.scenarios[si].label(),
                model: config.models[mi].label.clone(),
                n_ok: ok.len(),
                n_failed: recs.len() - ok.len(),
                mu_mean: mean_sd(&mu).0,
                mu_sd: mean_sd(&mu).1,
                sigma_mean: mean_sd(&sigma).0,
                sigma_sd: mean_sd(&sigma).1,
                sigma_median: median(&sigma),
                phi_mean: mean_sd(&phi).0,
                phi_sd: mean_sd(&phi).1,
                phi_median: median(&phi),
                rmse_mean: mean_sd(&col(|r| r.rmse)).0,
                dic_mean: mean_sd(&col(|r| r.dic)).0,
                ls_mean: mean_sd(&col(|r| r.log_score)).0,
            }
        })
        .collect();
    Ok(StudySummary { rows, records })
}
