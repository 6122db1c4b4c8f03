//! Latent Gaussian model formulations for areal counts.
//!
//! Every model is a precision matrix that is linear in a handful of
//! hyperparameter-dependent coefficients, plus linear constraints and a map
//! from latent entries to the linear predictor of each region. The precision
//! pattern is fixed per model so one symbolic factorization serves every
//! hyperparameter value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{ConstraintSet, SymSparseMatrix};
use crate::priors::{PhiPrior, PhiPriorTable, PrecPrior};
use crate::scaling::{scale_structured, ScaledStructure};

pub const PHI_MIN: f64 = 1e-6;
pub const PHI_MAX: f64 = 1.0 - 1e-6;
/// Relative size of the diagonal regularisation of intrinsic blocks.
pub const STRUCTURE_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Iid,
    Besag,
    Bym,
    Leroux,
    Dean,
    Bym2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Iid,
        ModelKind::Besag,
        ModelKind::Bym,
        ModelKind::Leroux,
        ModelKind::Dean,
        ModelKind::Bym2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Iid => "iid",
            ModelKind::Besag => "besag",
            ModelKind::Bym => "bym",
            ModelKind::Leroux => "leroux",
            ModelKind::Dean => "dean",
            ModelKind::Bym2 => "bym2",
        }
    }

    pub fn has_phi(self) -> bool {
        matches!(self, ModelKind::Leroux | ModelKind::Dean | ModelKind::Bym2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind '{s}'")))
    }
}

/// Model choice plus hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Prior on the main precision (τ_v for BYM).
    pub tau_prior: PrecPrior,
    /// Prior on the structured precision τ_u, BYM only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_u_prior: Option<PrecPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_prior: Option<PhiPrior>,
    /// Use the scaled structure in the Dean model.
    #[serde(default)]
    pub scaled_dean: bool,
}

impl ModelSpec {
    /// Vague gamma priors and a uniform φ, as in the comparison study.
    pub fn default_for(kind: ModelKind) -> Self {
        let gamma = |rate| PrecPrior::Gamma { shape: 1.0, rate };
        let (tau_prior, tau_u_prior) = match kind {
            ModelKind::Iid => (gamma(0.01), None),
            ModelKind::Bym => (gamma(0.01), Some(gamma(0.02))),
            ModelKind::Bym2 => (PrecPrior::Pc { u: 1.0, alpha: 0.01 }, None),
            _ => (gamma(0.02), None),
        };
        let phi_prior = match kind {
            ModelKind::Bym2 => Some(PhiPrior::Pc { u: 0.5, alpha: 2.0 / 3.0 }),
            k if k.has_phi() => Some(PhiPrior::Uniform),
            _ => None,
        };
        Self { kind, tau_prior, tau_u_prior, phi_prior, scaled_dean: false }
    }

    pub fn bym2(tau_prior: PrecPrior, phi_prior: PhiPrior) -> Self {
        Self { kind: ModelKind::Bym2, tau_prior, tau_u_prior: None, phi_prior: Some(phi_prior), scaled_dean: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.tau_prior.validate()?;
        if self.kind == ModelKind::Bym {
            self.tau_u_prior
                .ok_or_else(|| Error::Config("bym needs a prior for the structured precision".into()))?
                .validate()?;
        }
        if self.kind.has_phi() {
            match self.phi_prior {
                None => return Err(Error::Config(format!("{} needs a prior for phi", self.kind))),
                Some(PhiPrior::Pc { .. }) if self.kind == ModelKind::Leroux => {
                    return Err(Error::Config("the pc prior for phi is defined for the dean and bym2 models only".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// How an internal hyperparameter maps to its natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// Internal `log τ`, reported as `σ = τ^{-1/2}`.
    LogPrecision,
    /// Internal `logit φ`, reported as φ.
    LogitPhi,
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperParam {
    pub name: String,
    pub transform: Transform,
}

impl HyperParam {
    /// Natural-scale value reported to users (σ or φ).
    pub fn to_user(&self, internal: f64) -> f64 {
        match self.transform {
            Transform::LogPrecision => (-0.5 * internal).exp(),
            Transform::LogitPhi => clamp_phi(logistic(internal)),
        }
    }

    pub fn user_name(&self) -> String {
        match self.transform {
            Transform::LogPrecision => format!("sigma{}", self.name.strip_prefix("tau").unwrap_or("")),
            Transform::LogitPhi => self.name.clone(),
        }
    }
}

pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_phi(phi: f64) -> f64 {
    phi.clamp(PHI_MIN, PHI_MAX)
}

/// Hyperparameters on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub tau: f64,
    /// Structured precision, BYM only.
    pub tau_u: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy)]
enum Coef {
    Tau,
    TauU,
    /// τ(1−φ)
    TauIid,
    /// τφ
    TauStruct,
    /// τ/(1−φ)
    AugW1,
    /// −√(φτ)/(1−φ)
    AugCross,
    One,
    /// φ/(1−φ)
    AugW2,
}

impl Coef {
    fn eval(self, h: &Hyper) -> f64 {
        let (tau, phi) = (h.tau, h.phi);
        match self {
            Coef::Tau => tau,
            Coef::TauU => h.tau_u,
            Coef::TauIid => tau * (1.0 - phi),
            Coef::TauStruct => tau * phi,
            Coef::AugW1 => tau / (1.0 - phi),
            Coef::AugCross => -(phi * tau).sqrt() / (1.0 - phi),
            Coef::One => 1.0,
            Coef::AugW2 => phi / (1.0 - phi),
        }
    }
}

/// Positions of an augmented `[w₁; w₂]` field: `w₁` has one entry per region,
/// `w₂` one per structured region.
fn augmented_terms(q: &SymSparseMatrix, s: &ScaledStructure) -> Vec<(Coef, Vec<(usize, usize, f64)>)> {
    let n = s.n_regions();
    let m = s.block_dim();
    let w1: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
    let cross: Vec<_> = s
        .structured_regions()
        .iter()
        .enumerate()
        .map(|(b, &r)| (n + b, r, 1.0))
        .collect();
    let w2_q: Vec<_> = q.iter().map(|(r, c, v)| (n + r, n + c, v)).collect();
    let w2_i: Vec<_> = (0..m).map(|b| (n + b, n + b, 1.0)).collect();
    vec![(Coef::AugW1, w1), (Coef::AugCross, cross), (Coef::One, w2_q), (Coef::AugW2, w2_i)]
}

/// Joint precision of `(w₁, w₂)` in the sparse BYM2 parameterisation, where
/// `w₁` is the total region effect and `w₂` the scaled structured part.
/// No regularisation is added; the matrix is singular along the null space
/// of the structure.
pub fn bym2_joint_precision(tau: f64, phi: f64, s: &ScaledStructure) -> Result<SymSparseMatrix> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau = {tau} must be positive")));
    }
    if !(PHI_MIN..=PHI_MAX).contains(&phi) {
        return Err(Error::Domain(format!("phi = {phi} outside [{PHI_MIN}, {PHI_MAX}]")));
    }
    let h = Hyper { tau, tau_u: tau, phi };
    let trip: Vec<_> = augmented_terms(s.q_star(), s)
        .into_iter()
        .flat_map(|(c, t)| {
            let k = c.eval(&h);
            t.into_iter().map(move |(r, col, v)| (r, col, k * v))
        })
        .collect();
    SymSparseMatrix::from_triplets(s.n_regions() + s.block_dim(), &trip)
}

/// Assembled latent model: precision builder, constraints and predictor map.
#[derive(Debug, Clone)]
pub struct LatentModel {
    spec: ModelSpec,
    n_regions: usize,
    dim: usize,
    hypers: Vec<HyperParam>,
    pattern: SymSparseMatrix,
    terms: Vec<(Coef, Vec<(usize, f64)>)>,
    /// Diagonal storage positions of the intrinsic block and the scale of its
    /// regularisation.
    jitter: Option<(Coef, f64, Vec<usize>)>,
    constraints: ConstraintSet,
    predictor: Vec<Vec<usize>>,
    phi_table: Option<PhiPriorTable>,
    structure: ScaledStructure,
}

impl LatentModel {
    pub fn new(spec: ModelSpec, g: &Graph) -> Result<Self> {
        let s = scale_structured(g)?;
        Self::with_structure(spec, g, s)
    }

    /// Builds from a precomputed scaled structure of `g`.
    pub fn with_structure(spec: ModelSpec, g: &Graph, s: ScaledStructure) -> Result<Self> {
        spec.validate()?;
        if s.n_regions() != g.n_regions() {
            return Err(Error::DimensionMismatch { expected: g.n_regions(), got: s.n_regions() });
        }
        let n = g.n_regions();
        let m = s.block_dim();
        let kind = spec.kind;
        if matches!(kind, ModelKind::Besag) && m == 0 {
            return Err(Error::InvalidGraph("the besag model needs at least one pair of neighbouring regions".into()));
        }
        let tau = |name: &str| HyperParam { name: name.into(), transform: Transform::LogPrecision };
        let phi = HyperParam { name: "phi".into(), transform: Transform::LogitPhi };
        let q = s.q().clone();
        let mean_diag = |q: &SymSparseMatrix| if q.dim() == 0 { 1.0 } else { q.mean_diag() };
        let shift = |t: &SymSparseMatrix, offset: usize| -> Vec<(usize, usize, f64)> {
            t.iter().map(|(r, c, v)| (r + offset, c + offset, v)).collect()
        };

        type Terms = Vec<(Coef, Vec<(usize, usize, f64)>)>;
        let (dim, hypers, terms, jitter, constraints, predictor): (usize, Vec<HyperParam>, Terms, Option<(Coef, f64, Vec<usize>)>, ConstraintSet, Vec<Vec<usize>>) = match kind {
            ModelKind::Iid => (
                n,
                vec![tau("tau")],
                vec![(Coef::Tau, (0..n).map(|i| (i, i, 1.0)).collect())],
                None,
                ConstraintSet::empty(n),
                (0..n).map(|i| vec![i]).collect(),
            ),
            ModelKind::Besag => (
                m,
                vec![tau("tau")],
                vec![(Coef::Tau, shift(&q, 0))],
                Some((Coef::Tau, STRUCTURE_JITTER * mean_diag(&q), (0..m).collect())),
                s.constraints().clone(),
                (0..n).map(|i| s.block_of_region(i).into_iter().collect()).collect(),
            ),
            ModelKind::Bym => (
                n + m,
                vec![tau("tau_v"), tau("tau_u")],
                vec![(Coef::Tau, (0..n).map(|i| (i, i, 1.0)).collect()), (Coef::TauU, shift(&q, n))],
                Some((Coef::TauU, STRUCTURE_JITTER * mean_diag(&q), (n..n + m).collect())),
                s.constraints().embed(n + m, n)?,
                (0..n)
                    .map(|i| std::iter::once(i).chain(s.block_of_region(i).map(|b| n + b)).collect())
                    .collect(),
            ),
            ModelKind::Leroux => {
                let full = g.besag_precision();
                (
                    n,
                    vec![tau("tau"), phi.clone()],
                    vec![
                        (Coef::TauIid, (0..n).map(|i| (i, i, 1.0)).collect()),
                        (Coef::TauStruct, shift(&full, 0)),
                    ],
                    None,
                    ConstraintSet::empty(n),
                    (0..n).map(|i| vec![i]).collect(),
                )
            }
            ModelKind::Dean | ModelKind::Bym2 => {
                let structure = if kind == ModelKind::Bym2 || spec.scaled_dean { s.q_star() } else { &q };
                let mut terms = augmented_terms(structure, &s);
                if m == 0 {
                    terms.retain(|(c, _)| matches!(c, Coef::AugW1));
                }
                (
                    n + m,
                    vec![tau("tau"), phi.clone()],
                    terms,
                    Some((Coef::One, STRUCTURE_JITTER * mean_diag(structure), (n..n + m).collect())),
                    s.constraints().embed(n + m, n)?,
                    (0..n).map(|i| vec![i]).collect(),
                )
            }
        };

        let coords: Vec<(usize, usize)> = terms
            .iter()
            .flat_map(|(_, t)| t.iter().map(|&(r, c, _)| (r, c)))
            .chain((0..dim).map(|i| (i, i)))
            .collect();
        let (pattern, map) = SymSparseMatrix::pattern_from_coords(dim, &coords)?;
        let mut k = 0;
        let terms: Vec<(Coef, Vec<(usize, f64)>)> = terms
            .into_iter()
            .map(|(c, t)| {
                let mapped = t
                    .iter()
                    .map(|&(_, _, v)| {
                        let p = map[k];
                        k += 1;
                        (p, v)
                    })
                    .collect();
                (c, mapped)
            })
            .collect();
        let diag_pos = |i: usize| map[coords.len() - dim + i];
        let jitter = jitter.map(|(c, eps, idx)| (c, eps, idx.into_iter().map(diag_pos).collect()));

        let phi_table = match (kind.has_phi(), spec.phi_prior) {
            (true, Some(PhiPrior::Uniform)) => Some(PhiPriorTable::new(PhiPrior::Uniform, Vec::new())?),
            (true, Some(p @ PhiPrior::Pc { .. })) => {
                let gt = if kind == ModelKind::Dean && !spec.scaled_dean {
                    crate::priors::gamma_tilde(&unscaled_view(&s)?)?
                } else {
                    crate::priors::gamma_tilde(&s)?
                };
                Some(PhiPriorTable::new(p, gt)?)
            }
            _ => None,
        };

        Ok(Self {
            spec,
            n_regions: n,
            dim,
            hypers,
            pattern,
            terms,
            jitter,
            constraints,
            predictor,
            phi_table,
            structure: s,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn latent_dim(&self) -> usize {
        self.dim
    }

    pub fn hypers(&self) -> &[HyperParam] {
        &self.hypers
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    /// Latent indices summed into the predictor of each region.
    pub fn predictor(&self) -> &[Vec<usize>] {
        &self.predictor
    }

    pub fn structure(&self) -> &ScaledStructure {
        &self.structure
    }

    pub fn phi_table(&self) -> Option<&PhiPriorTable> {
        self.phi_table.as_ref()
    }

    /// Precision pattern shared by every hyperparameter value.
    pub fn pattern(&self) -> &SymSparseMatrix {
        &self.pattern
    }

    /// Natural-scale hyperparameters from internal values (`log τ`, `logit φ`).
    pub fn decode(&self, theta: &[f64]) -> Result<Hyper> {
        if theta.len() != self.hypers.len() {
            return Err(Error::DimensionMismatch { expected: self.hypers.len(), got: theta.len() });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain(format!("non-finite hyperparameter {theta:?}")));
        }
        let mut h = Hyper { tau: 1.0, tau_u: 1.0, phi: 0.5 };
        for (p, &t) in self.hypers.iter().zip(theta) {
            match (p.transform, p.name.as_str()) {
                (Transform::LogPrecision, "tau_u") => h.tau_u = t.exp(),
                (Transform::LogPrecision, _) => h.tau = t.exp(),
                (Transform::LogitPhi, _) => h.phi = clamp_phi(logistic(t)),
            }
        }
        Ok(h)
    }

    fn check_hyper(&self, h: &Hyper) -> Result<()> {
        if !(h.tau > 0.0 && h.tau.is_finite() && h.tau_u > 0.0 && h.tau_u.is_finite()) {
            return Err(Error::Domain(format!("precisions must be positive and finite ({h:?})")));
        }
        if self.kind().has_phi() && !(PHI_MIN..=PHI_MAX).contains(&h.phi) {
            return Err(Error::Domain(format!("phi = {} outside [{PHI_MIN}, {PHI_MAX}]", h.phi)));
        }
        Ok(())
    }

    /// Writes the precision values for `h` into `values` (pattern order).
    pub fn fill_precision(&self, h: &Hyper, with_jitter: bool, values: &mut [f64]) -> Result<()> {
        self.check_hyper(h)?;
        if values.len() != self.pattern.nnz() {
            return Err(Error::DimensionMismatch { expected: self.pattern.nnz(), got: values.len() });
        }
        values.iter_mut().for_each(|v| *v = 0.0);
        for (c, entries) in &self.terms {
            let k = c.eval(h);
            for &(p, v) in entries {
                values[p] += k * v;
            }
        }
        if with_jitter {
            if let Some((c, eps, pos)) = &self.jitter {
                let k = c.eval(h) * eps;
                for &p in pos {
                    values[p] += k;
                }
            }
        }
        Ok(())
    }

    /// Prior precision at `h`, without the regularisation of intrinsic blocks.
    pub fn precision(&self, h: &Hyper) -> Result<SymSparseMatrix> {
        let mut v = vec![0.0; self.pattern.nnz()];
        self.fill_precision(h, false, &mut v)?;
        self.pattern.with_values(v)
    }

    /// Prior precision with a small diagonal term on intrinsic blocks so it
    /// can be factorized.
    pub fn regularized_precision(&self, h: &Hyper) -> Result<SymSparseMatrix> {
        let mut v = vec![0.0; self.pattern.nnz()];
        self.fill_precision(h, true, &mut v)?;
        self.pattern.with_values(v)
    }

    /// Log prior density of the internal hyperparameters, Jacobians included.
    pub fn log_hyper_prior(&self, theta: &[f64]) -> Result<f64> {
        let h = self.decode(theta)?;
        let mut total = 0.0;
        for (p, &t) in self.hypers.iter().zip(theta) {
            total += match (p.transform, p.name.as_str()) {
                (Transform::LogPrecision, "tau_u") => {
                    let prior = self.spec.tau_u_prior.expect("validated");
                    prior.log_density(h.tau_u)? + t
                }
                (Transform::LogPrecision, _) => self.spec.tau_prior.log_density(h.tau)? + t,
                (Transform::LogitPhi, _) => {
                    let table = self.phi_table.as_ref().expect("phi models carry a table");
                    table.logit_log_density(t.clamp(logit(PHI_MIN), logit(PHI_MAX)))?
                }
            };
        }
        Ok(total)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A structure with unit scale factors, for priors on unscaled models.
fn unscaled_view(s: &ScaledStructure) -> Result<ScaledStructure> {
    s.with_q_star(s.q().clone())
}
