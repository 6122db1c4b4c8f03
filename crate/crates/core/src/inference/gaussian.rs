//! Constrained Gaussian approximation of the latent field at fixed
//! hyperparameters, and the Laplace approximation of their posterior.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, Likelihood};
use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, ConstraintSet, Kriging, Symbolic, SymSparseMatrix};
use crate::models::{Hyper, LatentModel};

/// Gaussian priors on the intercept and covariate coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectsPrior {
    #[serde(default)]
    pub intercept_mean: f64,
    #[serde(default = "default_fixed_variance")]
    pub variance: f64,
}

fn default_fixed_variance() -> f64 {
    100.0
}

impl Default for FixedEffectsPrior {
    fn default() -> Self {
        Self { intercept_mean: 0.0, variance: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Convergence threshold on the largest change of the linear predictor.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 50, max_halvings: 30 }
    }
}

/// Gaussian approximation at the conditional mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    /// Mode of `(latent field, μ, β)`.
    pub mode: Vec<f64>,
    /// Linear predictor (log-risk) at the mode.
    pub eta: Vec<f64>,
    /// Number of Newton steps that moved the predictor.
    pub iterations: usize,
    /// Factor of the posterior precision at the mode.
    pub factor: CholeskyFactor,
    pub kriging: Kriging,
    pub log_likelihood: f64,
    /// `½ (x − m)ᵀ Q (x − m)` under the prior.
    pub prior_quadratic: f64,
    /// Euclidean norm of the log-posterior gradient projected onto the
    /// constraint null space.
    pub gradient_norm: f64,
    /// Negated second derivative of each log-likelihood term at the mode.
    pub curvature: Vec<f64>,
    /// First derivative of each log-likelihood term at the mode.
    pub slope: Vec<f64>,
}

/// Laplace approximation at one hyperparameter value.
#[derive(Debug, Clone)]
pub struct LaplacePoint {
    pub log_density: f64,
    pub approx: GaussianApprox,
}

/// Precomputed structure for repeated Gaussian approximations of one model
/// and dataset. Symbolic factorizations are shared across hyperparameters.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    model: &'a LatentModel,
    data: &'a Dataset,
    likelihood: Likelihood,
    fixed: FixedEffectsPrior,
    newton: NewtonConfig,
    latent_dim: usize,
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
    pattern: SymSparseMatrix,
    prior_pos: Vec<usize>,
    fixed_pos: Vec<usize>,
    obs_pos: Vec<Vec<(usize, f64)>>,
    post_symbolic: Arc<Symbolic>,
    prior_symbolic: Arc<Symbolic>,
    constraints: ConstraintSet,
    prior_mean: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(
        model: &'a LatentModel,
        data: &'a Dataset,
        likelihood: Likelihood,
        fixed: FixedEffectsPrior,
        newton: NewtonConfig,
    ) -> Result<Self> {
        if data.len() != model.n_regions() {
            return Err(Error::DimensionMismatch { expected: model.n_regions(), got: data.len() });
        }
        if !(fixed.variance > 0.0 && fixed.variance.is_finite()) || !fixed.intercept_mean.is_finite() {
            return Err(Error::Config(format!("fixed-effect prior variance must be positive, got {}", fixed.variance)));
        }
        if let Likelihood::Gaussian { sd } = likelihood {
            if !(sd > 0.0) {
                return Err(Error::Config(format!("gaussian likelihood needs sd > 0, got {sd}")));
            }
        }
        let d = model.latent_dim();
        let p = data.n_covariates();
        let dim = d + 1 + p;
        let rows: Vec<Vec<(usize, f64)>> = (0..data.len())
            .map(|i| {
                let mut r: Vec<(usize, f64)> = model.predictor()[i].iter().map(|&j| (j, 1.0)).collect();
                r.push((d, 1.0));
                r.extend(data.covariates()[i].iter().enumerate().map(|(k, &z)| (d + 1 + k, z)));
                r
            })
            .collect();

        let prior_pattern = model.pattern();
        let mut coords: Vec<(usize, usize)> = prior_pattern.iter().map(|(r, c, _)| (r, c)).collect();
        let n_prior = coords.len();
        coords.extend((d..dim).map(|i| (i, i)));
        let mut pair_coef = Vec::new();
        for r in &rows {
            for (a, &(ja, ca)) in r.iter().enumerate() {
                for &(jb, cb) in &r[..=a] {
                    coords.push((ja, jb));
                    pair_coef.push(ca * cb);
                }
            }
        }
        let (pattern, map) = SymSparseMatrix::pattern_from_coords(dim, &coords)?;
        let prior_pos = map[..n_prior].to_vec();
        let fixed_pos = map[n_prior..n_prior + 1 + p].to_vec();
        let mut k = n_prior + 1 + p;
        let mut c = 0;
        let obs_pos = rows
            .iter()
            .map(|r| {
                let cnt = r.len() * (r.len() + 1) / 2;
                let v = (0..cnt).map(|t| (map[k + t], pair_coef[c + t])).collect();
                k += cnt;
                c += cnt;
                v
            })
            .collect();

        let post_symbolic = Arc::new(Symbolic::analyze(&pattern));
        let prior_symbolic = Arc::new(Symbolic::analyze(prior_pattern));
        let constraints = model.constraints().embed(dim, 0)?;
        let mut prior_mean = vec![0.0; dim];
        prior_mean[d] = fixed.intercept_mean;
        Ok(Self {
            model,
            data,
            likelihood,
            fixed,
            newton,
            latent_dim: d,
            dim,
            rows,
            pattern,
            prior_pos,
            fixed_pos,
            obs_pos,
            post_symbolic,
            prior_symbolic,
            constraints,
            prior_mean,
        })
    }

    pub fn model(&self) -> &LatentModel {
        self.model
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    /// Dimension of `(latent field, μ, β)`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Sparse row of the predictor of region `i` over `(latent, μ, β)`.
    pub fn predictor_row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    /// Starting point satisfying the constraints.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        x[self.latent_dim] = self.likelihood.initial_intercept(self.data.y(), self.data.expected());
        x
    }

    fn eta(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, c)| c * x[j]).sum()).collect()
    }

    fn log_likelihood(&self, eta: &[f64]) -> f64 {
        let (y, e) = (self.data.y(), self.data.expected());
        eta.iter().enumerate().map(|(i, &t)| self.likelihood.log_density(y[i], e[i], t)).sum()
    }

    /// `Q (x − m)` for the full prior precision.
    fn prior_times(&self, q: &SymSparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.latent_dim;
        let mut out = q.mul_vec(&x[..d])?;
        out.extend(
            x[d..]
                .iter()
                .zip(&self.prior_mean[d..])
                .map(|(v, m)| (v - m) / self.fixed.variance),
        );
        Ok(out)
    }

    fn objective(&self, q: &SymSparseMatrix, x: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let qx = self.prior_times(q, x)?;
        let quad = 0.5
            * qx.iter()
                .zip(x.iter().zip(&self.prior_mean))
                .map(|(a, (v, m))| a * (v - m))
                .sum::<f64>();
        let eta = self.eta(x);
        let ll = self.log_likelihood(&eta);
        Ok((ll - quad, quad, eta))
    }

    /// Newton iteration for the constrained conditional mode at `h`.
    pub fn approximate(&self, h: &Hyper, start: Option<&[f64]>) -> Result<GaussianApprox> {
        let q = self.model.regularized_precision(h)?;
        let mut x = match start {
            Some(s) if s.len() == self.dim => s.to_vec(),
            Some(s) => return Err(Error::DimensionMismatch { expected: self.dim, got: s.len() }),
            None => self.initial_point(),
        };
        let (y, e) = (self.data.y(), self.data.expected());
        let mut values = vec![0.0; self.pattern.nnz()];
        let mut last_increment = f64::INFINITY;
        let mut moved = 0;
        for _ in 0..self.newton.max_iterations {
            let (f0, _, eta) = self.objective(&q, &x)?;
            let (mut grad, mut curv) = (vec![0.0; eta.len()], vec![0.0; eta.len()]);
            for (i, &t) in eta.iter().enumerate() {
                let (g, hh) = self.likelihood.derivatives(y[i], e[i], t);
                grad[i] = g;
                curv[i] = hh;
            }
            values.iter_mut().for_each(|v| *v = 0.0);
            for (k, &v) in q.values().iter().enumerate() {
                values[self.prior_pos[k]] += v;
            }
            for &p in &self.fixed_pos {
                values[p] += 1.0 / self.fixed.variance;
            }
            for (i, pos) in self.obs_pos.iter().enumerate() {
                for &(p, c) in pos {
                    values[p] += curv[i] * c;
                }
            }
            let post = self.pattern.with_values(values.clone())?;
            let factor = self.post_symbolic.factor(&post, None)?;
            let kriging = Kriging::new(&factor, &self.constraints)?;

            let mut gradient: Vec<f64> = self.prior_times(&q, &x)?.iter().map(|v| -v).collect();
            for (i, r) in self.rows.iter().enumerate() {
                for &(j, c) in r {
                    gradient[j] += c * grad[i];
                }
            }
            let mut step = factor.solve(&gradient)?;
            kriging.correct(&self.constraints, &mut step);
            let d_eta = self.eta(&step);
            let increment = d_eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !increment.is_finite() {
                return Err(Error::NonConvergence { iterations: moved, last_increment: increment });
            }
            if increment < self.newton.tolerance {
                for (xi, s) in x.iter_mut().zip(&step) {
                    *xi += s;
                }
                return self.finish(&q, x, moved, factor, kriging);
            }
            moved += 1;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=self.newton.max_halvings {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
                let (f1, _, _) = self.objective(&q, &trial)?;
                if f1.is_finite() && f1 >= f0 - 1e-12 * f0.abs().max(1.0) {
                    x = trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence { iterations: moved, last_increment: increment });
            }
            last_increment = increment * scale;
        }
        Err(Error::NonConvergence { iterations: moved, last_increment })
    }

    fn finish(
        &self,
        q: &SymSparseMatrix,
        x: Vec<f64>,
        iterations: usize,
        factor: CholeskyFactor,
        kriging: Kriging,
    ) -> Result<GaussianApprox> {
        let (obj, quad, eta) = self.objective(q, &x)?;
        let (y, e) = (self.data.y(), self.data.expected());
        let mut slope = Vec::with_capacity(eta.len());
        let mut curvature = Vec::with_capacity(eta.len());
        for (i, &t) in eta.iter().enumerate() {
            let (g, h) = self.likelihood.derivatives(y[i], e[i], t);
            slope.push(g);
            curvature.push(h);
        }
        let mut gradient: Vec<f64> = self.prior_times(q, &x)?.iter().map(|v| -v).collect();
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, c) in r {
                gradient[j] += c * slope[i];
            }
        }
        let gradient_norm = projected_norm(&self.constraints, &gradient);
        Ok(GaussianApprox {
            mode: x,
            eta,
            iterations,
            factor,
            kriging,
            log_likelihood: obj + quad,
            prior_quadratic: quad,
            gradient_norm,
            curvature,
            slope,
        })
    }

    /// Laplace approximation of the log posterior of the internal
    /// hyperparameters `theta`, up to an additive constant.
    pub fn log_posterior(&self, theta: &[f64], start: Option<&[f64]>) -> Result<LaplacePoint> {
        let h = self.model.decode(theta)?;
        let log_prior = self.model.log_hyper_prior(theta)?;
        let q = self.model.regularized_precision(&h)?;
        let prior_factor = self.prior_symbolic.factor(&q, None)?;
        let prior_kriging = Kriging::new(&prior_factor, self.model.constraints())?;
        let n_fixed = (self.dim - self.latent_dim) as f64;
        let prior_logdet = prior_factor.log_determinant() - n_fixed * self.fixed.variance.ln();
        let approx = self.approximate(&h, start)?;
        let post_logdet = approx.factor.log_determinant();
        let log_density = log_prior + approx.log_likelihood - approx.prior_quadratic
            + 0.5 * (prior_logdet + prior_kriging.log_det_awt())
            - 0.5 * (post_logdet + approx.kriging.log_det_awt());
        if !log_density.is_finite() {
            return Err(Error::Domain(format!("log posterior is not finite at {theta:?}")));
        }
        Ok(LaplacePoint { log_density, approx })
    }

    /// Mean and variance of every region's predictor under the constrained
    /// Gaussian approximation.
    pub fn predictor_moments(&self, approx: &GaussianApprox) -> Result<(Vec<f64>, Vec<f64>)> {
        let sel = approx.factor.selected_inverse();
        let mut var = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut v = 0.0;
            for &(a, ca) in r {
                for &(b, cb) in r {
                    v += ca * cb * sel.get(a, b).ok_or_else(|| Error::Config("predictor pair outside the factor pattern".into()))?;
                }
            }
            v -= approx.kriging.variance_correction(r);
            var.push(v.max(0.0));
        }
        Ok((approx.eta.clone(), var))
    }

    /// Marginal mean and variance of the fixed effects `(μ, β)`.
    pub fn fixed_moments(&self, approx: &GaussianApprox) -> Vec<(f64, f64)> {
        let sel = approx.factor.selected_inverse();
        (self.latent_dim..self.dim)
            .map(|j| {
                let v = sel.get(j, j).expect("diagonal is stored") - approx.kriging.variance_correction(&[(j, 1.0)]);
                (approx.mode[j], v.max(0.0))
            })
            .collect()
    }
}

/// Norm of `g` after removing its component in the row space of `c`.
fn projected_norm(c: &ConstraintSet, g: &[f64]) -> f64 {
    if c.is_empty() {
        return g.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let a = c.to_dense();
    let gv = DVector::from_column_slice(g);
    let aat: DMatrix<f64> = &a * a.transpose();
    let lam = aat.cholesky().map(|ch| ch.solve(&(&a * &gv)));
    match lam {
        Some(l) => (gv - a.transpose() * l).norm(),
        None => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::models::{ModelKind, ModelSpec};

    fn engine<'a>(m: &'a LatentModel, d: &'a Dataset, lik: Likelihood) -> Engine<'a> {
        Engine::new(m, d, lik, FixedEffectsPrior::default(), NewtonConfig::default()).unwrap()
    }

    #[test]
    fn constant_risk_has_zero_effects() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let m = LatentModel::new(ModelSpec::default_for(ModelKind::Bym2), &g).unwrap();
        let d = Dataset::new(vec![10.0, 20.0, 5.0], vec![10.0, 20.0, 5.0]).unwrap();
        let e = engine(&m, &d, Likelihood::Poisson);
        let a = e.approximate(&Hyper { tau: 5f64.exp(), tau_u: 1.0, phi: 0.5 }, None).unwrap();
        assert!(a.mode[m.latent_dim()].abs() < 1e-3);
        assert!(a.mode[..m.latent_dim()].iter().all(|v| v.abs() < 1e-3));
        assert!(a.gradient_norm < 1e-6);
    }

    #[test]
    fn quadratic_model_takes_one_step() {
        let g = Graph::lattice(2, 3).unwrap();
        let m = LatentModel::new(ModelSpec::default_for(ModelKind::Besag), &g).unwrap();
        let d = Dataset::new(vec![0.3, 0.2, 1.1, 0.5, 0.0, 0.9], vec![1.0; 6]).unwrap();
        let e = engine(&m, &d, Likelihood::Gaussian { sd: 0.5 });
        let a = e.approximate(&Hyper { tau: 2.0, tau_u: 1.0, phi: 0.5 }, None).unwrap();
        assert_eq!(a.iterations, 1);
        assert!(a.gradient_norm < 1e-9);
        assert!(a.mode[..6].iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn single_region_mode_is_bracketed() {
        let g = Graph::parse("1\n0 0\n").unwrap();
        let m = LatentModel::new(ModelSpec::default_for(ModelKind::Iid), &g).unwrap();
        let d = Dataset::new(vec![5.0], vec![1.0]).unwrap();
        let e = engine(&m, &d, Likelihood::Poisson);
        let a = e.approximate(&Hyper { tau: 1.0, tau_u: 1.0, phi: 0.5 }, None).unwrap();
        // one-dimensional oracle: η = μ + v with prior variance 100 + 1,
        // mode solves 5 − e^η − η/101 = 0
        let mut t: f64 = 1.0;
        for _ in 0..100 {
            t -= (5.0 - t.exp() - t / 101.0) / (-t.exp() - 1.0 / 101.0);
        }
        assert!((a.eta[0] - t).abs() < 1e-8);
        assert!(a.eta[0] > 0.0 && a.eta[0] < 5f64.ln() + 0.01);
    }

    #[test]
    fn predictor_variances_match_dense_inverse() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let m = LatentModel::new(ModelSpec::default_for(ModelKind::Bym2), &g).unwrap();
        let d = Dataset::new(vec![3.0, 7.0, 2.0, 9.0], vec![4.0, 5.0, 4.0, 6.0]).unwrap();
        let e = engine(&m, &d, Likelihood::Poisson);
        let a = e.approximate(&Hyper { tau: 3.0, tau_u: 1.0, phi: 0.4 }, None).unwrap();
        let (_, var) = e.predictor_moments(&a).unwrap();
        let sel = a.factor.selected_inverse();
        let dim = e.dim();
        let mut dense = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let mut col = vec![0.0; dim];
            col[i] = 1.0;
            let s = a.factor.solve(&col).unwrap();
            for j in 0..dim {
                dense[(j, i)] = s[j];
            }
        }
        assert!((sel.get(dim - 1, dim - 1).unwrap() - dense[(dim - 1, dim - 1)]).abs() < 1e-10);
        let amat = e.constraints().to_dense();
        let cond = &dense - &dense * amat.transpose() * (&amat * &dense * amat.transpose()).try_inverse().unwrap() * &amat * &dense;
        for i in 0..4 {
            let mut b = DVector::zeros(dim);
            for &(j, c) in e.predictor_row(i) {
                b[j] = c;
            }
            let v = (b.transpose() * &cond * &b)[(0, 0)];
            assert!((var[i] - v).abs() < 1e-9, "region {i}: {} vs {v}", var[i]);
        }
    }
}
