//! Small numerical helpers: Gauss–Hermite rules, Nelder–Mead, weighted
//! quantiles and Gaussian-mixture summaries.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::erf::erfc;

/// Nodes and weights of the `n`-point Gauss–Hermite rule for `∫ e^{-x²} f(x) dx`,
/// from the eigen decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrise to remove eigen-solver asymmetry
    for k in 0..n / 2 {
        let (a, b) = (pairs[k], pairs[n - 1 - k]);
        let x = 0.5 * (b.0 - a.0);
        let w = 0.5 * (a.1 + b.1);
        pairs[k] = (-x, w);
        pairs[n - 1 - k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    pub initial_step: f64,
    pub f_tolerance: f64,
    pub x_tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self { initial_step: 1.0, f_tolerance: 1e-8, x_tolerance: 1e-5, max_evaluations: 600 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimises `f`; non-finite values are treated as +∞.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: NelderMeadConfig) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += cfg.initial_step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    while evals < cfg.max_evaluations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if (worst - best).abs() <= cfg.f_tolerance * (1.0 + best.abs()) && spread <= cfg.x_tolerance {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < best {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < worst.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&x, &mut evals);
                    *item = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evaluations: evals, converged }
}

/// Quantile of a discrete weighted sample, interpolating the CDF between
/// the mid-points of consecutive atoms.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &i in &idx {
        let mid = (cum + 0.5 * weights[i]) / total;
        cum += weights[i];
        if mid >= p {
            return match prev {
                None => values[i],
                Some((pv, pm)) if mid > pm => pv + (values[i] - pv) * (p - pm) / (mid - pm),
                Some(_) => values[i],
            };
        }
        prev = Some((values[i], mid));
    }
    values[*idx.last().expect("non-empty sample")]
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Mixture of normals `Σ w_k N(m_k, s_k²)` with normalized weights.
#[derive(Debug, Clone, Copy)]
pub struct NormalMixture<'a> {
    pub weights: &'a [f64],
    pub means: &'a [f64],
    pub vars: &'a [f64],
}

impl NormalMixture<'_> {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(self.vars))
            .map(|(w, (m, v))| w * (v + m * m))
            .sum();
        (second - mean * mean).max(0.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(self.vars))
            .map(|(w, (m, v))| {
                if *v > 0.0 {
                    w * std_normal_cdf((x - m) / v.sqrt())
                } else if x >= *m {
                    *w
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(self.vars))
            .filter(|(_, (_, v))| **v > 0.0)
            .map(|(w, (m, v))| w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
            .sum()
    }

    fn bounds(&self) -> (f64, f64) {
        let lo = self.means.iter().zip(self.vars).map(|(m, v)| m - 10.0 * v.sqrt()).fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().zip(self.vars).map(|(m, v)| m + 10.0 * v.sqrt()).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = self.bounds();
        if lo == hi {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Location of the highest density on a fine grid, refined by golden
    /// section around the best grid cell.
    pub fn mode(&self) -> f64 {
        let (lo, hi) = self.bounds();
        if lo == hi || self.vars.iter().all(|v| *v <= 0.0) {
            return self.mean();
        }
        let n = 2000;
        let step = (hi - lo) / n as f64;
        let best = (0..=n)
            .map(|k| lo + step * k as f64)
            .max_by(|a, b| self.density(*a).total_cmp(&self.density(*b)))
            .expect("grid non-empty");
        let (mut a, mut b) = (best - step, best + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            if self.density(c) > self.density(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_integrates_moments() {
        let (x, w) = gauss_hermite(61);
        let pi_sqrt = std::f64::consts::PI.sqrt();
        assert!((w.iter().sum::<f64>() - pi_sqrt).abs() < 1e-12);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m2 - pi_sqrt / 2.0).abs() < 1e-12);
        // E[exp(X)] for X ~ N(0, 1) is e^{1/2}
        let e: f64 = x.iter().zip(&w).map(|(x, w)| w * (std::f64::consts::SQRT_2 * x).exp()).sum::<f64>() / pi_sqrt;
        assert!((e - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let m = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1], &[0.0, 0.0], NelderMeadConfig::default());
        // stationary point of the quadratic
        let det = 2.0 * 6.0 - 0.25;
        let x0 = (2.0 * 6.0 - 0.5 * (-12.0)) / det;
        let x1 = (2.0 * -12.0 - 0.5 * 2.0) / det;
        assert!(m.converged);
        assert!((m.x[0] - x0).abs() < 1e-4 && (m.x[1] - x1).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn weighted_quantiles() {
        let v = [1.0, 2.0, 3.0];
        let w = [1.0, 1.0, 1.0];
        assert_eq!(weighted_quantile(&v, &w, 0.5), 2.0);
        assert_eq!(weighted_quantile(&v, &w, 0.0), 1.0);
        assert_eq!(weighted_quantile(&v, &w, 1.0), 3.0);
        assert!((weighted_quantile(&v, &w, 2.0 / 3.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn mixture_of_one_normal() {
        let m = NormalMixture { weights: &[1.0], means: &[1.5], vars: &[4.0] };
        assert!((m.quantile(0.975) - (1.5 + 2.0 * 1.959963984540054)).abs() < 1e-8);
        assert!((m.mode() - 1.5).abs() < 1e-6);
        assert!((m.variance() - 4.0).abs() < 1e-12);
    }
}
