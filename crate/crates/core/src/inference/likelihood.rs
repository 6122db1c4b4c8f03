use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Observation model for `y_i` given the log-risk `η_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Likelihood {
    /// `y ~ Poisson(E exp(η))`.
    #[default]
    Poisson,
    /// `y ~ N(log E + η, sd²)`; mostly useful for testing.
    Gaussian { sd: f64 },
}

impl Likelihood {
    pub fn log_density(&self, y: f64, e: f64, eta: f64) -> f64 {
        match *self {
            Likelihood::Poisson => {
                let mean = e * eta.exp();
                let t = if y > 0.0 { y * (e.ln() + eta) } else { 0.0 };
                t - mean - ln_gamma(y + 1.0)
            }
            Likelihood::Gaussian { sd } => {
                let r = (y - e.ln() - eta) / sd;
                -0.5 * r * r - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    /// First derivative and negated second derivative in `η`.
    pub fn derivatives(&self, y: f64, e: f64, eta: f64) -> (f64, f64) {
        match *self {
            Likelihood::Poisson => {
                let mean = e * eta.exp();
                (y - mean, mean)
            }
            Likelihood::Gaussian { sd } => {
                let w = 1.0 / (sd * sd);
                ((y - e.ln() - eta) * w, w)
            }
        }
    }

    /// Starting value for the intercept.
    pub fn initial_intercept(&self, y: &[f64], e: &[f64]) -> f64 {
        match self {
            Likelihood::Poisson => {
                let (sy, se) = (y.iter().sum::<f64>(), e.iter().sum::<f64>());
                (sy.max(0.5) / se).ln()
            }
            Likelihood::Gaussian { .. } => {
                y.iter().zip(e).map(|(y, e)| y - e.ln()).sum::<f64>() / y.len().max(1) as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_values() {
        let l = Likelihood::Poisson;
        // y = 0, E = 1, η = 0: log e^{-1}
        assert!((l.log_density(0.0, 1.0, 0.0) + 1.0).abs() < 1e-15);
        assert!((l.log_density(3.0, 2.0, 0.1) - (3.0 * (2.0 * 0.1f64.exp()).ln() - 2.0 * 0.1f64.exp() - 6f64.ln())).abs() < 1e-12);
        let (g, h) = l.derivatives(3.0, 2.0, 0.0);
        assert_eq!((g, h), (1.0, 2.0));
    }

    #[test]
    fn gaussian_derivatives_match_differences() {
        let l = Likelihood::Gaussian { sd: 0.7 };
        let (g, h) = l.derivatives(1.3, 1.0, 0.2);
        let d = 1e-5;
        let num = (l.log_density(1.3, 1.0, 0.2 + d) - l.log_density(1.3, 1.0, 0.2 - d)) / (2.0 * d);
        assert!((g - num).abs() < 1e-8);
        assert!((h - 1.0 / 0.49).abs() < 1e-12);
    }
}
