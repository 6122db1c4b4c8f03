use bym2::inference::{fit, Dataset, FitConfig, Likelihood};
use bym2::models::{LatentModel, ModelKind, ModelSpec};
use bym2::parallel::Execution;
use bym2::Graph;
use nalgebra::{DMatrix, DVector};

/// Dense conjugate posterior of η = μ·1 + x for a Gaussian likelihood,
/// x ~ N(0, (τ R + εI)⁻¹) with optional sum-to-zero, μ ~ N(0, 100).
fn conjugate_eta(r: &DMatrix<f64>, tau: f64, constrained: bool, y: &[f64], sd: f64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let eps = 1e-6 * (r.diagonal().sum() / n as f64).max(1e-300);
    let mut q = DMatrix::zeros(n + 1, n + 1);
    q.view_mut((0, 0), (n, n)).copy_from(&(r * tau + DMatrix::identity(n, n) * (eps * tau)));
    q[(n, n)] = 1.0 / 100.0;
    let mut a = DMatrix::zeros(n, n + 1);
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(i, n)] = 1.0;
    }
    let w = 1.0 / (sd * sd);
    let qp = &q + a.transpose() * &a * w;
    let b = a.transpose() * DVector::from_column_slice(y) * w;
    let cov = qp.clone().cholesky().unwrap().inverse();
    let mut mean = &cov * b;
    let mut cov_c = cov.clone();
    if constrained {
        let mut c = DMatrix::zeros(1, n + 1);
        for i in 0..n {
            c[(0, i)] = 1.0;
        }
        let sc = &cov * c.transpose();
        let k = &sc / (&c * &sc)[(0, 0)];
        mean -= &k * (&c * &mean);
        cov_c = &cov - &k * sc.transpose();
    }
    let eta_mean = &a * mean;
    let eta_cov = &a * cov_c * a.transpose();
    (eta_mean.iter().copied().collect(), (0..n).map(|i| eta_cov[(i, i)].sqrt()).collect())
}

fn gaussian_config(theta: f64, sd: f64) -> FitConfig {
    FitConfig { likelihood: Likelihood::Gaussian { sd }, fixed_theta: Some(vec![theta]), ..FitConfig::default() }
}

#[test]
fn gaussian_fit_matches_conjugate_posterior() {
    let g = Graph::lattice(3, 4).unwrap();
    let n = g.n_regions();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 0.3 * ((i * 7) % 5) as f64).collect();
    // with E = 1 the Gaussian likelihood sees y directly
    let data = Dataset::new(y.clone(), vec![1.0; n]).unwrap();
    let sd = 0.4;
    let tau: f64 = 3.0;
    for (kind, r, constrained) in [
        (ModelKind::Iid, DMatrix::identity(n, n), false),
        (ModelKind::Besag, g.besag_precision().to_dense(), true),
    ] {
        let model = LatentModel::new(ModelSpec::default_for(kind), &g).unwrap();
        let res = fit(&model, &data, &gaussian_config(tau.ln(), sd)).unwrap();
        let (m, s) = conjugate_eta(&r, tau, constrained, &y, sd);
        for i in 0..n {
            assert!((res.regions[i].eta_mean - m[i]).abs() < 1e-4, "{kind} mean {i}: {} vs {}", res.regions[i].eta_mean, m[i]);
            assert!((res.regions[i].eta_sd - s[i]).abs() < 1e-4, "{kind} sd {i}: {} vs {}", res.regions[i].eta_sd, s[i]);
        }
    }
}

#[test]
fn sequential_and_parallel_fits_agree_exactly() {
    let g = Graph::lattice(4, 4).unwrap();
    let y: Vec<f64> = (0..16).map(|i| (5 + (i * 3) % 11) as f64).collect();
    let data = Dataset::new(y, vec![8.0; 16]).unwrap();
    let model = LatentModel::new(ModelSpec::default_for(ModelKind::Bym2), &g).unwrap();
    let base = FitConfig { dz: 0.5, diff_logdens: 8.0, ..FitConfig::default() };
    let a = fit(&model, &data, &FitConfig { execution: Execution::Sequential, ..base.clone() }).unwrap();
    let b = fit(&model, &data, &FitConfig { execution: Execution::Parallel, ..base }).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn effective_parameters_are_bounded() {
    let g = Graph::lattice(5, 5).unwrap();
    let y: Vec<f64> = (0..25).map(|i| ((i * 13) % 17) as f64).collect();
    let data = Dataset::new(y, vec![6.0; 25]).unwrap();
    let cfg = FitConfig { dz: 0.75, diff_logdens: 6.0, ..FitConfig::default() };
    for kind in ModelKind::ALL {
        let model = LatentModel::new(ModelSpec::default_for(kind), &g).unwrap();
        let res = fit(&model, &data, &cfg).unwrap();
        let upper = (model.latent_dim() + 1) as f64;
        assert!(res.diagnostics.p_d > 0.0 && res.diagnostics.p_d < upper, "{kind}: pD = {}", res.diagnostics.p_d);
        assert!(res.diagnostics.log_score.is_finite());
        let w: f64 = res.weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
    }
}

#[test]
fn covariate_effect_is_recovered() {
    let g = Graph::lattice(6, 6).unwrap();
    let z: Vec<f64> = (0..36).map(|i| (i as f64 - 17.5) / 10.0).collect();
    let e = vec![50.0; 36];
    // counts set to their expected values under β = 0.4
    let y: Vec<f64> = z.iter().map(|zi| (50.0 * (0.4 * zi).exp()).round()).collect();
    let data = Dataset::with_covariates(y, e, z.iter().map(|v| vec![*v]).collect(), vec!["x".into()]).unwrap();
    let model = LatentModel::new(ModelSpec::default_for(ModelKind::Bym2), &g).unwrap();
    let res = fit(&model, &data, &FitConfig { dz: 0.75, diff_logdens: 6.0, ..FitConfig::default() }).unwrap();
    let beta = &res.fixed_effects[1];
    assert_eq!(beta.name, "x");
    assert!((beta.mean - 0.4).abs() < 0.05, "{beta:?}");
    assert!(beta.q025 < 0.4 && beta.q975 > 0.4);
}

#[test]
fn graph_with_island_fits() {
    let g = Graph::from_edges(7, &[(0, 1), (1, 2), (2, 3), (4, 5)]).unwrap();
    let data = Dataset::new(vec![3.0, 5.0, 9.0, 4.0, 12.0, 10.0, 7.0], vec![6.0; 7]).unwrap();
    let model = LatentModel::new(ModelSpec::default_for(ModelKind::Bym2), &g).unwrap();
    let res = fit(&model, &data, &FitConfig { dz: 0.75, diff_logdens: 6.0, ..FitConfig::default() }).unwrap();
    assert_eq!(res.structure.singleton_regions, vec![6]);
    assert_eq!(res.structure.rank_deficiency, 2);
    assert!(res.regions.iter().all(|r| r.theta_mean.is_finite()));
}
