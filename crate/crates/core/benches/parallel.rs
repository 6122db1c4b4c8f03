use std::hint::black_box;

use bym2::inference::{fit, FitConfig};
use bym2::models::{LatentModel, ModelKind, ModelSpec};
use bym2::parallel::Execution;
use bym2::sim::{default_models, replicate_rng, run_study, simulate_dataset, study_fit_config, RiskKind, Scenario, StudyConfig};
use bym2::{scale_structured, Graph};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn grid_fit(c: &mut Criterion) {
    let g = Graph::lattice(8, 8).unwrap();
    let s = scale_structured(&g).unwrap();
    let scenario = Scenario::new(RiskKind::Structured, 60.0);
    let data = simulate_dataset(&scenario, &s, &mut replicate_rng(7, 0, 0)).unwrap();
    let model = LatentModel::new(ModelSpec::default_for(ModelKind::Bym2), &g).unwrap();

    let mut group = c.benchmark_group("bym2_fit_8x8");
    group.sample_size(10);
    for (name, exec) in MODES {
        let config = FitConfig { execution: exec, ..study_fit_config() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, cfg| {
            b.iter(|| fit(black_box(&model), black_box(&data), cfg).unwrap())
        });
    }
    group.finish();
}

fn small_study(c: &mut Criterion) {
    let mut group = c.benchmark_group("study_6x6");
    group.sample_size(10);
    for (name, exec) in MODES {
        let config = StudyConfig {
            scenarios: vec![Scenario::new(RiskKind::Iid, 60.0)],
            models: default_models().into_iter().take(3).collect(),
            replicates: 4,
            lattice: (6, 6),
            fit: FitConfig { execution: exec, ..study_fit_config() },
            ..StudyConfig::default()
        };
        let g = config.load_graph().unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, cfg| {
            b.iter(|| run_study(cfg, &g).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, grid_fit, small_study);
criterion_main!(benches);
