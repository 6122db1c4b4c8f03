#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bym2::inference::{fit, Dataset, FitConfig, FitResult};
use bym2::models::{LatentModel, ModelKind, ModelSpec};
use bym2::parallel::Execution;
use bym2::priors::{PhiPrior, PhiPriorTable, PrecPrior};
use bym2::sim::{replicate_rng, run_study, simulate_dataset, RiskKind, Scenario, StudyConfig};
use bym2::{scale_structured, Error, Graph};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bym2", version, about = "Scaled BYM2 disease mapping")]
struct Cli {
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true, env = "BYM2_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scale the ICAR structure of a graph to unit generalized variance.
    Scale {
        graph: PathBuf,
        /// Write PREFIX.mtx and PREFIX.json instead of printing to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the PC prior of the mixing parameter as CSV.
    PriorPhi {
        graph: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        u: f64,
        #[arg(long, default_value_t = 2.0 / 3.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        /// Table covers logit(φ) in [-range, range].
        #[arg(long, default_value_t = 25.0)]
        logit_range: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model to count data.
    Fit(FitArgs),
    /// Simulate datasets for one scenario.
    Simulate {
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Lattice used when no graph is given, as ROWSxCOLS.
        #[arg(long, default_value = "10x10")]
        lattice: String,
        #[arg(long, value_enum, default_value_t = Risk::Structured)]
        risk: Risk,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 60.0)]
        expected: f64,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the replication study and write summary CSV and per-replicate JSONL.
    Study {
        /// Study configuration JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Risk {
    Constant,
    Iid,
    Structured,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Iid,
    Besag,
    Bym,
    Leroux,
    Dean,
    Bym2,
}

#[derive(Args)]
struct FitArgs {
    graph: PathBuf,
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Kind::Bym2)]
    model: Kind,
    /// PC prior on the precision: U and α with P(1/√τ > U) = α.
    #[arg(long, num_args = 2, value_names = ["U", "ALPHA"], conflicts_with = "tau_gamma")]
    tau_pc: Option<Vec<f64>>,
    /// Gamma prior on the precision: shape and rate.
    #[arg(long, num_args = 2, value_names = ["SHAPE", "RATE"])]
    tau_gamma: Option<Vec<f64>>,
    /// PC prior on φ: U and α with P(φ < U) = α.
    #[arg(long, num_args = 2, value_names = ["U", "ALPHA"], conflicts_with = "phi_uniform")]
    phi_pc: Option<Vec<f64>>,
    #[arg(long)]
    phi_uniform: bool,
    /// Use the scaled structure in the Dean model.
    #[arg(long)]
    scaled_dean: bool,
    /// Fit configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dz: Option<f64>,
    #[arg(long)]
    diff_logdens: Option<f64>,
    /// FitResult JSON output (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-region risk table.
    #[arg(long)]
    risk_csv: Option<PathBuf>,
    /// Posterior summary table of the intercept, covariates and hyperparameters.
    #[arg(long)]
    table: Option<PathBuf>,
}

/// Failure classes mapped to exit codes: 2 for bad input, 3 for numeric failure.
enum CliError {
    Input(String),
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_graph(path: &Path) -> Result<Graph, CliError> {
    Graph::parse(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_lattice(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Input(format!("lattice must look like 10x10, got '{s}'"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn cmd_scale(graph: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let g = load_graph(graph)?;
    let s = scale_structured(&g)?;
    let meta = serde_json::json!({
        "n_regions": s.n_regions(),
        "block_dim": s.block_dim(),
        "rank_deficiency": s.rank_deficiency(),
        "scale_factors": s.scale_factors(),
        "components": s.components(),
        "singleton_regions": s.singleton_regions(),
        "index_base": 1,
    });
    let mut matrix = String::new();
    for (i, j, v) in s.q_star_region_entries() {
        let _ = writeln!(matrix, "{} {} {v:.17e}", i + 1, j + 1);
    }
    match out {
        Some(prefix) => {
            write(&prefix.with_extension("mtx"), &matrix)?;
            write(&prefix.with_extension("json"), &serde_json::to_string_pretty(&meta)?)
        }
        None => {
            println!("# {meta}");
            print!("{matrix}");
            Ok(())
        }
    }
}

fn cmd_prior_phi(graph: &Path, u: f64, alpha: f64, points: usize, range: f64, out: Option<&Path>) -> Result<(), CliError> {
    if !(u > 0.0 && u < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Input(format!("U and alpha must lie in (0, 1), got U={u}, alpha={alpha}")));
    }
    if points < 2 || !(range > 0.0) {
        return Err(CliError::Input("need at least two points and a positive logit range".into()));
    }
    let s = scale_structured(&load_graph(graph)?)?;
    let table = PhiPriorTable::from_structure(PhiPrior::Pc { u, alpha }, &s)?;
    let mut csv = String::from("phi,logit_phi,log_density\n");
    let step = 2.0 * range / (points - 1) as f64;
    for k in 0..points {
        let t = -range + step * k as f64;
        let phi = 1.0 / (1.0 + (-t).exp());
        let _ = writeln!(csv, "{phi:.17e},{t:.17e},{:.17e}", table.exact_logit(t)?);
    }
    emit(out, &csv)
}

fn model_spec(a: &FitArgs) -> Result<ModelSpec, CliError> {
    let kind = match a.model {
        Kind::Iid => ModelKind::Iid,
        Kind::Besag => ModelKind::Besag,
        Kind::Bym => ModelKind::Bym,
        Kind::Leroux => ModelKind::Leroux,
        Kind::Dean => ModelKind::Dean,
        Kind::Bym2 => ModelKind::Bym2,
    };
    let mut spec = ModelSpec::default_for(kind);
    if let Some(p) = &a.tau_pc {
        spec.tau_prior = PrecPrior::Pc { u: p[0], alpha: p[1] };
    }
    if let Some(p) = &a.tau_gamma {
        spec.tau_prior = PrecPrior::Gamma { shape: p[0], rate: p[1] };
    }
    if (a.phi_pc.is_some() || a.phi_uniform) && !kind.has_phi() {
        return Err(CliError::Input(format!("model {} has no mixing parameter", kind.name())));
    }
    if let Some(p) = &a.phi_pc {
        spec.phi_prior = Some(PhiPrior::Pc { u: p[0], alpha: p[1] });
    }
    if a.phi_uniform {
        spec.phi_prior = Some(PhiPrior::Uniform);
    }
    spec.scaled_dean = a.scaled_dean;
    spec.validate()?;
    Ok(spec)
}

fn risk_table(res: &FitResult, data: &Dataset) -> String {
    let mut out = String::from("region,y,E,smr,eta_mean,eta_sd,theta_mean,theta_sd,theta_q025,theta_median,theta_q975,effect_mean,cpo\n");
    for (i, r) in res.regions.iter().enumerate() {
        let (y, e) = (data.y()[i], data.expected()[i]);
        let _ = writeln!(
            out,
            "{},{y},{e},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            y / e,
            r.eta_mean,
            r.eta_sd,
            r.theta_mean,
            r.theta_sd,
            r.theta_q025,
            r.theta_median,
            r.theta_q975,
            r.effect_mean,
            r.cpo.map_or(String::new(), |c| c.to_string())
        );
    }
    out
}

fn summary_table(res: &FitResult) -> String {
    let mut out = String::from("parameter,mean,sd,q025,median,q975,mode\n");
    for m in res.fixed_effects.iter().chain(&res.hyperparameters) {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", m.name, m.mean, m.sd, m.q025, m.median, m.q975, m.mode);
    }
    out
}

fn cmd_fit(a: &FitArgs, exec: Execution) -> Result<(), CliError> {
    let g = load_graph(&a.graph)?;
    let data = Dataset::parse(&read(&a.data)?).map_err(|e| CliError::Input(format!("{}: {e}", a.data.display())))?;
    if data.len() != g.n_regions() {
        return Err(CliError::Input(format!("graph has {} regions but data has {} rows", g.n_regions(), data.len())));
    }
    let mut config: FitConfig = match &a.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => FitConfig::default(),
    };
    if let Some(dz) = a.dz {
        config.dz = dz;
    }
    if let Some(d) = a.diff_logdens {
        config.diff_logdens = d;
    }
    config.execution = exec;
    let model = LatentModel::new(model_spec(a)?, &g)?;
    let res = fit(&model, &data, &config)?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&res)? + "\n"))?;
    if let Some(p) = &a.risk_csv {
        write(p, &risk_table(&res, &data))?;
    }
    if let Some(p) = &a.table {
        write(p, &summary_table(&res))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    graph: Option<&Path>,
    lattice: &str,
    risk: Risk,
    sigma: Option<f64>,
    expected: f64,
    replicates: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let g = match graph {
        Some(p) => load_graph(p)?,
        None => {
            let (r, c) = parse_lattice(lattice)?;
            Graph::lattice(r, c)?
        }
    };
    let risk = match risk {
        Risk::Constant => RiskKind::Constant,
        Risk::Iid => RiskKind::Iid,
        Risk::Structured => RiskKind::Structured,
    };
    let mut scenario = Scenario::new(risk, expected);
    if let Some(s) = sigma {
        scenario.sigma = s;
    }
    scenario.validate()?;
    let s = scale_structured(&g)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Input(format!("{}: {e}", out_dir.display())))?;
    let mut files = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut rng = replicate_rng(seed, 0, r);
        let d = simulate_dataset(&scenario, &s, &mut rng)?;
        let path = out_dir.join(format!("{}_r{r:03}.txt", scenario.label()));
        write(&path, &d.serialize())?;
        files.push(path.display().to_string());
    }
    if graph.is_none() {
        write(&out_dir.join("graph.txt"), &g.serialize())?;
    }
    let manifest = serde_json::json!({ "scenario": scenario, "seed": seed, "files": files });
    write(&out_dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

fn cmd_study(
    config: Option<&Path>,
    graph: Option<&Path>,
    replicates: Option<usize>,
    seed: Option<u64>,
    summary: &Path,
    records: Option<&Path>,
    exec: Execution,
) -> Result<(), CliError> {
    let mut cfg: StudyConfig = match config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => StudyConfig::default(),
    };
    if let Some(g) = graph {
        cfg.graph = Some(g.display().to_string());
    }
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.fit.execution = exec;
    let g = cfg.load_graph()?;
    let out = run_study(&cfg, &g)?;
    write(summary, &out.to_csv())?;
    if let Some(p) = records {
        write(p, &out.to_jsonl()?)?;
    }
    let failed: usize = out.rows.iter().map(|r| r.n_failed).sum();
    if failed > 0 {
        eprintln!("{failed} fits failed and were excluded from the summary");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.threads == 1 { Execution::Sequential } else { Execution::Parallel };
    if cli.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    match &cli.command {
        Command::Scale { graph, out } => cmd_scale(graph, out.as_deref()),
        Command::PriorPhi { graph, u, alpha, points, logit_range, out } => {
            cmd_prior_phi(graph, *u, *alpha, *points, *logit_range, out.as_deref())
        }
        Command::Fit(a) => cmd_fit(a, exec),
        Command::Simulate { graph, lattice, risk, sigma, expected, replicates, seed, out_dir } => {
            cmd_simulate(graph.as_deref(), lattice, *risk, *sigma, *expected, *replicates, *seed, out_dir)
        }
        Command::Study { config, graph, replicates, seed, summary, records } => cmd_study(
            config.as_deref(),
            graph.as_deref(),
            *replicates,
            *seed,
            summary,
            records.as_deref(),
            exec,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
