use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use corrdrift::bench::{parametric_rate_check, run_study, BasisChoice, ExperimentConfig, StudyOutput};
use corrdrift::estimator::fit_fixed_m;
use corrdrift::selection::{select, SelectionSpec};
use corrdrift::simulate::{simulate_ensemble, SimulationSpec};
use corrdrift::{DriftEstimate, ModelId, ModelSpec, PathEnsemble};
use serde::Serialize;

use crate::config::{CorrelationName, CorrelationSection, FileConfig, OneOrMany, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{Outputs, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "corrdrift", version, about = "Drift estimation for diffusions driven by correlated Brownian motions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving CSV outputs and the run manifest.
    #[arg(long, global = true, default_value = "corrdrift-out")]
    pub out: PathBuf,
    /// Caps the worker pool.
    #[arg(long, global = true, env = "CORRDRIFT_THREADS")]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true, env = "CORRDRIFT_SEED")]
    pub seed: Option<u64>,
    /// Models, e.g. `ex1,ex4`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub model: Vec<String>,
    /// Bases: `hermite`, `cosine`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub basis: Vec<String>,
    /// Number of paths N.
    #[arg(long = "n", global = true)]
    pub n_paths: Option<usize>,
    /// Horizon T.
    #[arg(long = "horizon", global = true)]
    pub horizon: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Correlation family: identity, toeplitz, tridiagonal, equicorrelated.
    #[arg(long, global = true)]
    pub correlation: Option<String>,
    /// Correlation parameter(s), e.g. `0,0.5,0.9`.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub rho: Vec<f64>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true)]
    pub m_max: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one ensemble and store it in the binary format.
    Simulate {
        /// Also write a long-format CSV copy.
        #[arg(long)]
        csv: bool,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Fit the projection estimator at a fixed dimension.
    Fit {
        #[arg(long)]
        m: usize,
        /// Binary ensemble to fit; simulated from the config when absent.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Select the dimension by penalized contrast.
    Select {
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Run the Monte-Carlo study.
    Bench,
    /// Dependence statistics of the correlation matrix.
    Stats,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Fit { .. } => "fit",
            Command::Select { .. } => "select",
            Command::Bench => "bench",
            Command::Stats => "stats",
        }
    }
}

fn apply_overrides(file: &mut FileConfig, o: &Overrides) -> CliResult<()> {
    if let Some(s) = o.seed {
        file.seed = Some(s);
    }
    if !o.model.is_empty() {
        let models = o
            .model
            .iter()
            .map(|s| ModelId::parse(s).ok_or_else(|| CliError::Config(format!("invalid `model`: unknown model {s:?}"))))
            .collect::<CliResult<Vec<_>>>()?;
        file.model = Some(OneOrMany::Many(models));
    }
    if !o.basis.is_empty() {
        let bases = o
            .basis
            .iter()
            .map(|s| match s.to_ascii_lowercase().as_str() {
                "hermite" => Ok(BasisChoice::Hermite),
                "cosine" => Ok(BasisChoice::Cosine),
                _ => Err(CliError::Config(format!("invalid `basis`: unknown basis {s:?}"))),
            })
            .collect::<CliResult<Vec<_>>>()?;
        file.basis = Some(OneOrMany::Many(bases));
    }
    file.n_paths = o.n_paths.or(file.n_paths);
    file.horizon = o.horizon.or(file.horizon);
    file.dt = o.dt.or(file.dt);
    file.replicates = o.replicates.or(file.replicates);
    file.kappa = o.kappa.or(file.kappa);
    file.m_max = o.m_max.or(file.m_max);
    if o.correlation.is_some() || !o.rho.is_empty() {
        let mut section =
            file.correlation.clone().unwrap_or(CorrelationSection { kind: CorrelationName::Toeplitz, rho: None, block: None });
        if let Some(kind) = &o.correlation {
            section.kind = match kind.as_str() {
                "identity" => CorrelationName::Identity,
                "toeplitz" => CorrelationName::Toeplitz,
                "tridiagonal" => CorrelationName::Tridiagonal,
                "equicorrelated" => CorrelationName::Equicorrelated,
                "block_toeplitz" => CorrelationName::BlockToeplitz,
                _ => return Err(CliError::Config(format!("invalid `correlation.kind`: unknown family {kind:?}"))),
            };
        }
        if !o.rho.is_empty() {
            section.rho = Some(OneOrMany::Many(o.rho.clone()));
        }
        file.correlation = Some(section);
    }
    Ok(())
}

/// Config file (if any) with flag and environment overrides applied.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            FileConfig::from_toml(&text)?
        }
        None => FileConfig::default(),
    };
    apply_overrides(&mut file, &cli.overrides)?;
    file.resolve()
}

/// Result of one command: what was written and the line printed to stdout.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub summary: String,
}

pub fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("invalid `threads`: must be positive".into()));
        }
        // A second initialization (e.g. repeated in-process runs) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = resolve_config(cli)?;
    let start = Instant::now();
    let mut out = Outputs::new(&cli.out)?;
    let summary = match &cli.command {
        Command::Simulate { csv, replicate } => run_simulate(&config, &mut out, *csv, *replicate)?,
        Command::Fit { m, ensemble } => run_fit(&config, &mut out, *m, ensemble.as_deref())?,
        Command::Select { ensemble } => run_select(&config, &mut out, ensemble.as_deref())?,
        Command::Bench => run_bench(&config, &mut out)?,
        Command::Stats => run_stats(&config, &mut out)?,
    };
    let manifest = out.finish(cli.command.name(), &config, start.elapsed())?;
    Ok(Outcome { manifest, summary })
}

fn first_model(cfg: &ExperimentConfig) -> CliResult<ModelSpec> {
    Ok(cfg.model(cfg.models[0])?)
}

fn simulate_first(cfg: &ExperimentConfig, model: &ModelSpec, replicate: u64) -> CliResult<PathEnsemble> {
    let r = cfg.correlation.build(cfg.n_paths, cfg.rhos[0])?;
    let spec = SimulationSpec::new(cfg.n_paths, cfg.horizon, cfg.dt, cfg.seed).replicate(replicate);
    Ok(simulate_ensemble(model, &spec, &r)?)
}

fn load_or_simulate(cfg: &ExperimentConfig, model: &ModelSpec, path: Option<&Path>) -> CliResult<PathEnsemble> {
    match path {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(PathEnsemble::read_binary(BufReader::new(f))?)
        }
        None => simulate_first(cfg, model, 0),
    }
}

fn run_simulate(config: &RunConfig, out: &mut Outputs, csv: bool, replicate: u64) -> CliResult<String> {
    let cfg = &config.experiment;
    let model = first_model(cfg)?;
    let ens = simulate_first(cfg, &model, replicate)?;
    out.with_writer("ensemble.bin", |w| Ok(ens.write_binary(w)?))?;
    if csv {
        out.with_writer("ensemble.csv", |w| Ok(ens.write_csv(w)?))?;
    }
    Ok(file_list(out))
}

#[derive(Serialize)]
struct ThetaRow {
    j: usize,
    theta: f64,
}

#[derive(Serialize)]
struct CurveRow {
    x: f64,
    b: f64,
    b_hat: f64,
}

fn write_estimate(out: &mut Outputs, est: &DriftEstimate, model: &ModelSpec, grid_n: usize) -> CliResult<()> {
    out.csv("theta.csv", est.theta.iter().enumerate().map(|(j, &theta)| ThetaRow { j: j + 1, theta }))?;
    let (a, b) = model.interval();
    let h = (b - a) / (grid_n - 1) as f64;
    let rows = (0..grid_n).map(|k| {
        let x = if k + 1 == grid_n { b } else { a + h * k as f64 };
        CurveRow { x, b: model.drift(x), b_hat: est.eval(x) }
    });
    out.csv("curve.csv", rows)?;
    Ok(())
}

fn run_fit(config: &RunConfig, out: &mut Outputs, m: usize, path: Option<&Path>) -> CliResult<String> {
    let cfg = &config.experiment;
    let model = first_model(cfg)?;
    let ens = load_or_simulate(cfg, &model, path)?;
    let basis = cfg.bases[0].build(&model, m)?;
    let est = fit_fixed_m(&ens, &basis, m, None, &cfg.gate)?;
    let mise = corrdrift::bench::mise(&est, &model, cfg.mise_grid)?;
    write_estimate(out, &est, &model, cfg.mise_grid)?;
    Ok(format!("m={} truncated={} mise_x100={:.6}", m, est.truncated, 100.0 * mise))
}

#[derive(Serialize)]
struct CriterionCsv {
    m: usize,
    admissible: bool,
    norm_sq: Option<f64>,
    penalty: Option<f64>,
    criterion: Option<f64>,
    mise: Option<f64>,
}

fn run_select(config: &RunConfig, out: &mut Outputs, path: Option<&Path>) -> CliResult<String> {
    let cfg = &config.experiment;
    let model = first_model(cfg)?;
    let ens = load_or_simulate(cfg, &model, path)?;
    let choice = cfg.bases[0];
    let m_max = cfg.m_max_for(choice, model.id());
    let basis = choice.build(&model, m_max)?;
    let sigma = |x: f64| model.diffusion(x);
    let spec = SelectionSpec { kappa: cfg.kappa, gate: cfg.gate, ..SelectionSpec::new(m_max) };
    let sel = select(&ens, &basis, &spec, Some(&sigma))?;
    let rows = sel
        .rows
        .iter()
        .map(|r| {
            let mise = sel.fit(r.m).map(|f| corrdrift::bench::mise(f, &model, cfg.mise_grid)).transpose()?;
            Ok(CriterionCsv {
                m: r.m,
                admissible: r.admissible,
                norm_sq: r.norm_sq,
                penalty: r.penalty,
                criterion: r.criterion,
                mise,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.csv("criterion.csv", rows)?;
    write_estimate(out, &sel.estimate, &model, cfg.mise_grid)?;
    let mise = corrdrift::bench::mise(&sel.estimate, &model, cfg.mise_grid)?;
    Ok(format!("m_hat={} mise_x100={:.6} admissible={}", sel.m_hat, 100.0 * mise, sel.admissible.len()))
}

#[derive(Serialize)]
struct ReplicateCsv {
    model: ModelId,
    basis: BasisChoice,
    rho: f64,
    replicate: usize,
    m_hat: usize,
    mise: f64,
    oracle_mise: f64,
    oracle_m: usize,
    selected_penalty: f64,
}

#[derive(Serialize)]
struct DependenceCsv {
    rho: f64,
    abs_sum: f64,
    op_norm: f64,
}

#[derive(Serialize)]
struct ParametricCsv {
    rho: f64,
    n_paths: usize,
    horizon: f64,
    sigma: f64,
    replicates: usize,
    mc_mse: f64,
    formula_mse: f64,
    relative_error: f64,
}

fn dependence_rows(cfg: &ExperimentConfig) -> CliResult<Vec<DependenceCsv>> {
    cfg.rhos
        .iter()
        .map(|&rho| {
            let s = cfg.correlation.build(cfg.n_paths, rho)?.dependence_stats()?;
            Ok(DependenceCsv { rho, abs_sum: s.abs_sum, op_norm: s.op_norm })
        })
        .collect()
}

fn write_beams(out: &mut Outputs, cfg: &ExperimentConfig, study: &StudyOutput) -> CliResult<()> {
    for row in &study.rows {
        let model = cfg.model(row.model)?;
        let (a, b) = model.interval();
        let n = cfg.mise_grid;
        let h = (b - a) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|k| if k + 1 == n { b } else { a + h * k as f64 }).collect();
        let recs: Vec<_> = study.records_for(row.model, row.basis, row.rho).collect();
        let mut header = vec!["x".to_string(), "b".to_string()];
        header.extend(recs.iter().map(|r| format!("rep{}", r.replicate + 1)));
        let bases = recs
            .iter()
            .map(|r| row.basis.build(&model, r.theta.len().max(1)))
            .collect::<Result<Vec<_>, _>>()?;
        let table: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| {
                let mut line = vec![x, model.drift(x)];
                line.extend(recs.iter().zip(&bases).map(|(r, basis)| basis.combine(&r.theta, x)));
                line
            })
            .collect();
        let name = format!("beams/{}_{}_rho{}.csv", row.model, row.basis, row.rho);
        out.csv_table(&name, &header, &table)?;
    }
    Ok(())
}

fn run_bench(config: &RunConfig, out: &mut Outputs) -> CliResult<String> {
    let cfg = &config.experiment;
    let study = run_study(cfg)?;
    out.csv("table1.csv", &study.rows)?;
    out.csv(
        "replicates.csv",
        study.records.iter().map(|r| ReplicateCsv {
            model: r.model,
            basis: r.basis,
            rho: r.rho,
            replicate: r.replicate,
            m_hat: r.m_hat,
            mise: r.mise,
            oracle_mise: r.oracle_mise,
            oracle_m: r.oracle_m,
            selected_penalty: r.selected_penalty,
        }),
    )?;
    if !study.failures.is_empty() {
        out.csv("failures.csv", &study.failures)?;
    }
    out.csv("tab0.csv", dependence_rows(cfg)?)?;
    let p = &config.parametric;
    let parametric = cfg
        .rhos
        .iter()
        .map(|&rho| {
            let r = cfg.correlation.build(cfg.n_paths, rho)?;
            let c = parametric_rate_check(p.horizon, &r, p.mu, p.sigma, p.replicates, cfg.seed)?;
            Ok(ParametricCsv {
                rho,
                n_paths: cfg.n_paths,
                horizon: p.horizon,
                sigma: p.sigma,
                replicates: p.replicates,
                mc_mse: c.mc_mse,
                formula_mse: c.formula_mse,
                relative_error: c.mc_mse / c.formula_mse - 1.0,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.csv("parametric.csv", parametric)?;
    write_beams(out, cfg, &study)?;
    Ok(format!(
        "{} cells, {} failed replicates; {}",
        study.rows.len(),
        study.failures.len(),
        file_list(out)
    ))
}

fn run_stats(config: &RunConfig, out: &mut Outputs) -> CliResult<String> {
    let rows = dependence_rows(&config.experiment)?;
    // The console copy drops floating-point noise; tab0.csv keeps every digit.
    let tidy = |v: f64| (v * 1e10).round() / 1e10;
    let mut text = String::from("rho,abs_sum,op_norm");
    for r in &rows {
        text.push_str(&format!("\n{},{},{}", r.rho, tidy(r.abs_sum), tidy(r.op_norm)));
    }
    out.csv("tab0.csv", rows)?;
    Ok(text)
}

fn file_list(out: &Outputs) -> String {
    let names: Vec<String> = out
        .files()
        .iter()
        .map(|p| p.strip_prefix(out.dir()).unwrap_or(p).display().to_string())
        .collect();
    format!("wrote {} to {}", names.join(", "), out.dir().display())
}

/// Entry point shared by the binary: parses arguments, runs, reports.
pub fn main_with_args<I, T>(args: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(if code == 0 { stdout as &mut dyn Write } else { stderr as &mut dyn Write }, "{e}");
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(outcome) => {
            let _ = writeln!(stdout, "{}", outcome.summary);
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
