//! `dephasing` command-line front end.
//!
//! Each subcommand reads one JSON config, runs the library operation and
//! writes its tables and a JSON envelope (`<command>.json`) holding the
//! resolved config, its SHA-256 hash and the seed into `--out`.
//!
//! Exit codes: 0 success, 2 validation, 3 I/O, 4 numerical failure.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dephasing::bayes::run_protocol;
use dephasing::frequentist::{fit, optimal_times, SearchConfig};
use dephasing::harness::{precision_ratio, ratio_sweep, sweep_csv, uniform_vs_optimal_ratio, SweepKind};
use dephasing::nonmarkov::{markovian_boundary, min_rate, n_cp, n_td, Horizon};
use dephasing::sim::sample_dataset;
use dephasing::{DataSet, Error, Family, NoiseModel};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::*;

#[derive(Parser)]
#[command(name = "dephasing", version, about = "Estimate qubit dephasing noise from Ramsey data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample a Ramsey data set.
    Simulate,
    /// Fit a noise model to a data set.
    Fit,
    /// Optimal measurement times over a sweep of correlation times.
    OptimalTimes,
    /// Run the adaptive Bayesian protocol.
    Bayes,
    /// Compare estimators by Monte-Carlo.
    Compare,
    /// Non-Markovianity measures and the Markovian boundary.
    Nonmarkov,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::OptimalTimes => "optimal-times",
            Command::Bayes => "bayes",
            Command::Compare => "compare",
            Command::Nonmarkov => "nonmarkov",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Domain { .. } | Error::InvalidParameter(_) | Error::Unsupported(_) | Error::IllPosed(_) => {
                Failure::Validation(m)
            }
            Error::Io(_) | Error::Parse(_) | Error::Json(_) => Failure::Io(m),
            Error::Numerical(_)
            | Error::Singular(_)
            | Error::NoSignal(_)
            | Error::DegenerateUpdate { .. }
            | Error::Unreliable { .. } => Failure::Numerical(m),
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn invalid(m: impl Into<String>) -> Failure {
    Failure::Validation(m.into())
}

type Outcome<T = ()> = Result<T, Failure>;

struct Context {
    command: Command,
    config_path: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
}

impl Context {
    fn load<C: DeserializeOwned + Seeded>(&self) -> Outcome<C> {
        let text = fs::read_to_string(&self.config_path).map_err(|e| io_err(&self.config_path, e))?;
        let mut c: C = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", self.config_path.display())))?;
        if let Some(s) = self.seed {
            c.set_seed(s);
        }
        fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        Ok(c)
    }

    fn write(&self, name: &str, contents: &str) -> Outcome<String> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        Ok(name.to_string())
    }

    /// Writes `<command>.json` with the resolved config and provenance.
    fn envelope<C: Serialize + Seeded>(&self, config: &C, files: &[String], result: Value) -> Outcome {
        let config_value = serde_json::to_value(config).map_err(|e| Failure::Io(e.to_string()))?;
        let canonical = serde_json::to_vec(&config_value).map_err(|e| Failure::Io(e.to_string()))?;
        let doc = json!({
            "command": self.command.name(),
            "config": config_value,
            "config_hash": hex::encode(Sha256::digest(&canonical)),
            "seed": config.seed(),
            "files": files,
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Io(e.to_string()))?;
        text.push('\n');
        self.write(&format!("{}.json", self.command.name()), &text)?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Outcome<Value> {
    serde_json::to_value(v).map_err(|e| Failure::Io(e.to_string()))
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Outcome<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Io(e.to_string()))
}

fn cmd_simulate(ctx: &Context) -> Outcome {
    let c: SimulateConfig = ctx.load()?;
    c.model.validate()?;
    if c.name.is_empty() || c.name.contains(['/', '\\']) {
        return Err(invalid("name must be a plain file name"));
    }
    let data = sample_dataset(&c.model, &c.schedule, c.seed);
    let csv_path = ctx.out.join(format!("{}.csv", c.name));
    let sidecar = data.save(&csv_path)?;
    let files = vec![
        format!("{}.csv", c.name),
        sidecar.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    ];
    ctx.envelope(&c, &files, json!({ "records": data.records.len(), "total_shots": data.total_shots() }))
}

fn cmd_fit(ctx: &Context) -> Outcome {
    let c: FitCommandConfig = ctx.load()?;
    c.fit.validate(c.family)?;
    let base = ctx.config_path.parent().unwrap_or(Path::new("."));
    let data_path = if c.data.is_absolute() { c.data.clone() } else { base.join(&c.data) };
    let data = DataSet::load(&data_path)?;
    if let Some(truth) = data.model_truth {
        if truth.family() != c.family {
            return Err(invalid(format!(
                "data were generated by {} but the fit asks for {}",
                truth.family().name(),
                c.family.name()
            )));
        }
    }
    let report = fit(&data, c.family, &c.fit)?;
    ctx.envelope(&c, &[], to_value(&report)?)
}

fn cmd_optimal_times(ctx: &Context) -> Outcome {
    let c: OptimalTimesConfig = ctx.load()?;
    if !(c.t2 > 0.0 && c.t2.is_finite()) {
        return Err(invalid("t2 must be > 0"));
    }
    let k = c.times.unwrap_or(c.family.dim());
    if k == 0 {
        return Err(invalid("times must be >= 1"));
    }
    let build = |ratio: f64| -> dephasing::Result<NoiseModel> {
        match c.family {
            Family::White => NoiseModel::white(c.t2),
            Family::OrnsteinUhlenbeck => NoiseModel::ornstein_uhlenbeck(c.t2, ratio * c.t2),
            Family::DisplacedLorentzian => NoiseModel::displaced_lorentzian_from_times(
                c.t2,
                ratio * c.t2,
                c.delta_c.unwrap_or(f64::NAN) / c.t2,
            ),
        }
    };
    let ratios: Vec<Option<f64>> = match c.family {
        Family::White => {
            if !c.ratios.is_empty() {
                return Err(invalid("ratios do not apply to the white-noise family"));
            }
            vec![None]
        }
        _ => {
            if c.ratios.is_empty() {
                return Err(invalid("ratios must list at least one tau_c/T2 value"));
            }
            if c.family == Family::DisplacedLorentzian && c.delta_c.is_none() {
                return Err(invalid("delta_c is required for the displaced Lorentzian"));
            }
            for &r in &c.ratios {
                build(r)?;
            }
            c.ratios.iter().map(|&r| Some(r)).collect()
        }
    };
    let search = SearchConfig { t2_guess: c.search.t2_guess.or(Some(c.t2)), ..c.search.clone() };
    use rayon::prelude::*;
    let rows: Vec<Vec<String>> = ratios
        .par_iter()
        .map(|r| {
            let mut row = vec![r.map(|v| v.to_string()).unwrap_or_default()];
            match build(r.unwrap_or(0.0)).and_then(|m| optimal_times(&m, k, &search)) {
                Ok(ts) => {
                    row.extend(ts.iter().map(|t| (t / c.t2).to_string()));
                    row.push(String::new());
                }
                Err(e) => {
                    row.extend((0..k).map(|_| String::new()));
                    row.push(e.to_string());
                }
            }
            row
        })
        .collect();
    let mut header = vec!["ratio".to_string()];
    header.extend((1..=k).map(|i| format!("t{i}")));
    header.push("error".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let failed = rows.iter().filter(|r| !r.last().unwrap().is_empty()).count();
    let file = ctx.write("optimal_times.csv", &csv_table(&header, &rows)?)?;
    ctx.envelope(&c, &[file], json!({ "rows": rows.len(), "failed_rows": failed }))
}

fn cmd_bayes(ctx: &Context) -> Outcome {
    let c: BayesConfig = ctx.load()?;
    c.truth.validate()?;
    c.protocol.validate()?;
    if c.truth.family() != c.protocol.family {
        return Err(invalid("truth and protocol families differ"));
    }
    let (trace, error) = match run_protocol(&c.truth, &c.protocol) {
        Ok(t) => (t, None),
        Err(e) => {
            let e = *e;
            (e.trace, Some(e.error))
        }
    };
    let file = ctx.write("trace.csv", &trace.to_csv_string()?)?;
    let last = trace.steps.last();
    ctx.envelope(
        &c,
        &[file],
        json!({
            "steps": trace.steps.len(),
            "total_shots": trace.total_shots(),
            "resamples": trace.resamples,
            "selections": trace.selections,
            "final_mean": last.map(|s| s.mean.clone()),
            "final_cov": last.map(|s| s.cov.clone()),
            "error": error.as_ref().map(|e| e.to_string()),
        }),
    )?;
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_compare(ctx: &Context) -> Outcome {
    let c: CompareConfig = ctx.load()?;
    c.spec.validate()?;
    if let Against::Uniform { t_lo, t_hi, points } = c.against {
        dephasing::harness::uniform_schedule((t_lo, t_hi), points, c.spec.total_shots)?;
    }
    if let Some(grid) = &c.sweep {
        let family = c.spec.truth.family();
        if family == Family::White {
            return Err(invalid("sweeps need an OU or displaced-Lorentzian truth"));
        }
        if (family == Family::DisplacedLorentzian) == grid.delta_c.is_empty() {
            return Err(invalid("delta_c must be given exactly for displaced-Lorentzian sweeps"));
        }
        let deltas: Vec<Option<f64>> =
            if grid.delta_c.is_empty() { vec![None] } else { grid.delta_c.iter().map(|&d| Some(d)).collect() };
        let shots = if grid.total_shots.is_empty() { vec![c.spec.total_shots] } else { grid.total_shots.clone() };
        let (kind, uniform) = match c.against {
            Against::Bayesian => (SweepKind::Bayesian, ((0.02, 3.0), 20)),
            Against::Uniform { t_lo, t_hi, points } => (SweepKind::Uniform, ((t_lo, t_hi), points)),
        };
        let rows = ratio_sweep(&c.spec, kind, &grid.tau_c, &deltas, &shots, uniform);
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        let file = ctx.write("sweep.csv", &sweep_csv(&rows)?)?;
        return ctx.envelope(&c, &[file], json!({ "rows": rows.len(), "failed_rows": failed }));
    }
    let result = match c.against {
        Against::Bayesian => to_value(&precision_ratio(&c.spec)?)?,
        Against::Uniform { t_lo, t_hi, points } => {
            to_value(&uniform_vs_optimal_ratio(&c.spec, (t_lo, t_hi), points)?)?
        }
    };
    ctx.envelope(&c, &[], result)
}

fn cmd_nonmarkov(ctx: &Context) -> Outcome {
    let c: NonMarkovConfig = ctx.load()?;
    if c.kappa.is_empty() || c.delta_c.is_empty() {
        return Err(invalid("kappa and delta_c must be nonempty"));
    }
    for &k in &c.kappa {
        for &d in &c.delta_c {
            NoiseModel::displaced_lorentzian(c.g2n, k, d)?;
        }
    }
    if !(c.boundary_tol > 0.0) {
        return Err(invalid("boundary_tol must be > 0"));
    }
    let horizon = Horizon::from(c.horizon);
    let mut rows = Vec::new();
    for &k in &c.kappa {
        for &d in &c.delta_c {
            let m = NoiseModel::displaced_lorentzian(c.g2n, k, d)?;
            let (t_min, g_min) = min_rate(&m);
            let measures = n_cp(&m, horizon).and_then(|cp| Ok((cp, n_td(&m, horizon)?)));
            let (cp, td, err) = match measures {
                Ok((cp, td)) => (cp.to_string(), td.to_string(), String::new()),
                Err(e) => (String::new(), String::new(), e.to_string()),
            };
            rows.push(vec![
                k.to_string(),
                d.to_string(),
                (d / k).to_string(),
                cp,
                td,
                t_min.to_string(),
                g_min.to_string(),
                (g_min >= 0.0).to_string(),
                err,
            ]);
        }
    }
    let header = ["kappa", "delta_c", "delta_over_kappa", "n_cp", "n_td", "min_rate_t", "min_rate", "markovian", "error"];
    let mut boundary = Vec::new();
    for &k in &c.kappa {
        let b = markovian_boundary(k, c.boundary_tol * k)?;
        boundary.push(vec![k.to_string(), b.to_string(), (b / k).to_string()]);
    }
    let f1 = ctx.write("nonmarkov.csv", &csv_table(&header, &rows)?)?;
    let f2 = ctx.write("boundary.csv", &csv_table(&["kappa", "delta_boundary", "ratio"], &boundary)?)?;
    ctx.envelope(&c, &[f1, f2], json!({ "rows": rows.len() }))
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    let config_path = cli.config.ok_or_else(|| invalid("--config <path> is required"))?;
    let ctx = Context { command: cli.command, config_path, out: cli.out, seed: cli.seed };
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Fit => cmd_fit(&ctx),
        Command::OptimalTimes => cmd_optimal_times(&ctx),
        Command::Bayes => cmd_bayes(&ctx),
        Command::Compare => cmd_compare(&ctx),
        Command::Nonmarkov => cmd_nonmarkov(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
