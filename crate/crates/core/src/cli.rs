//! Command-line front end: `fit`, `simulate`, `bench` and `eval`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 unparsable input or bad
//! configuration, 3 zero estimated variance without `--sigma`, 4 oracle
//! disagreement.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{cpop, CpopOptions, TraceRow};
use crate::error::Error;
use crate::evalkit::{self, Scenario};
use crate::oracle;
use crate::segcost::{default_beta, LengthPenalty, PenaltyConfig};

#[derive(Debug, Parser)]
#[command(name = "cpop", version, about = "Exact detection of changes in slope")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a continuous piecewise-linear mean to a series.
    Fit(FitArgs),
    /// Simulate a series and its ground truth.
    Simulate(SimulateArgs),
    /// Time the solver over a grid of simulated scenarios.
    Bench(BenchArgs),
    /// Score a fit against the ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Newline-delimited reals or a single-column CSV with optional header.
    pub input: PathBuf,
    /// Penalty per segment [default: 2 ln n].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Add a segment-length penalty gamma * ln(length).
    #[arg(long)]
    pub gamma_log: Option<f64>,
    /// Noise standard deviation; overrides --estimate-sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Estimate the noise level from second differences (the default).
    #[arg(long)]
    pub estimate_sigma: bool,
    #[arg(long)]
    pub no_func_prune: bool,
    #[arg(long)]
    pub no_ineq_prune: bool,
    /// Cross-check against exhaustive search (at most 16 observations).
    #[arg(long)]
    pub oracle: bool,
    /// Include per-step candidate-set sizes and timings.
    #[arg(long)]
    pub trace: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub output: OutputFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML scenario file; inline flags are used when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub value_sd: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Comma-separated knot times for an explicit-knots scenario.
    #[arg(long, value_delimiter = ',')]
    pub knot_times: Option<Vec<usize>>,
    /// Comma-separated knot values matching --knot-times.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub knot_values: Option<Vec<f64>>,
    /// Data file, one value per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth sidecar [default: <out>.truth.json].
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML grid of cells.
    pub config: PathBuf,
    /// Summary CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step mean and sd of candidate-set sizes for each cell.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Truth JSON written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Fit JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Detection distance [default: a fifth of the shortest true segment].
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure carrying its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: io::Error) -> Self {
        Self {
            code: 1,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::ZeroVariance => 3,
            _ => 2,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

/// Entry point for the binary; returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(cli.command, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Fit(args) => cmd_fit(&args, stdout),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Bench(args) => cmd_bench(&args, stdout),
        Command::Eval(args) => cmd_eval(&args, stdout),
    }
}

/// Rounds to 12 significant digits; non-finite values pass through.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn sig12_all(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(sig12).collect()
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses newline-delimited reals; a single non-numeric first line is a header.
pub fn parse_series(text: &str) -> Result<Vec<f64>, CliError> {
    let mut values = Vec::new();
    let mut seen_line = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim().trim_matches('"').trim();
        if line.is_empty() {
            continue;
        }
        if line.contains(',') {
            return Err(CliError::usage(format!(
                "line {}: expected a single column, got {raw:?}",
                lineno + 1
            )));
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => {
                return Err(CliError::usage(format!(
                    "line {}: non-finite value {raw:?}",
                    lineno + 1
                )))
            }
            Err(_) if !seen_line => {}
            Err(_) => {
                return Err(CliError::usage(format!(
                    "line {}: cannot parse {raw:?} as a number",
                    lineno + 1
                )))
            }
        }
        seen_line = true;
    }
    if values.is_empty() {
        return Err(CliError::usage("input contains no data"));
    }
    Ok(values)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub m: usize,
    pub taus: Vec<usize>,
    pub phis: Vec<f64>,
    pub cost: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_log: Option<f64>,
    pub sigma: f64,
    pub sigma_source: String,
    pub functional_pruning: bool,
    pub inequality_pruning: bool,
    pub fitted: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleCheck {
    pub cost: f64,
    pub taus: Vec<usize>,
    pub agrees: bool,
}

/// Runs `fit` without touching the filesystem. The error, if any, comes
/// with the report so an oracle disagreement can still be written out.
pub fn fit_series(y: &[f64], args: &FitArgs) -> Result<FitReport, CliError> {
    let n = y.len();
    let (sigma, sigma_source) = match args.sigma {
        Some(s) if s > 0.0 && s.is_finite() => (s, "given"),
        Some(s) => {
            return Err(CliError::usage(format!(
                "--sigma must be positive, got {s}"
            )))
        }
        None => (evalkit::estimate_sigma(y)?, "estimated"),
    };
    let beta = args.beta.unwrap_or_else(|| default_beta(n));
    let h = match args.gamma_log {
        Some(gamma) => LengthPenalty::GammaLog { gamma },
        None => LengthPenalty::Zero,
    };
    let cfg = PenaltyConfig::new(beta, h, sigma * sigma)?;
    let opts = CpopOptions {
        functional_pruning: !args.no_func_prune,
        inequality_pruning: !args.no_ineq_prune,
        trace: args.trace,
        candidate_limit: None,
    };
    if args.oracle && n > oracle::MAX_EXHAUSTIVE_N {
        return Err(CliError::usage(format!(
            "--oracle supports at most {} observations, got {n}",
            oracle::MAX_EXHAUSTIVE_N
        )));
    }
    let seg = cpop(y, &cfg, opts)?;
    let oracle = if args.oracle {
        let truth = oracle::exhaustive(y, &cfg)?;
        let agrees = truth.taus == seg.taus
            && (truth.cost - seg.cost).abs() <= 1e-8 * truth.cost.abs().max(1.0);
        Some(OracleCheck {
            cost: sig12(truth.cost),
            taus: truth.taus,
            agrees,
        })
    } else {
        None
    };
    Ok(FitReport {
        n,
        m: seg.m(),
        phis: sig12_all(&seg.phis),
        cost: sig12(seg.cost),
        beta: sig12(beta),
        gamma_log: args.gamma_log.map(sig12),
        sigma: sig12(sigma),
        sigma_source: sigma_source.into(),
        functional_pruning: opts.functional_pruning,
        inequality_pruning: opts.inequality_pruning,
        fitted: sig12_all(&seg.fitted()),
        trace: args.trace.then(|| {
            seg.diagnostics
                .trace
                .iter()
                .map(|r| TraceRow {
                    elapsed_s: sig12(r.elapsed_s),
                    ..*r
                })
                .collect()
        }),
        taus: seg.taus,
        oracle,
    })
}

fn fit_csv(y: &[f64], report: &FitReport) -> String {
    let mut s = String::from("t,y,fitted,changepoint\n");
    for (i, (v, f)) in y.iter().zip(&report.fitted).enumerate() {
        let t = i + 1;
        let cp = u8::from(report.taus.binary_search(&t).is_ok());
        let _ = writeln!(s, "{t},{v},{f},{cp}");
    }
    s
}

fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let y = parse_series(&read_text(&args.input)?)?;
    let report = fit_series(&y, args)?;
    let text = match args.output {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Csv => fit_csv(&y, &report),
    };
    emit(args.out.as_deref(), stdout, &text)?;
    match &report.oracle {
        Some(check) if !check.agrees => Err(CliError {
            code: 4,
            message: format!(
                "oracle disagrees: cost {} taus {:?} vs cost {} taus {:?}",
                check.cost, check.taus, report.cost, report.taus
            ),
        }),
        _ => Ok(()),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn scenario_from_args(args: &SimulateArgs) -> Result<Scenario, CliError> {
    let mut sc = if let Some(path) = &args.scenario {
        toml::from_str::<Scenario>(&read_text(path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
    } else if let Some(times) = &args.knot_times {
        let values = args
            .knot_values
            .clone()
            .ok_or_else(|| CliError::usage("--knot-times needs --knot-values"))?;
        Scenario::ExplicitKnots {
            knot_times: times.clone(),
            knot_values: values,
            noise_sd: args.noise_sd.unwrap_or(1.0),
            seed: 0,
        }
    } else {
        let (n, m) = match (args.n, args.m) {
            (Some(n), Some(m)) => (n, m),
            _ => {
                return Err(CliError::usage(
                    "give --scenario, --knot-times/--knot-values, or --n and --m",
                ))
            }
        };
        Scenario::RandomEquispaced {
            n,
            m,
            value_sd: args.value_sd.unwrap_or(2.0),
            noise_sd: args.noise_sd.unwrap_or(1.0),
            seed: 0,
        }
    };
    if let Some(seed) = args.seed {
        sc = sc.with_seed(seed);
    }
    sc.validate()?;
    Ok(sc)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub n: usize,
    pub taus: Vec<usize>,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

/// Data file contents (one value per line) and truth JSON for a scenario.
pub fn simulate_files(sc: &Scenario) -> Result<(String, String), CliError> {
    let sim = evalkit::simulate(sc)?;
    let mut data = String::with_capacity(sim.y.len() * 20);
    for v in &sim.y {
        let _ = writeln!(data, "{v}");
    }
    let truth = TruthFile {
        n: sim.y.len(),
        taus: sim.taus,
        mean: sig12_all(&sim.mean),
        scenario: Some(sc.clone()),
    };
    Ok((data, to_json(&truth)))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let sc = scenario_from_args(args)?;
    let (data, truth) = simulate_files(&sc)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let mut name = args.out.as_os_str().to_owned();
        name.push(".truth.json");
        PathBuf::from(name)
    });
    fs::write(&args.out, data).map_err(|e| CliError::io(&args.out, e))?;
    fs::write(&truth_path, truth).map_err(|e| CliError::io(&truth_path, e))
}

fn default_bench_value_sd() -> f64 {
    2.0
}

fn default_bench_noise_sd() -> f64 {
    1.0
}

/// Grid of random equispaced scenarios to time.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    /// Penalty per segment [default: 2 ln n].
    pub beta: Option<f64>,
    #[serde(default = "default_bench_value_sd")]
    pub value_sd: f64,
    #[serde(default = "default_bench_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCell {
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
}

#[derive(Debug, Clone)]
struct ReplicateRun {
    seconds: f64,
    detected: usize,
    trace: Vec<TraceRow>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

fn run_replicate(cfg: &BenchConfig, cell: BenchCell, r: usize) -> Result<ReplicateRun, Error> {
    let sc = Scenario::RandomEquispaced {
        n: cell.n,
        m: cell.m,
        value_sd: cfg.value_sd,
        noise_sd: cfg.noise_sd,
        seed: cfg.seed.wrapping_add(r as u64),
    };
    let sim = evalkit::simulate(&sc)?;
    let beta = cfg.beta.unwrap_or_else(|| default_beta(cell.n));
    let sigma2 = if cfg.noise_sd > 0.0 {
        cfg.noise_sd * cfg.noise_sd
    } else {
        1.0
    };
    let pen = PenaltyConfig::new(beta, LengthPenalty::Zero, sigma2)?;
    let start = Instant::now();
    let seg = cpop(&sim.y, &pen, CpopOptions::default().traced())?;
    Ok(ReplicateRun {
        seconds: start.elapsed().as_secs_f64(),
        detected: seg.m(),
        trace: seg.diagnostics.trace,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("CPOP_THREADS") {
        let threads: usize = raw.parse().map_err(|_| {
            CliError::usage(format!("CPOP_THREADS must be an integer, got {raw:?}"))
        })?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

/// Summary CSV and per-step curve CSV for a bench grid.
pub fn bench_tables(cfg: &BenchConfig) -> Result<(String, String), CliError> {
    for cell in &cfg.cells {
        Scenario::random(cell.n, cell.m, 0).validate()?;
    }
    let jobs: Vec<(usize, usize)> = cfg
        .cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| (0..cell.replicates).map(move |r| (c, r)))
        .collect();
    let pool = thread_pool()?;
    let runs: Vec<Result<ReplicateRun, Error>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| run_replicate(cfg, cfg.cells[c], r))
            .collect()
    });

    let mut summary = String::from(
        "n,m,replicates,mean_time_s,sd_time_s,mean_optimal,mean_candidates,mean_final_candidates,mean_detected_m\n",
    );
    let mut curves = String::from("n,m,t,mean_optimal,sd_optimal,mean_candidates,sd_candidates\n");
    let mut runs = runs.into_iter();
    for cell in &cfg.cells {
        let cell_runs: Vec<ReplicateRun> = runs
            .by_ref()
            .take(cell.replicates)
            .collect::<Result<_, _>>()?;
        let times: Vec<f64> = cell_runs.iter().map(|r| r.seconds).collect();
        let (mean_t, sd_t) = mean_sd(&times);
        let per_run = |f: &dyn Fn(&TraceRow) -> f64| -> Vec<f64> {
            cell_runs
                .iter()
                .map(|r| r.trace.iter().map(f).sum::<f64>() / r.trace.len() as f64)
                .collect()
        };
        let (mean_opt, _) = mean_sd(&per_run(&|row| row.optimal as f64));
        let (mean_cand, _) = mean_sd(&per_run(&|row| row.candidates as f64));
        let finals: Vec<f64> = cell_runs
            .iter()
            .filter_map(|r| r.trace.last().map(|row| row.candidates as f64))
            .collect();
        let (mean_final, _) = mean_sd(&finals);
        let detected: Vec<f64> = cell_runs.iter().map(|r| r.detected as f64).collect();
        let (mean_detected, _) = mean_sd(&detected);
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            cell.n,
            cell.m,
            cell.replicates,
            sig12(mean_t),
            sig12(sd_t),
            sig12(mean_opt),
            sig12(mean_cand),
            sig12(mean_final),
            sig12(mean_detected)
        );
        for t in 0..cell.n {
            let opt: Vec<f64> = cell_runs
                .iter()
                .map(|r| r.trace[t].optimal as f64)
                .collect();
            let cand: Vec<f64> = cell_runs
                .iter()
                .map(|r| r.trace[t].candidates as f64)
                .collect();
            let (mo, so) = mean_sd(&opt);
            let (mc, sc) = mean_sd(&cand);
            let _ = writeln!(
                curves,
                "{},{},{},{},{},{},{}",
                cell.n,
                cell.m,
                t + 1,
                sig12(mo),
                sig12(so),
                sig12(mc),
                sig12(sc)
            );
        }
    }
    Ok((summary, curves))
}

fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg: BenchConfig = toml::from_str(&read_text(&args.config)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.config.display())))?;
    let (summary, curves) = bench_tables(&cfg)?;
    emit(args.out.as_deref(), stdout, &summary)?;
    if let Some(path) = &args.curves {
        fs::write(path, curves).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct FitFile {
    taus: Vec<usize>,
    fitted: Vec<f64>,
}

/// Metrics JSON comparing a fit report with a truth file.
pub fn eval_report(
    truth_text: &str,
    fit_text: &str,
    threshold: Option<usize>,
) -> Result<Value, CliError> {
    let truth: TruthFile = serde_json::from_str(truth_text)
        .map_err(|e| CliError::usage(format!("truth file: {e}")))?;
    let fit: FitFile =
        serde_json::from_str(fit_text).map_err(|e| CliError::usage(format!("fit file: {e}")))?;
    if truth.mean.len() != truth.n || fit.fitted.len() != truth.n {
        return Err(CliError::usage(format!(
            "length mismatch: truth n = {}, truth mean {}, fitted {}",
            truth.n,
            truth.mean.len(),
            fit.fitted.len()
        )));
    }
    let n_s = evalkit::longest_segment(&truth.taus, truth.n);
    let threshold = threshold.unwrap_or(evalkit::shortest_segment(&truth.taus, truth.n) / 5);
    let mse = evalkit::mse(&fit.fitted, &truth.mean)?;
    let d_h = evalkit::hausdorff_scaled(&truth.taus, &fit.taus, n_s);
    let (tp, fp) = evalkit::tp_fp(&truth.taus, &fit.taus, threshold);
    let d_h_value = if d_h.is_finite() {
        json!(sig12(d_h))
    } else {
        json!("inf")
    };
    Ok(json!({
        "mse": sig12(mse),
        "d_h": d_h_value,
        "n_s": n_s,
        "threshold": threshold,
        "tp_proportion": sig12(tp),
        "fp_proportion": sig12(fp),
        "true_m": truth.taus.len(),
        "est_m": fit.taus.len(),
    }))
}

fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let report = eval_report(
        &read_text(&args.truth)?,
        &read_text(&args.fit)?,
        args.threshold,
    )?;
    emit(args.out.as_deref(), stdout, &to_json(&report))
}
