//! `pemrisk`: train perception error models, estimate failure probabilities
//! and dump artefacts for plotting.

mod config;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pemrisk::ais::{
    adaptive_est, is_estimate_with, mc_estimate, proposal_curve, robustness_values, sample_rollouts,
    write_curve_csv, EstimationReport,
};
use pemrisk::nn::{Activation, OptimizerConfig};
use pemrisk::oracle::{exact_mu, HARD_HORIZON_CAP};
use pemrisk::pem::{
    cross_validate, cross_validate_with, make_baseline, read_detection_log, train_pem,
    write_detection_log, BaselineKind, CalibrationReport, MlpSpec, PlantedLogistic,
};
use pemrisk::sim::{ConstantPolicy, PemPolicy, Trajectory};
use pemrisk::stl::{parse_formula, robustness, Metric, Trace, DEFAULT_SHARPNESS};
use serde::Serialize;

use config::RunConfig;
use output::{write_atomic, write_json, write_jsonl};

const DEFAULT_OUT_DIR: &str = "pemrisk-out";

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<pemrisk::Error> for CliError {
    fn from(e: pemrisk::Error) -> Self {
        let code = match e {
            pemrisk::Error::HorizonTooLarge { .. } => 3,
            _ => 2,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::input(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "pemrisk", version, about = "Rare-event failure estimation with perception error models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a PEM on a detection log and report 5-fold calibration.
    TrainPem(TrainArgs),
    /// Cross-validate the PEM against the logistic and guess-mu baselines.
    Calibrate(CalibrateArgs),
    /// Estimate the failure probability of the configured scenario.
    Estimate(EstimateArgs),
    /// Exact failure probability by enumeration (short horizons only).
    Oracle(OracleArgs),
    /// Rank trace files from least to most safe.
    Rank(RankArgs),
    /// Write a detection log drawn from a planted logistic model.
    GenSyntheticLog(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Classical,
    Agm,
    Smooth,
}

#[derive(Args)]
struct MetricOpts {
    /// Robustness semantics (overrides the config file).
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Sharpness of the smooth semantics.
    #[arg(long, default_value_t = DEFAULT_SHARPNESS)]
    sharpness: f64,
}

impl MetricOpts {
    fn resolve(&self, fallback: Metric) -> Result<Metric, CliError> {
        let m = match self.metric {
            None => fallback,
            Some(MetricArg::Classical) => Metric::Classical,
            Some(MetricArg::Agm) => Metric::Agm,
            Some(MetricArg::Smooth) => Metric::Smooth { k: self.sharpness },
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Tanh,
}

#[derive(Args)]
struct TrainOpts {
    /// Hidden layer widths, comma separated; empty for logistic regression.
    #[arg(long, value_delimiter = ',', default_value = "20,20,20")]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "relu")]
    activation: ActivationArg,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOpts {
    fn spec(&self) -> MlpSpec {
        let activation = match self.activation {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        };
        MlpSpec { hidden: self.hidden.clone(), activation }
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::default().with_epochs(self.epochs).with_learning_rate(self.lr)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON-lines detection log.
    #[arg(long)]
    log: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// Calibration report path [default: <out>.calibration.json].
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    log: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Mc,
    NaiveFlat,
    Adaptive,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::NaiveFlat => "naive-flat",
            Method::Adaptive => "adaptive",
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "adaptive")]
    method: Method,
    #[command(flatten)]
    metric: MetricOpts,
    /// Seed to run; repeat for several (overrides the config file).
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long, env = "PEMRISK_OUT_DIR")]
    out: Option<PathBuf>,
    /// Also enumerate the exact failure probability when the horizon allows.
    #[arg(long)]
    oracle: bool,
    /// Dump this many least-safe final rollouts per seed as trace CSVs.
    #[arg(long, default_value_t = 0)]
    dump_traces: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricOpts,
    /// Result path [default: <output dir>/oracle.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    /// Directory of trace CSV files.
    #[arg(long)]
    traces: PathBuf,
    /// Prefix-notation formula, e.g. `(always 0 99 (geq dist_m 2.0))`.
    #[arg(long)]
    formula: String,
    #[command(flatten)]
    metric: MetricOpts,
    /// Ranking CSV path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also persist the planted generator as a model file.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainPem(a) => cmd_train_pem(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Rank(a) => cmd_rank(a),
        Command::GenSyntheticLog(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn read_log(path: &Path) -> Result<Vec<pemrisk::pem::DetectionRecord>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    read_detection_log(std::io::BufReader::new(f))
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct TrainReport {
    hidden: Vec<usize>,
    epochs: usize,
    learning_rate: f64,
    n_records: usize,
    train_bce: f64,
    calibration: CalibrationReport,
}

fn cmd_train_pem(a: TrainArgs) -> Result<(), CliError> {
    let data = read_log(&a.log)?;
    let spec = a.train.spec();
    let opt = a.train.optimizer();
    let model = train_pem(&data, &spec, &opt, a.train.seed)?;
    let preds = data.iter().map(|r| model.eval(r.salient.as_slice())).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = data.iter().map(|r| r.detected).collect();
    let train_bce = pemrisk::pem::bce(&preds, &labels)?;
    write_atomic(&a.out, |w| Ok(model.save(w)?))?;
    let calibration = cross_validate(&data, &spec, &opt, a.train.folds, a.train.seed)?;
    eprintln!(
        "trained on {} records: train BCE {train_bce:.4}, held-out BCE {:.4}, ROC-AUC {:.4}",
        data.len(),
        calibration.bce,
        calibration.roc_auc
    );
    let report = TrainReport {
        hidden: spec.hidden,
        epochs: opt.epochs,
        learning_rate: opt.learning_rate,
        n_records: data.len(),
        train_bce,
        calibration,
    };
    let path = a.report.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".calibration.json");
        PathBuf::from(p)
    });
    write_json(&path, &report)
}

#[derive(Serialize)]
struct NamedCalibration {
    name: &'static str,
    #[serde(flatten)]
    report: CalibrationReport,
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let data = read_log(&a.log)?;
    let spec = a.train.spec();
    let opt = a.train.optimizer();
    let (folds, seed) = (a.train.folds, a.train.seed);
    let models = vec![
        NamedCalibration { name: "pem", report: cross_validate(&data, &spec, &opt, folds, seed)? },
        NamedCalibration {
            name: "logistic",
            report: cross_validate_with(&data, folds, seed, |d, s| {
                make_baseline(BaselineKind::Logistic, d, &opt, s)
            })?,
        },
        NamedCalibration {
            name: "guess-mu",
            report: cross_validate_with(&data, folds, seed, |d, s| {
                make_baseline(BaselineKind::GuessMu, d, &opt, s)
            })?,
        },
    ];
    for m in &models {
        eprintln!("{:<9} BCE {:.4}  ROC-AUC {:.4}", m.name, m.report.bce, m.report.roc_auc);
    }
    let doc = serde_json::json!({ "models": models });
    match a.out {
        Some(p) => write_json(&p, &doc),
        None => {
            println!("{}", serde_json::to_string_pretty(&doc).map_err(pemrisk::Error::from)?);
            Ok(())
        }
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Serialize)]
struct Aggregate<'a> {
    method: &'a str,
    metric: &'a str,
    seeds: Vec<u64>,
    mean_mu_hat: f64,
    /// Standard error of the mean across seeds.
    std_error: f64,
    mean_failure_fraction: f64,
    mean_fail_nll: Option<f64>,
    any_stalled: bool,
    oracle_mu: Option<f64>,
    reports: &'a [EstimationReport],
}

fn cmd_estimate(a: EstimateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let metric = a.metric.resolve(cfg.metric)?;
    let mut cem = cfg.cem.clone();
    cem.metric = metric;
    let seeds = if !a.seed.is_empty() {
        a.seed.clone()
    } else if !cfg.seeds.is_empty() {
        cfg.seeds.clone()
    } else {
        vec![0]
    };
    let dir = out_dir(a.out.clone(), &cfg);
    let pem = cfg.build_pem()?;
    let target = PemPolicy(&pem);
    let scenario = &cfg.scenario;
    let formula = scenario.safety_formula();
    let gamma = cem.gamma;
    let method = a.method.name();

    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let start = Instant::now();
        let (mut report, batch) = match a.method {
            Method::Mc => {
                let trajs = sample_rollouts(&target, &target, scenario, seed, 0, cfg.estimate.mc_samples)?;
                (mc_estimate(&trajs, &formula, &metric, gamma)?, trajs)
            }
            Method::NaiveFlat => {
                let flat = ConstantPolicy(cfg.estimate.naive_p);
                let trajs = sample_rollouts(&flat, &target, scenario, seed, 0, cfg.estimate.naive_samples)?;
                let rob = robustness_values(&trajs, &formula, &metric)?;
                let mut r = is_estimate_with(&trajs, &rob, gamma, &metric)?;
                r.method = method.into();
                (r, trajs)
            }
            Method::Adaptive => {
                let out = adaptive_est(&target, &formula, scenario, &cem, seed)?;
                write_jsonl(&dir.join(format!("diagnostics_seed{seed}.jsonl")), &out.stages)?;
                let hi = scenario.initial_gap.ceil();
                let n = (hi / cfg.estimate.curve_step).round() as usize;
                let grid: Vec<f64> = (0..=n).map(|i| i as f64 * cfg.estimate.curve_step).collect();
                let curve = proposal_curve(&out.proposal, &pem, &grid)?;
                write_atomic(&dir.join(format!("proposal_curve_seed{seed}.csv")), |w| {
                    Ok(write_curve_csv(&curve, w)?)
                })?;
                (out.report, out.final_batch)
            }
        };
        report.wall_clock_s = start.elapsed().as_secs_f64();
        eprintln!(
            "seed {seed}: mu_hat {:.4e}  failures {}/{}  NLL {}  {:.2}s{}",
            report.mu_hat,
            report.n_fail,
            report.n_total,
            report.mean_fail_nll.map_or("-".into(), |v| format!("{v:.2}")),
            report.wall_clock_s,
            if report.stalled { "  (stalled)" } else { "" }
        );
        write_json(&dir.join(format!("report_{method}_seed{seed}.json")), &report)?;
        if a.dump_traces > 0 {
            dump_least_safe(&dir.join(format!("traces_{method}_seed{seed}")), &batch, &formula, &metric, a.dump_traces)?;
        }
        reports.push(report);
    }

    let oracle_mu = if a.oracle && scenario.horizon <= HARD_HORIZON_CAP {
        let r = exact_mu(&target, scenario, &formula, &metric, gamma)?;
        write_json(&dir.join("oracle.json"), &r)?;
        eprintln!("oracle mu {:.4e}", r.mu);
        Some(r.mu)
    } else {
        if a.oracle {
            eprintln!("horizon {} exceeds the enumeration cap; oracle skipped", scenario.horizon);
        }
        None
    };

    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.mu_hat).sum::<f64>() / n;
    let se = if reports.len() > 1 {
        (reports.iter().map(|r| (r.mu_hat - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        reports[0].std_error
    };
    let nlls: Vec<f64> = reports.iter().filter_map(|r| r.mean_fail_nll).collect();
    let agg = Aggregate {
        method,
        metric: metric.name(),
        seeds,
        mean_mu_hat: mean,
        std_error: se,
        mean_failure_fraction: reports.iter().map(|r| r.failure_fraction).sum::<f64>() / n,
        mean_fail_nll: (!nlls.is_empty()).then(|| nlls.iter().sum::<f64>() / nlls.len() as f64),
        any_stalled: reports.iter().any(|r| r.stalled),
        oracle_mu,
        reports: &reports,
    };
    write_json(&dir.join(format!("aggregate_{method}.json")), &agg)?;
    eprintln!("mean mu_hat {mean:.4e} (+- {se:.2e}) over {} seed(s); outputs in {}", reports.len(), dir.display());
    Ok(())
}

fn dump_least_safe(
    dir: &Path,
    batch: &[Trajectory],
    formula: &pemrisk::stl::Formula,
    metric: &Metric,
    n: usize,
) -> Result<(), CliError> {
    let traces: Vec<Trace> = batch.iter().map(Trajectory::to_trace).collect();
    let ranked = pemrisk::stl::rank_trajectories(&traces, formula, metric)?;
    for &(i, _) in ranked.iter().take(n) {
        write_atomic(&dir.join(format!("run_{i:04}.csv")), |w| Ok(batch[i].write_csv(w)?))?;
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let metric = a.metric.resolve(cfg.metric)?;
    let pem = cfg.build_pem()?;
    let start = Instant::now();
    let r = exact_mu(&PemPolicy(&pem), &cfg.scenario, &cfg.scenario.safety_formula(), &metric, cfg.cem.gamma)?;
    let path = a.out.unwrap_or_else(|| out_dir(None, &cfg).join("oracle.json"));
    write_json(&path, &r)?;
    eprintln!(
        "mu {:.6e}  failing sequences {}/{}  {:.2}s",
        r.mu,
        r.n_fail_sequences,
        r.n_total,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<(), CliError> {
    let formula = parse_formula(&a.formula)?;
    let metric = a.metric.resolve(Metric::Classical)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.traces)
        .map_err(|e| CliError::input(format!("{}: {e}", a.traces.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows: Vec<(String, f64)> = Vec::new();
    for path in &files {
        let scored = std::fs::File::open(path)
            .map_err(pemrisk::Error::from)
            .and_then(Trace::from_csv)
            .and_then(|t| robustness(&t, &formula, &metric));
        match scored {
            Ok(r) => rows.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), r)),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    rows.sort_by(|x, y| x.1.total_cmp(&y.1));
    let emit = |w: &mut dyn std::io::Write| -> Result<(), CliError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["file", "robustness"])?;
        for (f, r) in &rows {
            csv.write_record([f.as_str(), &r.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    };
    match a.out {
        Some(p) => write_atomic(&p, emit),
        None => emit(&mut std::io::stdout().lock()),
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let planted = PlantedLogistic::default();
    let data = planted.generate(a.n, a.seed)?;
    write_atomic(&a.out, |w| Ok(write_detection_log(&data, w)?))?;
    if let Some(p) = a.model_out {
        let model = planted.model();
        write_atomic(&p, |w| Ok(model.save(w)?))?;
    }
    let rate = data.iter().filter(|r| r.detected).count() as f64 / data.len().max(1) as f64;
    eprintln!("wrote {} records (detection rate {rate:.3}) to {}", data.len(), a.out.display());
    Ok(())
}
