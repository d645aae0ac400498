//! Command-line front end: `run`, `sweep`, `gen-data` and `analyze`.
//!
//! Exit status is 0 on success, 2 when the configuration or arguments are
//! invalid, and 1 for failures while running.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    lemma2_impure_terms, lemma2_pure_threshold, metrics_rows, read_metrics_csv, write_metrics_csv, BoundParams,
    MetricsRow, RunSummary, METRICS_HEADER,
};
use crate::config::{set_json_path, ExperimentConfig};
use crate::data::{gen_synthetic, SyntheticParams};
use crate::error::{Error, Result};
use crate::idx::{write_idx, Precision};
use crate::simulator::{RunResult, Simulation};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MOEFL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "moefl", version, about = "Federated learning with mixture-of-experts aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config path, e.g. `attackers.count`.
        #[arg(long)]
        key: String,
        /// Comma-separated JSON values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset as IDX files.
    GenData {
        #[arg(long, default_value_t = 10)]
        class_count: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0.15)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction written to the test files; 0 writes only training files.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, value_enum, default_value_t = PrecisionArg::U8)]
        precision: PrecisionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a report for a finished run directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// JSON file of bound constants to evaluate.
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    U8,
    F64,
}

/// Artifact index written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub snapshots: PathBuf,
    pub final_model: PathBuf,
    pub stop_reason: String,
    pub rounds: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const FINAL_MODEL_FILE: &str = "final_model.bin";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Error with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn usage(error: Error) -> Self {
        Self { code: 2, error }
    }

    fn runtime(error: Error) -> Self {
        let code = if matches!(error, Error::Config(_)) { 2 } else { 1 };
        Self { code, error }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

/// Builds the global thread pool, honouring `MOEFL_THREADS`.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
        }
        // a pool built earlier in the process wins; nothing to do then
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_config_value(path: &Path) -> std::result::Result<serde_json::Value, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(Error::Config(format!("cannot read {}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(Error::Config(e.to_string())))
}

fn parse_config(value: &serde_json::Value) -> std::result::Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_json(&value.to_string()).map_err(Failure::usage)
}

/// Runs `cfg` and writes every artifact into `out`.
pub fn execute_run(cfg: &ExperimentConfig, out: &Path) -> std::result::Result<RunResult, Failure> {
    let sim = Simulation::new(cfg.clone()).map_err(Failure::runtime)?;
    let roles = sim.roles().to_vec();
    let last_layer = sim.spec().last_layer_range();
    let result = sim.run_to_end().map_err(Failure::runtime)?;
    write_artifacts(cfg, &result, &roles, last_layer, out).map_err(Failure::runtime)?;
    Ok(result)
}

fn write_artifacts(
    cfg: &ExperimentConfig,
    result: &RunResult,
    roles: &[crate::attack::Role],
    last_layer: std::ops::Range<usize>,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out.join(SNAPSHOT_DIR))?;
    let echo = cfg.to_json();
    fs::write(out.join(CONFIG_FILE), &echo)?;
    write_metrics_csv(&metrics_rows(result), fs::File::create(out.join(METRICS_FILE))?)?;
    let config_value: serde_json::Value = serde_json::from_str(&echo)?;
    let summary = RunSummary::build(config_value, result, roles, last_layer, cfg.bounds.as_ref())?;
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    for snap in &result.snapshots {
        let dir = out.join(SNAPSHOT_DIR).join(format!("round_{:05}", snap.round));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("global.bin"), snap.global.to_bytes())?;
        fs::write(dir.join("server.bin"), snap.server.to_bytes())?;
        for (c, w) in snap.cohort.iter().zip(&snap.client_models) {
            fs::write(dir.join(format!("client_{c:04}.bin")), w.to_bytes())?;
        }
    }
    fs::write(out.join(FINAL_MODEL_FILE), result.final_model.to_bytes())?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.run.master_seed,
        config: out.join(CONFIG_FILE),
        metrics: out.join(METRICS_FILE),
        summary: out.join(SUMMARY_FILE),
        snapshots: out.join(SNAPSHOT_DIR),
        final_model: out.join(FINAL_MODEL_FILE),
        stop_reason: result.stop_reason.as_str().to_string(),
        rounds: result.records.len(),
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn cmd_run(config: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let value = load_config_value(config)?;
    let cfg = parse_config(&value)?;
    let result = execute_run(&cfg, out)?;
    println!(
        "{} rounds ({}), final accuracy {:.4}",
        result.records.len(),
        result.stop_reason.as_str(),
        result.records.last().map_or(0.0, |r| r.accuracy)
    );
    Ok(())
}

fn parse_sweep_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()))
}

/// Directory name of one sweep value.
pub fn sweep_dir_name(key: &str, raw: &str) -> String {
    let clean: String = raw
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{key}={clean}")
}

fn comparison_record(key: &str, value: &str, m: &MetricsRow) -> [String; 8] {
    [
        key.to_string(),
        value.to_string(),
        m.round.to_string(),
        m.accuracy.to_string(),
        m.weighted_loss.to_string(),
        m.delta_w_norm.to_string(),
        m.attacker_rho_mass.to_string(),
        m.max_attacker_rho.to_string(),
    ]
}

/// One sub-run per value, each in its own directory, plus a comparison table
/// with one row per (value, round). Sub-runs keep the base master seed so that
/// they differ only in the swept key.
pub fn cmd_sweep(config: &Path, key: &str, values: &[String], out: &Path) -> std::result::Result<(), Failure> {
    if values.is_empty() {
        return Err(Failure::usage(Error::Config("sweep needs at least one value".into())));
    }
    let base = load_config_value(config)?;
    let mut configs = Vec::with_capacity(values.len());
    for raw in values {
        let mut doc = base.clone();
        set_json_path(&mut doc, key, parse_sweep_value(raw)).map_err(Failure::usage)?;
        configs.push(parse_config(&doc)?);
    }
    fs::create_dir_all(out).map_err(|e| Failure::runtime(e.into()))?;
    let mut writer = csv::Writer::from_path(out.join(COMPARISON_FILE)).map_err(|e| Failure::runtime(e.into()))?;
    writer
        .write_record(["key", "value"].iter().chain(METRICS_HEADER.iter()))
        .map_err(|e| Failure::runtime(e.into()))?;
    let mut failures = Vec::new();
    for (raw, cfg) in values.iter().zip(&configs) {
        let dir = out.join(sweep_dir_name(key, raw));
        match execute_run(cfg, &dir) {
            Ok(result) => {
                for m in metrics_rows(&result) {
                    writer
                        .write_record(comparison_record(key, raw.trim(), &m))
                        .map_err(|e| Failure::runtime(e.into()))?;
                }
                println!("{key}={}: {} rounds, final accuracy {:.4}", raw.trim(), result.records.len(), result.records.last().map_or(0.0, |r| r.accuracy));
            }
            Err(f) => {
                eprintln!("{key}={}: {f}", raw.trim());
                failures.push(raw.trim().to_string());
            }
        }
    }
    writer.flush().map_err(|e| Failure::runtime(e.into()))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            error: Error::Input(format!("sub-runs failed for {key} = {}", failures.join(", "))),
        })
    }
}

pub const TRAIN_IMAGES: &str = "train-images.idx";
pub const TRAIN_LABELS: &str = "train-labels.idx";
pub const TEST_IMAGES: &str = "test-images.idx";
pub const TEST_LABELS: &str = "test-labels.idx";

#[allow(clippy::too_many_arguments)]
pub fn cmd_gen_data(
    class_count: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    test_fraction: f64,
    precision: Precision,
    out: &Path,
) -> std::result::Result<(), Failure> {
    if class_count == 0 || dim == 0 || per_class == 0 {
        return Err(Failure::usage(Error::Config("class_count, dim and per_class must be at least 1".into())));
    }
    if class_count > 256 {
        return Err(Failure::usage(Error::Config("IDX labels hold at most 256 classes".into())));
    }
    if !(spread > 0.0) {
        return Err(Failure::usage(Error::Config("spread must be positive".into())));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Failure::usage(Error::Config("test_fraction must lie in [0, 1)".into())));
    }
    let data = gen_synthetic(SyntheticParams { class_count, dim, per_class, spread, seed }).map_err(Failure::usage)?;
    fs::create_dir_all(out).map_err(|e| Failure::runtime(e.into()))?;
    let write = |d: &crate::data::Dataset, img: &str, lab: &str| {
        write_idx(d, out.join(img), out.join(lab), precision).map_err(Failure::runtime)
    };
    if test_fraction == 0.0 {
        write(&data, TRAIN_IMAGES, TRAIN_LABELS)?;
        println!("wrote {} samples to {}", data.len(), out.display());
    } else {
        let (train, test) = data.train_test_split(test_fraction, seed).map_err(Failure::usage)?;
        write(&train, TRAIN_IMAGES, TRAIN_LABELS)?;
        write(&test, TEST_IMAGES, TEST_LABELS)?;
        println!("wrote {} train and {} test samples to {}", train.len(), test.len(), out.display());
    }
    Ok(())
}

/// Report text for a run directory.
pub fn analyze_report(run: &Path, bounds: Option<&BoundParams>) -> Result<String> {
    use std::fmt::Write as _;
    let rows = read_metrics_csv(fs::File::open(run.join(METRICS_FILE))?)?;
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(run.join(SUMMARY_FILE))?)?;
    let mut s = String::new();
    let _ = writeln!(s, "run: {}", run.display());
    let _ = writeln!(s, "rounds: {} ({})", summary.rounds, summary.stop_reason);
    let _ = writeln!(s, "final accuracy: {:.4}", summary.final_accuracy);
    let _ = writeln!(s, "last-20 mean accuracy: {:.4}", summary.tail20_accuracy);
    if let Some(best) = rows.iter().max_by(|a, b| a.accuracy.total_cmp(&b.accuracy)) {
        let _ = writeln!(s, "best accuracy: {:.4} at round {}", best.accuracy, best.round);
    }
    let _ = writeln!(s, "attackers: {:?}", summary.metadata.attacker_ids);
    let _ = writeln!(
        s,
        "attacker weight: cumulative {:.3e}, max {:.3e}",
        summary.rho.cumulative_attacker_mass, summary.rho.max_attacker_rho
    );
    let zero_mean = summary.zero_weight_counts.iter().sum::<usize>() as f64 / summary.zero_weight_counts.len().max(1) as f64;
    let _ = writeln!(s, "mean zero-weight clients per round: {zero_mean:.2}");
    let _ = writeln!(s, "mean aggregation bias: {:.4e}", summary.mean_bias);
    if let (Some(l), Some(a)) = (summary.distances.legitimate_mean, summary.distances.attacker_mean) {
        let _ = writeln!(s, "mean distance to server model: legitimate {l:.4}, attacker {a:.4}");
        let _ = writeln!(
            s,
            "rounds with attackers strictly farther: {}/{}",
            summary.distances.separated_rounds, summary.distances.mixed_rounds
        );
    }
    if !summary.metadata.outlier_clients.is_empty() {
        let _ = writeln!(s, "curation flagged clients: {:?}", summary.metadata.outlier_clients);
    }
    for p in &summary.pca {
        let _ = writeln!(
            s,
            "round {} last-layer PCA variances: {:.4e}, {:.4e}",
            p.round, p.pca.explained_variance[0], p.pca.explained_variance[1]
        );
    }
    if let Some(p) = bounds {
        let terms = lemma2_impure_terms(p)?;
        let _ = writeln!(s, "pure detection threshold: {:.6}", lemma2_pure_threshold(p)?);
        let _ = writeln!(s, "impure detection threshold: {:.6} ({terms:?})", terms.total);
    }
    Ok(s)
}

pub fn cmd_analyze(run: &Path, bounds: Option<&Path>) -> std::result::Result<(), Failure> {
    let params = match bounds {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(e.into()))?;
            let p: BoundParams = serde_json::from_str(&text).map_err(|e| Failure::usage(Error::Config(e.to_string())))?;
            p.validate().map_err(Failure::usage)?;
            Some(p)
        }
        None => None,
    };
    let report = analyze_report(run, params.as_ref()).map_err(Failure::runtime)?;
    print!("{report}");
    Ok(())
}

/// Dispatches a parsed command line.
pub fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    init_threads().map_err(Failure::usage)?;
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Sweep { config, key, values, out } => cmd_sweep(&config, &key, &values, &out),
        Command::GenData { class_count, dim, per_class, spread, seed, test_fraction, precision, out } => {
            let precision = match precision {
                PrecisionArg::U8 => Precision::U8,
                PrecisionArg::F64 => Precision::F64,
            };
            cmd_gen_data(class_count, dim, per_class, spread, seed, test_fraction, precision, &out)
        }
        Command::Analyze { run, bounds } => cmd_analyze(&run, bounds.as_deref()),
    }
}

/// Entry point used by the binary; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
