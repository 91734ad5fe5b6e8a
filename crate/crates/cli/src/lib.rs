//! `relnet` command line: dataset generation, training, evaluation, the
//! relation ablation and the gradient suite.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use relnet::config::{config_hash, load_config, ConfigError, Preset, RunConfig};
use relnet::data::{generate_dataset, read_dataset, write_dataset, DatasetError};
use relnet::model::Variant;
use relnet::numeric::{NtsrError, Precision, Real};
use relnet::train_eval::{
    ablation_over_seeds, evaluate, train_on, MetricsReport, PreparedData, TrainError,
};
use relnet::verify::{gradcheck_suite, relation_invariance, VerifyError};
use relnet::weights::{load_weights, save_weights, WeightsError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "relnet", version, about = "Trajectory-conditioned relation network for crossing intent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Gen(Common),
    /// Train one variant, save weights and history.
    Train(Common),
    /// Score saved weights on the test partition.
    Eval(Common),
    /// Train both variants with the same seed and budget and compare them.
    Ablate(AblateArgs),
    /// Finite-difference gradient suite and relation invariance checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Run config (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path: dataset dir for `gen`, weights for `train`, report for `eval`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `scenario.seed` for `gen`, `train.seed` otherwise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Decision threshold on ŷ.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated seeds; one comparison per seed.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Vec<u64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances for the invariance check.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Report path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Pie,
    Jaad,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Relation,
    #[value(name = "no_relation")]
    NoRelation,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Verification(_) => EXIT_VERIFICATION,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn is_io_dataset(e: &DatasetError) -> bool {
    matches!(
        e,
        DatasetError::Io { .. }
            | DatasetError::MissingFile(_)
            | DatasetError::Container { source: NtsrError::Io { .. }, .. }
    )
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        if is_io_dataset(&e) {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(d) => d.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        match e {
            WeightsError::Container(NtsrError::Io { .. }) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Parse `args` (program name first), run the command, return the exit code.
pub fn run_cli<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(args) => gen(&args),
        Command::Train(args) => with_precision(|p| match p {
            Precision::F32 => train_cmd::<f32>(&args, p),
            Precision::F64 => train_cmd::<f64>(&args, p),
        }),
        Command::Eval(args) => with_precision(|p| match p {
            Precision::F32 => eval_cmd::<f32>(&args, p),
            Precision::F64 => eval_cmd::<f64>(&args, p),
        }),
        Command::Ablate(args) => with_precision(|p| match p {
            Precision::F32 => ablate_cmd::<f32>(&args, p),
            Precision::F64 => ablate_cmd::<f64>(&args, p),
        }),
        Command::Gradcheck(args) => with_precision(|p| match p {
            Precision::F32 => gradcheck_cmd::<f32>(&args, p),
            Precision::F64 => gradcheck_cmd::<f64>(&args, p),
        }),
    }
}

/// Precision from `RELNET_PRECISION`, f32 when unset.
fn with_precision(f: impl FnOnce(Precision) -> Result<(), CliError>) -> Result<(), CliError> {
    f(Precision::from_env(Precision::F32).map_err(CliError::Validation)?)
}

/// Load the config and apply command-line overrides, then revalidate.
fn resolve(args: &Common, generating: bool) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = args.preset {
        config.apply_preset(match p {
            PresetArg::Pie => Preset::Pie,
            PresetArg::Jaad => Preset::Jaad,
        });
    }
    if let Some(seed) = args.seed {
        if generating {
            config.scenario.seed = seed;
        } else {
            config.train.seed = seed;
        }
    }
    if let Some(v) = args.variant {
        config.model.variant = match v {
            VariantArg::Relation => Variant::Relation,
            VariantArg::NoRelation => Variant::NoRelation,
        };
    }
    if let Some(t) = args.threshold {
        config.train.threshold = t;
    }
    let v = config.violations();
    if !v.is_empty() {
        return Err(ConfigError::Violations(v).into());
    }
    Ok(config)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display()))),
        None => Ok(()),
    }
}

fn write_report(path: &Path, report: &Value) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn header(command: &str, config: &RunConfig, seed: u64, precision: Precision) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(seed));
    m.insert("config_hash".into(), json!(config_hash(config)));
    m.insert("precision".into(), json!(precision.to_string()));
    m
}

fn metrics_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<22}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}", "", "Acc", "AUC", "F1", "P", "R", "n");
    for (name, m) in rows {
        let _ = write!(out, "{name:<22}");
        for v in m.columns() {
            let _ = write!(out, "{v:>8.3}");
        }
        let _ = writeln!(out, "{:>8}", m.n);
    }
    out
}

fn prepare(config: &RunConfig) -> Result<PreparedData, CliError> {
    Ok(PreparedData::split(read_dataset(&config.io.dataset_dir)?, &config.train)?)
}

fn gen(args: &Common) -> Result<(), CliError> {
    let mut config = resolve(args, true)?;
    if let Some(out) = &args.out {
        config.io.dataset_dir = out.clone();
    }
    let sequences = generate_dataset(&config.scenario, config.generate.num_sequences);
    write_dataset(&config.io.dataset_dir, &sequences)?;
    let crossing = sequences.iter().filter(|s| s.crossing).count();
    println!(
        "wrote {} sequences ({} crossing) to {}",
        sequences.len(),
        crossing,
        config.io.dataset_dir.display()
    );
    Ok(())
}

fn train_cmd<T: Real>(args: &Common, precision: Precision) -> Result<(), CliError> {
    let mut config = resolve(args, false)?;
    if let Some(out) = &args.out {
        config.io.weights_path = out.clone();
    }
    let data = prepare(&config)?;
    let (model, history) = train_on::<T>(&data, &config.train_config())?;
    ensure_parent(&config.io.weights_path)?;
    save_weights(&model, &config.io.weights_path)?;

    let mut report = header("train", &config, config.train.seed, precision);
    report.insert("variant".into(), json!(config.model.variant));
    report.insert("parameters".into(), json!(model.num_parameters()));
    report.insert("history".into(), json!(history));
    let history_path = config.io.weights_path.with_extension("history.json");
    write_report(&history_path, &Value::Object(report))?;

    for (epoch, loss) in history.epoch_loss.iter().enumerate() {
        let val = history.val_metrics.get(epoch).map(|m| format!("  val F1 {:.3}", m.f1)).unwrap_or_default();
        println!("epoch {:>3}  loss {loss:.4}{val}", epoch + 1);
    }
    if let Some(m) = history.val_metrics.get(history.selected_epoch) {
        print!("{}", metrics_table(&[("validation", m)]));
    }
    println!("weights: {}", config.io.weights_path.display());
    println!("history: {}", history_path.display());
    Ok(())
}

fn eval_cmd<T: Real>(args: &Common, precision: Precision) -> Result<(), CliError> {
    let mut config = resolve(args, false)?;
    if let Some(out) = &args.out {
        config.io.report_path = out.clone();
    }
    let model = load_weights::<T>(&config.io.weights_path, &config.model)?;
    let data = prepare(&config)?;
    let (_, _, test) = data.windows(&config.sampling).map_err(CliError::from)?;
    let metrics = evaluate(&model, &test, config.train.threshold)?;

    let mut report = header("eval", &config, config.train.seed, precision);
    report.insert("variant".into(), json!(config.model.variant));
    report.insert("weights".into(), json!(config.io.weights_path));
    report.insert("metrics".into(), json!(metrics));
    write_report(&config.io.report_path, &Value::Object(report))?;

    print!("{}", metrics_table(&[("test", &metrics)]));
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", metrics.csv_row());
    println!("report: {}", config.io.report_path.display());
    Ok(())
}

fn ablate_cmd<T: Real>(args: &AblateArgs, precision: Precision) -> Result<(), CliError> {
    let mut config = resolve(&args.common, false)?;
    if let Some(out) = &args.common.out {
        config.io.report_path = out.clone();
    }
    let seeds = if args.seeds.is_empty() { vec![config.train.seed] } else { args.seeds.clone() };
    let data = prepare(&config)?;
    let summary = ablation_over_seeds::<T>(&data, &config.train_config(), &seeds)?;

    let mut report = header("ablate", &config, config.train.seed, precision);
    report.insert("seeds".into(), json!(seeds));
    report.insert("ablation".into(), json!(summary));
    write_report(&config.io.report_path, &Value::Object(report))?;

    print!("{}", summary.table());
    println!("report: {}", config.io.report_path.display());
    Ok(())
}

/// Largest tolerated deviation of the relation output under cell permutation.
fn invariance_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F32 => 1e-4,
        Precision::F64 => 1e-10,
    }
}

fn gradcheck_cmd<T: Real>(args: &GradcheckArgs, precision: Precision) -> Result<(), CliError> {
    let grads = gradcheck_suite(args.seed)?;
    let invariance = relation_invariance::<T>(args.instances, args.seed)?;
    let tolerance = invariance_tolerance(precision);
    let invariant = invariance.max_permutation_deviation <= tolerance && invariance.pair_count_law;

    print!("{}", grads.table());
    println!(
        "relation invariance ({}, {} instances): max deviation {:.3e} (≤ {tolerance:e}), pair counts {}",
        precision,
        invariance.instances,
        invariance.max_permutation_deviation,
        if invariance.pair_count_law { "ok" } else { "WRONG" }
    );

    if let Some(out) = &args.out {
        let cases: Vec<Value> = grads
            .cases
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "passed": c.passed(),
                    "checked": c.comparison.elements,
                    "kinked": c.kinked,
                    "attempts": c.attempts,
                    "max_relative_error": c.comparison.max_relative_error,
                })
            })
            .collect();
        let report = json!({
            "command": "gradcheck",
            "seed": args.seed,
            "precision": precision.to_string(),
            "gradients": { "passed": grads.passed(), "cases": cases },
            "invariance": {
                "passed": invariant,
                "instances": invariance.instances,
                "max_permutation_deviation": invariance.max_permutation_deviation,
                "max_pair_sum_gap": invariance.max_pair_sum_gap,
                "pair_count_law": invariance.pair_count_law,
            },
        });
        write_report(out, &report)?;
    }

    if grads.passed() && invariant {
        Ok(())
    } else {
        let failed: Vec<&str> = grads.cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
        let mut msg = String::from("verification failed");
        if !failed.is_empty() {
            let _ = write!(msg, ": gradients of {}", failed.join(", "));
        }
        if !invariant {
            msg.push_str("; relation invariance");
        }
        Err(CliError::Verification(msg))
    }
}
