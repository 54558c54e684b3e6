//! Command-line front end: dataset generation, training, evaluation, loss
//! comparison, embedding export, and retrieval-count tuning. Every command is
//! driven by a JSON config plus a handful of flags, and re-running refuses to
//! overwrite outputs unless --force is given.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use clmle::classifier::tune_n;
use clmle::clustering::ClusterIndex;
use clmle::datagen::{gen_power_law, Dataset, SyntheticSpec};
use clmle::encoder::{export_embeddings_csv, EncoderParams};
use clmle::metrics::EvalReport;
use clmle::trainer::{embed_ids, evaluate, train, LossKind, TrainConfig, TrainReport};
use clmle::Error as LibError;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "clmle",
    about = "Cluster-based large-margin local embeddings for imbalanced data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic power-law-imbalanced dataset.
    GenData(CommonArgs),
    /// Train an encoder with the configured loss.
    Train(CommonArgs),
    /// Evaluate a trained checkpoint with the k-nearest-cluster rule.
    Eval(CommonArgs),
    /// Train all four losses with shared seeds and tabulate the results.
    Compare(CommonArgs),
    /// Export embeddings of every sample to CSV.
    ExportEmbeddings(CommonArgs),
    /// Grid-search the retrieval count N on the validation split.
    TuneN(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON run config (see docs/config.schema.json).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the dataset and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

/// How the dataset is obtained: generated from a spec or loaded from files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetConfig {
    #[serde(default)]
    generate: Option<SyntheticSpec>,
    #[serde(default)]
    csv: Option<PathBuf>,
    #[serde(default)]
    sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    /// Checkpoint path; defaults to <out>/encoder.bin.
    checkpoint: Option<PathBuf>,
    /// Cluster snapshot path; defaults to <out>/clusters.json.
    clusters: Option<PathBuf>,
    /// Which split to evaluate: train | val | test.
    split: String,
    /// Retrieved clusters N; defaults to the training value.
    n_retrieve: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            clusters: None,
            split: "test".into(),
            n_retrieve: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CompareConfig {
    /// Fraction of the clmle run's final validation balanced accuracy used as
    /// the shared seen-samples target.
    target_fraction: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            target_fraction: 0.9,
        }
    }
}

/// Top-level run config, strict against unknown fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    dataset: DatasetConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    eval: EvalConfig,
    #[serde(default)]
    compare: CompareConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Compare(args) => run_compare(args),
        Command::ExportEmbeddings(args) => run_export(args),
        Command::TuneN(args) => run_tune_n(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let payload = serde_json::json!({
                "error": kind,
                "message": err.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

fn classify(err: &LibError) -> (&'static str, u8) {
    match err {
        LibError::ConfigError(_) | LibError::SpecError(_) => ("config", EXIT_CONFIG),
        LibError::Io(_) | LibError::Csv(_) | LibError::Json(_) => ("io", EXIT_IO),
        LibError::DivergenceDetected { .. } | LibError::NonFiniteGradient => {
            ("divergence", EXIT_DIVERGENCE)
        }
        _ => ("internal", 1),
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, LibError> {
    let file = std::fs::File::open(&args.config)?;
    let mut config: RunConfig = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| LibError::ConfigError(format!("config does not match schema: {e}")))?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
        if let Some(spec) = &mut config.dataset.generate {
            spec.seed = seed;
        }
    }
    // Fail fast on invalid values before any work starts.
    config.train.validate()?;
    if let Some(spec) = &config.dataset.generate {
        spec.validate()?;
    }
    match config.eval.split.as_str() {
        "train" | "val" | "test" => {}
        other => {
            return Err(LibError::ConfigError(format!(
                "eval.split must be train|val|test, got '{other}'"
            )))
        }
    }
    Ok(config)
}

fn resolve_dataset(config: &RunConfig) -> Result<Dataset, LibError> {
    match (&config.dataset.generate, &config.dataset.csv) {
        (Some(spec), None) => gen_power_law(spec),
        (None, Some(csv)) => {
            let sidecar = config.dataset.sidecar.clone().ok_or_else(|| {
                LibError::ConfigError("dataset.sidecar required when loading from csv".into())
            })?;
            Dataset::load(csv, &sidecar)
        }
        (Some(_), Some(_)) => Err(LibError::ConfigError(
            "dataset.generate and dataset.csv are mutually exclusive".into(),
        )),
        (None, None) => Err(LibError::ConfigError(
            "dataset.generate or dataset.csv required".into(),
        )),
    }
}

/// Refuses to overwrite an existing output without --force.
fn ensure_writable(path: &Path, force: bool) -> Result<(), LibError> {
    if path.exists() && !force {
        return Err(LibError::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists; pass --force to overwrite", path.display()),
        )));
    }
    Ok(())
}

fn prepare_out(args: &CommonArgs) -> Result<(), LibError> {
    std::fs::create_dir_all(&args.out)?;
    Ok(())
}

fn split_ids<'a>(dataset: &'a Dataset, split: &str) -> &'a [usize] {
    match split {
        "train" => &dataset.split.train,
        "val" => &dataset.split.val,
        _ => &dataset.split.test,
    }
}

fn run_gen_data(args: &CommonArgs) -> Result<(), LibError> {
    let config = load_config(args)?;
    if config.dataset.generate.is_none() {
        return Err(LibError::ConfigError(
            "gen-data requires dataset.generate".into(),
        ));
    }
    prepare_out(args)?;
    let dataset = resolve_dataset(&config)?;
    let csv_path = args.out.join("dataset.csv");
    let sidecar = args.out.join("dataset.json");
    ensure_writable(&csv_path, args.force)?;
    ensure_writable(&sidecar, args.force)?;
    dataset.save(&csv_path, &sidecar)?;
    println!(
        "wrote {} samples across {} classes to {}",
        dataset.len(),
        dataset.num_classes(),
        csv_path.display()
    );
    Ok(())
}

fn run_train(args: &CommonArgs) -> Result<(), LibError> {
    let config = load_config(args)?;
    prepare_out(args)?;
    let dataset = resolve_dataset(&config)?;

    let checkpoint = args.out.join("encoder.bin");
    let clusters_path = args.out.join("clusters.json");
    let report_json = args.out.join("train_report.json");
    let loss_csv = args.out.join("loss_curve.csv");
    for path in [&checkpoint, &clusters_path, &report_json, &loss_csv] {
        ensure_writable(path, args.force)?;
    }

    let outcome = train(&dataset, &config.train)?;
    outcome.encoder.save(&checkpoint)?;
    outcome.clusters.save(&clusters_path)?;
    let mut report = outcome.report;
    report.checkpoint = Some(checkpoint.display().to_string());
    report.save_json(&report_json)?;
    report.save_loss_csv(&loss_csv)?;
    println!(
        "{} train done: {} iterations, final validation balanced accuracy {:.4}",
        config.train.loss,
        report.loss_curve.len(),
        report.final_val_balanced_accuracy
    );
    Ok(())
}

fn load_checkpoint(
    args: &CommonArgs,
    config: &RunConfig,
) -> Result<(EncoderParams, ClusterIndex), LibError> {
    let checkpoint = config
        .eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.out.join("encoder.bin"));
    let clusters = config
        .eval
        .clusters
        .clone()
        .unwrap_or_else(|| args.out.join("clusters.json"));
    Ok((
        EncoderParams::load(&checkpoint)?,
        ClusterIndex::load(&clusters)?,
    ))
}

fn run_eval(args: &CommonArgs) -> Result<(), LibError> {
    let config = load_config(args)?;
    prepare_out(args)?;
    let dataset = resolve_dataset(&config)?;
    let (params, index) = load_checkpoint(args, &config)?;
    let ids = split_ids(&dataset, &config.eval.split);
    let n = config.eval.n_retrieve.unwrap_or(config.train.n_retrieve);
    let outcome = evaluate(&params, &index, &dataset, ids, n)?;
    let report = EvalReport::from_predictions(&outcome.predictions, &outcome.labels)?;

    let json_path = args.out.join("eval_report.json");
    let csv_path = args.out.join("eval_report.csv");
    ensure_writable(&json_path, args.force)?;
    ensure_writable(&csv_path, args.force)?;
    report.save_json(&json_path)?;
    report.save_csv(&csv_path)?;
    println!(
        "eval on {} split: balanced accuracy {:.6}, overall accuracy {:.6}",
        config.eval.split, report.balanced_accuracy, report.overall_accuracy
    );
    Ok(())
}

fn run_compare(args: &CommonArgs) -> Result<(), LibError> {
    let config = load_config(args)?;
    prepare_out(args)?;
    let dataset = resolve_dataset(&config)?;
    let table_path = args.out.join("compare.csv");
    ensure_writable(&table_path, args.force)?;

    let kinds = [
        LossKind::Clmle,
        LossKind::Lmle,
        LossKind::Triplet,
        LossKind::Softmax,
    ];
    let mut reports: BTreeMap<&'static str, (TrainReport, f64)> = BTreeMap::new();
    for kind in kinds {
        let mut train_config = config.train.clone();
        train_config.loss = kind;
        let outcome = train(&dataset, &train_config)?;
        let test = evaluate(
            &outcome.encoder,
            &outcome.clusters,
            &dataset,
            &dataset.split.test,
            train_config.n_retrieve,
        )?;
        let name = match kind {
            LossKind::Clmle => "clmle",
            LossKind::Lmle => "lmle",
            LossKind::Triplet => "triplet",
            LossKind::Softmax => "softmax",
        };
        println!(
            "{name}: test balanced accuracy {:.4}, final val {:.4}",
            test.balanced_accuracy, outcome.report.final_val_balanced_accuracy
        );
        reports.insert(name, (outcome.report, test.balanced_accuracy));
    }

    // Shared convergence target: a fraction of the clmle run's final
    // validation balanced accuracy.
    let target =
        config.compare.target_fraction * reports["clmle"].0.final_val_balanced_accuracy;
    let mut writer = csv::Writer::from_path(&table_path).map_err(LibError::Csv)?;
    writer
        .write_record([
            "loss",
            "test_balanced_accuracy",
            "final_val_balanced_accuracy",
            "seen_samples_to_target",
            "target",
        ])
        .map_err(LibError::Csv)?;
    for (name, (report, test_acc)) in &reports {
        let to_target = report
            .seen_samples_to_reach(target)
            .map(|s| s.to_string())
            .unwrap_or_else(|| "unreached".into());
        writer
            .write_record([
                name.to_string(),
                format!("{test_acc}"),
                format!("{}", report.final_val_balanced_accuracy),
                to_target,
                format!("{target}"),
            ])
            .map_err(LibError::Csv)?;
    }
    writer.flush()?;
    println!("wrote {}", table_path.display());
    Ok(())
}

fn run_export(args: &CommonArgs) -> Result<(), LibError> {
    let config = load_config(args)?;
    prepare_out(args)?;
    let dataset = resolve_dataset(&config)?;
    let (params, _) = load_checkpoint(args, &config)?;
    let path = args.out.join("embeddings.csv");
    ensure_writable(&path, args.force)?;
    let ids: Vec<usize> = (0..dataset.len()).collect();
    let embedded = embed_ids(&params, &dataset, &ids)?;
    export_embeddings_csv(
        &path,
        ids.iter()
            .map(|&id| (id, dataset.labels[id], embedded[&id].as_slice().to_vec())),
    )?;
    println!("wrote {} embeddings to {}", ids.len(), path.display());
    Ok(())
}

fn run_tune_n(args: &CommonArgs) -> Result<(), LibError> {
    let config = load_config(args)?;
    prepare_out(args)?;
    let dataset = resolve_dataset(&config)?;
    let (params, index) = load_checkpoint(args, &config)?;
    let embedded = embed_ids(&params, &dataset, &dataset.split.val)?;
    let validation: Vec<_> = dataset
        .split
        .val
        .iter()
        .map(|&id| (embedded[&id].clone(), dataset.labels[id]))
        .collect();
    let chosen = tune_n(&index, &validation)?;
    let path = args.out.join("tune_n.json");
    ensure_writable(&path, args.force)?;
    let payload = serde_json::json!({
        "chosen_n": chosen,
        "centroid_count": index.len(),
    });
    std::fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
    println!("chosen N = {chosen} (over {} centroids)", index.len());
    Ok(())
}
