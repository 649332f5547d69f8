//! `beamalign` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamalign::dataset::{
    filter_labels, generate_dataset, load_dataset, save_dataset, split, truncate_features, Dataset,
};
use beamalign::harness::{
    run_accuracy_vs_m, run_beam_pattern, run_gainloss_vs_m, run_required_m_vs_array, to_csv, AccuracyRow,
    BeamPatternRow, ExperimentConfig, GainLossRow, RequiredMRow, RunManifest, ACCURACY_HEADER, BEAM_PATTERN_HEADER,
    GAINLOSS_HEADER, REQUIRED_M_HEADER,
};
use beamalign::neural::{load_model, predict_batch, save_model, train};
use beamalign::{seed, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "beamalign",
    version,
    about = "Noncoherent compressive beam alignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON); missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for the stage this command runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the directional and PN codebooks.
    GenCodebook(Common),
    /// Generate a labeled capture dataset.
    GenDataset(Common),
    /// Train the classifier on a dataset and score it on the held-out split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Number of PN measurements used as features.
        #[arg(long, short)]
        m: usize,
    },
    /// Score a trained model on the held-out split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Accuracy and gain-loss sweeps over the measurement count.
    SweepM {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Sweep::Both)]
        kind: Sweep,
    },
    /// Required measurement count versus array size.
    SweepArray(Common),
    /// Model vs impaired beam patterns.
    BeamPattern(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Accuracy,
    Gainloss,
    Both,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let config = match &common.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))?
        }
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn out_dir(common: &Common, config: &ExperimentConfig) -> std::result::Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn manifest(dir: &Path, command: &str, config: &ExperimentConfig, outputs: &[&str]) -> Outcome {
    write_json(&dir.join("manifest.json"), &RunManifest::new(command, config, outputs))
}

/// Filtered train/test split shared by `train` and `eval`.
fn held_out(config: &ExperimentConfig, dataset: &Path) -> std::result::Result<(Dataset, Dataset, u64), Failure> {
    let ds = filter_labels(&load_dataset(dataset)?, config.min_label_count)?;
    let split_seed = seed::derive(config.master_seed, &[0x5B1]);
    let (train_set, test) = split(&ds, config.train_fraction(), split_seed)?;
    Ok((train_set, test, split_seed))
}

fn test_accuracy(params: &beamalign::neural::NetworkParameters, test: &Dataset) -> std::result::Result<f64, Failure> {
    let m = params.meta.n_features;
    let raw = test
        .points
        .iter()
        .map(|p| truncate_features(&p.pn_rss, m).map(<[f64]>::to_vec))
        .collect::<beamalign::Result<Vec<_>>>()?;
    let pred = predict_batch(params, &raw)?;
    let hits = pred
        .iter()
        .zip(&test.points)
        .filter(|(c, p)| **c == Some(p.label))
        .count();
    Ok(hits as f64 / test.len() as f64)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenCodebook(common) => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.gen.pn_seed = s;
            }
            let dir = out_dir(&common, &config)?;
            write_json(&dir.join("dft_codebook.json"), &config.gen.dft()?)?;
            write_json(&dir.join("pn_codebook.json"), &config.gen.pn()?)?;
            manifest(
                &dir,
                "gen-codebook",
                &config,
                &["dft_codebook.json", "pn_codebook.json"],
            )
        }
        Command::GenDataset(common) => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.gen.seed = s;
            }
            let dir = out_dir(&common, &config)?;
            let ds = generate_dataset(&config.gen)?;
            save_dataset(&ds, dir.join("dataset.jsonl"))?;
            manifest(&dir, "gen-dataset", &config, &["dataset.jsonl"])
        }
        Command::Train { common, dataset, m } => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.train.seed = s;
            }
            let dir = out_dir(&common, &config)?;
            let (train_set, test, split_seed) = held_out(&config, &dataset)?;
            let (params, history) = train(&train_set, m, &config.train)?;
            save_model(&params, dir.join("model.json"))?;
            fs::write(dir.join("history.csv"), history.to_csv())?;
            let log = json!({
                "m": m,
                "n_classes": params.meta.n_classes,
                "n_train": train_set.len(),
                "n_test": test.len(),
                "split_seed": split_seed,
                "train_seed": config.train.seed,
                "epochs": history.epochs(),
                "best_epoch": history.best_epoch,
                "test_accuracy": test_accuracy(&params, &test)?,
            });
            write_json(&dir.join("train_log.json"), &log)?;
            manifest(&dir, "train", &config, &["model.json", "history.csv", "train_log.json"])
        }
        Command::Eval { common, dataset, model } => {
            let config = load_config(&common)?;
            let dir = out_dir(&common, &config)?;
            let params = load_model(&model, None)?;
            let (_, test, split_seed) = held_out(&config, &dataset)?;
            if params.meta.label_map != test.meta.label_map {
                return Err(Error::ArchitectureMismatch("model label map differs from the dataset's".into()).into());
            }
            let acc = test_accuracy(&params, &test)?;
            println!("test accuracy {acc}");
            let log = json!({
                "m": params.meta.n_features,
                "n_test": test.len(),
                "split_seed": split_seed,
                "test_accuracy": acc,
            });
            write_json(&dir.join("eval.json"), &log)
        }
        Command::SweepM { common, kind } => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.master_seed = s;
            }
            let dir = out_dir(&common, &config)?;
            let mut outputs = Vec::new();
            if matches!(kind, Sweep::Accuracy | Sweep::Both) {
                let rows = run_accuracy_vs_m(&config)?;
                fs::write(
                    dir.join("accuracy.csv"),
                    to_csv(ACCURACY_HEADER, &rows, AccuracyRow::csv),
                )?;
                outputs.push("accuracy.csv");
            }
            if matches!(kind, Sweep::Gainloss | Sweep::Both) {
                let rows = run_gainloss_vs_m(&config)?;
                fs::write(
                    dir.join("gainloss.csv"),
                    to_csv(GAINLOSS_HEADER, &rows, GainLossRow::csv),
                )?;
                outputs.push("gainloss.csv");
            }
            manifest(&dir, "sweep-m", &config, &outputs)
        }
        Command::SweepArray(common) => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.master_seed = s;
            }
            let dir = out_dir(&common, &config)?;
            let rows = run_required_m_vs_array(&config)?;
            fs::write(
                dir.join("required_m.csv"),
                to_csv(REQUIRED_M_HEADER, &rows, RequiredMRow::csv),
            )?;
            manifest(&dir, "sweep-array", &config, &["required_m.csv"])
        }
        Command::BeamPattern(common) => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.gen.impairment.seed = s;
            }
            let dir = out_dir(&common, &config)?;
            let (rows, summary) = run_beam_pattern(&config)?;
            fs::write(
                dir.join("beam_pattern.csv"),
                to_csv(BEAM_PATTERN_HEADER, &rows, BeamPatternRow::csv),
            )?;
            write_json(&dir.join("beam_pattern_summary.json"), &summary)?;
            manifest(
                &dir,
                "beam-pattern",
                &config,
                &["beam_pattern.csv", "beam_pattern_summary.json"],
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
