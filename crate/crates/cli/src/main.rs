//! `mer`: spectrograms, training, evaluation, Grad-CAM and ad insertion
//! from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mer_core::dataset::{load_manifest, SynthDesign};
use mer_core::explain::{Score, Targeting};
use mer_core::model::Variant;
use mer_core::pipeline::{
    cmd_eval, cmd_gradcam, cmd_insert, cmd_predict, cmd_spectrogram, cmd_synth, cmd_train, ExperimentConfig,
    InsertionInputs, Split,
};
use mer_core::Error;
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "mer", version, about = "Music emotion recognition with harmonic filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    TrueLabel,
    AllTargets,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Centered,
    Logit,
}

#[derive(Subcommand)]
enum Command {
    /// Mel (and optionally STFT) grids for every 6 s clip of a WAV file.
    Spectrogram {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the linear STFT power grids.
        #[arg(long)]
        stft: bool,
        /// Pixel scale of the PGM previews; 0 skips them.
        #[arg(long, default_value_t = 1)]
        image_scale: usize,
    },
    /// Generate a labeled synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_quadrant: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON synthesis design; fields not given keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train with song-level cross-validation or on a holdout split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON experiment config (`model` and `train` sections); flags win.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        data_fraction: Option<f64>,
        /// Run only this fold (zero-based).
        #[arg(long, conflicts_with = "test_manifest")]
        fold: Option<usize>,
        /// Train on the whole manifest and test on this one.
        #[arg(long)]
        test_manifest: Option<PathBuf>,
        /// Suppress per-epoch progress.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a labeled manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write predicted quadrant distributions as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grad-CAM heatmaps and per-quadrant brightness.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "true-label")]
        targeting: TargetArg,
        /// Explain the centered logit (shift-invariant) or the raw logit.
        #[arg(long, value_enum, default_value = "centered")]
        score: ScoreArg,
        #[arg(long, default_value_t = 4)]
        image_scale: usize,
    },
    /// Choose ad insertion slots from predicted distributions.
    Insert {
        /// `NAME=CONTENT_CSV,ADS_CSV`; repeat once per model.
        #[arg(long = "model", required = true, value_parser = parse_model_arg)]
        models: Vec<InsertionInputs>,
        /// Reference distances: content,ad,slot,js_distance.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Measured outcomes: content,ad,slot,skip_rate,recall_rate.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_model_arg(s: &str) -> Result<InsertionInputs, String> {
    let (name, files) = s.split_once('=').ok_or("expected NAME=CONTENT_CSV,ADS_CSV")?;
    let (content, ads) = files.split_once(',').ok_or("expected NAME=CONTENT_CSV,ADS_CSV")?;
    if name.is_empty() || content.is_empty() || ads.is_empty() {
        return Err("expected NAME=CONTENT_CSV,ADS_CSV".into());
    }
    Ok(InsertionInputs {
        model: name.into(),
        content: content.into(),
        ads: ads.into(),
    })
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> mer_core::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn note(msg: &str) {
    eprintln!("mer: {msg}");
}

fn run(cmd: Command) -> mer_core::Result<()> {
    match cmd {
        Command::Spectrogram {
            audio,
            out,
            stft,
            image_scale,
        } => {
            let n = cmd_spectrogram(&audio, &out, stft, image_scale)?;
            note(&format!("wrote {n} clip(s) to {}", out.display()));
        }
        Command::Synth {
            out,
            per_quadrant,
            seed,
            config,
        } => {
            let design: SynthDesign = read_config(config.as_deref())?;
            note(&format!("design {}", serde_json::to_string(&design)?));
            let set = cmd_synth(&out, per_quadrant, seed, &design)?;
            note(&format!("wrote {} clips and manifest.csv to {}", set.len(), out.display()));
        }
        Command::Train {
            manifest,
            out,
            config,
            variant,
            epochs,
            learning_rate,
            batch_size,
            seed,
            folds,
            dropout,
            data_fraction,
            fold,
            test_manifest,
            quiet,
        } => {
            let mut cfg: ExperimentConfig = read_config(config.as_deref())?;
            if let Some(v) = variant {
                cfg.model.variant = v.parse::<Variant>()?;
            }
            let t = &mut cfg.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.seed = seed.unwrap_or(t.seed);
            t.folds = folds.unwrap_or(t.folds);
            t.data_fraction = data_fraction.unwrap_or(t.data_fraction);
            cfg.model.dropout_rate = dropout.unwrap_or(cfg.model.dropout_rate);
            note(&format!("config {}", serde_json::to_string(&cfg)?));
            let set = load_manifest(&manifest)?;
            let split = match (fold, test_manifest) {
                (Some(i), _) => Split::Fold(i),
                (None, Some(p)) => Split::Holdout(load_manifest(&p)?),
                (None, None) => Split::AllFolds,
            };
            let mut log = |m: &str| {
                if !quiet || !m.contains(" epoch ") {
                    note(m)
                }
            };
            let summary = cmd_train(&set, &split, &cfg, &out, &mut log)?;
            print!("{}", summary.report.to_table(&summary.variant));
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
        } => {
            let set = load_manifest(&manifest)?;
            let report = cmd_eval(&checkpoint, &set, &out)?;
            print!("{}", report.to_table(&checkpoint.display().to_string()));
        }
        Command::Predict {
            checkpoint,
            manifest,
            out,
        } => {
            let set = load_manifest(&manifest)?;
            let preds = cmd_predict(&checkpoint, &set, &out)?;
            note(&format!("wrote {} predictions to {}", preds.len(), out.display()));
        }
        Command::Gradcam {
            checkpoint,
            manifest,
            out,
            targeting,
            score,
            image_scale,
        } => {
            let targeting = match targeting {
                TargetArg::TrueLabel => Targeting::TrueLabel,
                TargetArg::AllTargets => Targeting::AllTargets,
            };
            let score = match score {
                ScoreArg::Centered => Score::Centered,
                ScoreArg::Logit => Score::Logit,
            };
            let set = load_manifest(&manifest)?;
            match cmd_gradcam(&checkpoint, &set, &out, targeting, score, image_scale)? {
                Some(report) => print!("{}", report.to_text()),
                None => note("spatial maps written; brightness applies to the harmonics variant only"),
            }
        }
        Command::Insert {
            models,
            reference,
            outcomes,
            out,
        } => {
            let report = cmd_insert(&models, reference.as_deref(), outcomes.as_deref(), &out)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mer: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
