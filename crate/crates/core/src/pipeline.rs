//! End-to-end commands shared by the CLI and the acceptance tests. Each
//! `cmd_*` reads its inputs, does the work through the library modules and
//! writes deterministic artifacts into an output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adinsert::{
    group_content_slots, load_predictions, plan_grid, plan_report, read_outcomes, read_reference_distances,
    write_predictions, ModelPlans, PlanReport, Prediction,
};
use crate::audio_io::{read_wav, resample, segment_clips, CANONICAL_RATE};
use crate::dataset::{synth_dataset, ClipSet, SynthDesign, CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::explain::{benchmark_cam, explain_set, BrightnessReport, Score, Targeting};
use crate::grid::{write_grid, GridHeader};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::train::predict_logits;
use crate::model::{
    balance_subsample, evaluate, split_songs, stratified_song_folds, train, ArchitectureSpec, EpochRecord,
    EvalReport, LabeledMel, Model, TrainConfig,
};
use crate::nn::softmax;
use crate::quadrant::{argmax, Quadrant};
use crate::spectro::MelPipeline;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ArchitectureSpec,
    pub train: TrainConfig,
}

/// How the labeled set is split for training and testing.
#[derive(Debug, Clone)]
pub enum Split {
    /// Every fold of the song-level cross-validation.
    AllFolds,
    /// One fold (zero-based) of the cross-validation.
    Fold(usize),
    /// Train on the whole set, test on a separate one.
    Holdout(ClipSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub name: String,
    pub train_clips: usize,
    pub validation_clips: usize,
    pub test_clips: usize,
    pub best_epoch: usize,
    pub best_validation_f1: Option<f64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: String,
    pub trainable_parameters: usize,
    pub folds: Vec<FoldOutcome>,
    /// Pooled over folds, with per-fold spread, or the single test report.
    pub report: EvalReport,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn file_stem_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Mel grids of every 6 s clip of one audio file, optionally with the STFT
/// power grids. Returns the number of clips written.
pub fn cmd_spectrogram(audio: &Path, out: &Path, with_stft: bool, image_scale: usize) -> Result<usize> {
    let mut w = read_wav(audio)?;
    if w.sample_rate_hz() != CANONICAL_RATE {
        w = resample(&w, CANONICAL_RATE)?;
    }
    let clips = segment_clips(&w, CLIP_SECONDS)?;
    if clips.is_empty() {
        return Err(Error::Input(format!(
            "{} is shorter than one {CLIP_SECONDS} s clip",
            audio.display()
        )));
    }
    create_dir(out)?;
    let pipe = MelPipeline::default();
    let cfg = pipe.stft().config().clone();
    for (i, clip) in clips.iter().enumerate() {
        let stem = format!("clip_{i:03}");
        let mel = pipe.normalized(clip)?;
        mel.write(out, &format!("{stem}_mel"), cfg.bin_hz(), cfg.frame_hop_s())?;
        if image_scale > 0 {
            mel.grid.write_pgm(out.join(format!("{stem}_mel.pgm")), image_scale)?;
        }
        if with_stft {
            let p = pipe.power(clip)?;
            let header = GridHeader {
                rows: p.grid.rows(),
                cols: p.grid.cols(),
                scale: "power".into(),
                bin_hz: p.bin_hz,
                frame_hop_s: p.frame_hop_s,
            };
            write_grid(out, &format!("{stem}_stft"), &header, &p.grid)?;
        }
    }
    Ok(clips.len())
}

pub fn cmd_synth(out: &Path, n_per_quadrant: usize, seed: u64, design: &SynthDesign) -> Result<ClipSet> {
    let set = synth_dataset(n_per_quadrant, seed, design, out)?;
    write_json(&out.join("design.json"), design)?;
    Ok(set)
}

fn subset(items: &[LabeledMel], idx: &[usize]) -> Vec<LabeledMel> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_labeled_predictions(path: &Path, items: &[LabeledMel], logits: &[[f64; 4]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "q1", "q2", "q3", "q4", "label", "predicted"])?;
    for (c, z) in items.iter().zip(logits) {
        let p = softmax(z);
        let mut row = vec![c.id.clone()];
        row.extend(p.iter().map(|v| format!("{v:.6}")));
        row.push(c.label.to_string());
        row.push(Quadrant::ALL[argmax(z)].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Job {
    name: String,
    pool: Vec<usize>,
    test: Vec<LabeledMel>,
    seed_offset: u64,
}

/// Trains and tests one model per split and writes, per split, the
/// checkpoint, the epoch log and the test predictions, plus an overall
/// report. `log` receives one progress line per event.
pub fn cmd_train(
    set: &ClipSet,
    split: &Split,
    cfg: &ExperimentConfig,
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<TrainSummary> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let pipe = MelPipeline::default();
    log(&format!("computing {} mel grids", set.len()));
    let mels = set.mels(&pipe)?;
    let songs = set.song_labels();
    let tc = &cfg.train;

    let jobs: Vec<Job> = match split {
        Split::Holdout(test_set) => vec![Job {
            name: "holdout".into(),
            pool: (0..set.len()).collect(),
            test: test_set.mels(&pipe)?,
            seed_offset: 0,
        }],
        Split::AllFolds | Split::Fold(_) => {
            let folds = stratified_song_folds(&songs, tc.folds, tc.seed)?;
            let chosen: Vec<usize> = match split {
                Split::Fold(i) if *i >= folds.len() => {
                    return Err(Error::Range(format!("fold {i} outside 0..{}", folds.len())))
                }
                Split::Fold(i) => vec![*i],
                _ => (0..folds.len()).collect(),
            };
            chosen
                .into_iter()
                .map(|i| Job {
                    name: format!("fold_{i}"),
                    pool: folds[i].train.clone(),
                    test: subset(&mels, &folds[i].test),
                    seed_offset: i as u64,
                })
                .collect()
        }
    };

    let mut outcomes = Vec::with_capacity(jobs.len());
    let mut trainable = 0;
    for job in jobs {
        let seed = tc.seed.wrapping_add(job.seed_offset.wrapping_mul(7919));
        let mut pool = job.pool;
        if tc.data_fraction < 1.0 {
            pool = split_songs(&songs, &pool, tc.data_fraction, seed.wrapping_add(11))?.0;
        }
        let labels: Vec<Quadrant> = pool.iter().map(|&i| set.records[i].quadrant).collect();
        let keep = balance_subsample(&labels, tc.balance_cap, seed.wrapping_add(13))?;
        let pool: Vec<usize> = keep.into_iter().map(|k| pool[k]).collect();
        let (val_idx, train_idx) = split_songs(&songs, &pool, tc.validation_fraction, seed.wrapping_add(17))?;
        let train_items = subset(&mels, &train_idx);
        let val_items = subset(&mels, &val_idx);
        log(&format!(
            "{}: {} train, {} validation, {} test clips",
            job.name,
            train_items.len(),
            val_items.len(),
            job.test.len()
        ));
        let model = Model::<f32>::new(&cfg.model, seed)?;
        trainable = model.trainable_count();
        let run_cfg = TrainConfig { seed, ..tc.clone() };
        let name = job.name.clone();
        let trained = train(model, &train_items, &val_items, &run_cfg, |r| {
            log(&format!(
                "{name} epoch {} {} loss {:.4} acc {:.3} f1 {:.3}",
                r.epoch, r.split, r.loss, r.accuracy, r.f1
            ))
        })?;
        let mut model = trained.model;
        let logits = predict_logits(&mut model, &job.test, tc.batch_size)?;
        let preds: Vec<Quadrant> = logits.iter().map(|z| Quadrant::ALL[argmax(z)]).collect();
        let truth: Vec<Quadrant> = job.test.iter().map(|c| c.label).collect();
        let report = evaluate(&preds, &truth)?;
        log(&format!(
            "{}: test accuracy {:.3} weighted f1 {:.3} (best epoch {})",
            job.name, report.accuracy, report.weighted.f1, trained.best_epoch
        ));

        let dir = out.join(&job.name);
        create_dir(&dir)?;
        let metrics = serde_json::json!({
            "best_epoch": trained.best_epoch,
            "best_validation_f1": trained.best_validation_f1,
            "test_accuracy": report.accuracy,
            "test_weighted_f1": report.weighted.f1,
        });
        save_checkpoint(dir.join("checkpoint.mer"), &model, seed, metrics)?;
        write_train_log(&dir.join("train_log.jsonl"), &trained.log)?;
        write_labeled_predictions(&dir.join("predictions.csv"), &job.test, &logits)?;
        write_json(&dir.join("report.json"), &report)?;
        outcomes.push(FoldOutcome {
            name: job.name,
            train_clips: train_items.len(),
            validation_clips: val_items.len(),
            test_clips: job.test.len(),
            best_epoch: trained.best_epoch,
            best_validation_f1: trained.best_validation_f1,
            report,
        });
    }

    let report = if outcomes.len() > 1 {
        let reports: Vec<EvalReport> = outcomes.iter().map(|o| o.report.clone()).collect();
        EvalReport::across_folds(&reports)?
    } else {
        outcomes[0].report.clone()
    };
    let summary = TrainSummary {
        variant: cfg.model.variant.to_string(),
        trainable_parameters: trainable,
        folds: outcomes,
        report,
    };
    write_json(&out.join("report.json"), &summary)?;
    write_text(&out.join("report.txt"), &summary.report.to_table(&summary.variant))?;
    Ok(summary)
}

fn load_model(checkpoint: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(checkpoint)?.1)
}

/// Tests a saved model on a labeled set.
pub fn cmd_eval(checkpoint: &Path, set: &ClipSet, out: &Path) -> Result<EvalReport> {
    let mut model = load_model(checkpoint)?;
    let items = set.mels(&MelPipeline::default())?;
    let logits = predict_logits(&mut model, &items, 16)?;
    let preds: Vec<Quadrant> = logits.iter().map(|z| Quadrant::ALL[argmax(z)]).collect();
    let truth: Vec<Quadrant> = items.iter().map(|c| c.label).collect();
    let report = evaluate(&preds, &truth)?;
    create_dir(out)?;
    write_labeled_predictions(&out.join("predictions.csv"), &items, &logits)?;
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &report.to_table(model.spec().variant.name()))?;
    Ok(report)
}

/// Writes predicted quadrant distributions, one row per clip keyed by song
/// id, in the format the insertion planner reads.
pub fn cmd_predict(checkpoint: &Path, set: &ClipSet, csv_out: &Path) -> Result<Vec<Prediction>> {
    let mut model = load_model(checkpoint)?;
    let items = set.mels(&MelPipeline::default())?;
    let logits = predict_logits(&mut model, &items, 16)?;
    let preds = set
        .records
        .iter()
        .zip(&logits)
        .map(|(r, z)| {
            Ok(Prediction {
                id: r.song_id.clone(),
                dist: crate::adinsert::EmotionDistribution::new(softmax(z))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = csv_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let f = fs::File::create(csv_out).map_err(|e| Error::io(csv_out, e))?;
    write_predictions(f, &preds)?;
    Ok(preds)
}

/// Grad-CAM heatmaps and quadrant brightness for a labeled set. Benchmark
/// variants get per-tower spatial maps and no brightness report.
pub fn cmd_gradcam(
    checkpoint: &Path,
    set: &ClipSet,
    out: &Path,
    targeting: Targeting,
    score: Score,
    image_scale: usize,
) -> Result<Option<BrightnessReport>> {
    let mut model = load_model(checkpoint)?;
    let items = set.mels(&MelPipeline::default())?;
    let maps_dir = out.join("heatmaps");
    create_dir(&maps_dir)?;
    if model.harmonics().is_none() {
        for c in &items {
            let cam = benchmark_cam(&mut model, &c.id, &c.mel, c.label, score)?;
            for (t, g) in cam.towers.iter().enumerate() {
                let stem = format!("{}_{}_tower{t}", file_stem_safe(&c.id), c.label);
                g.write_pgm(maps_dir.join(format!("{stem}.pgm")), image_scale.max(1))?;
            }
        }
        return Ok(None);
    }
    let (clips, report) = explain_set(&mut model, &items, targeting, score, 16)?;
    for c in &clips {
        for h in &c.heatmaps {
            let stem = format!("{}_{}", file_stem_safe(&c.clip_id), h.target);
            h.export(&maps_dir, &stem, image_scale.max(1))?;
        }
    }
    write_json(&out.join("brightness.json"), &report)?;
    write_text(&out.join("brightness.txt"), &report.to_text())?;
    Ok(Some(report))
}

/// One model's predictions for the content clips and the ads.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionInputs {
    pub model: String,
    pub content: PathBuf,
    pub ads: PathBuf,
}

/// Chooses an insertion slot for every content x ad pair under each model
/// and summarizes the choices against optional reference tables.
pub fn cmd_insert(
    models: &[InsertionInputs],
    reference: Option<&Path>,
    outcomes: Option<&Path>,
    out: &Path,
) -> Result<PlanReport> {
    if models.is_empty() {
        return Err(Error::Input("no model predictions given".into()));
    }
    let open = |p: &Path| fs::File::open(p).map_err(|e| Error::io(p, e));
    let plans = models
        .iter()
        .map(|m| {
            let content = group_content_slots(&load_predictions(&m.content)?)?;
            let ads = load_predictions(&m.ads)?;
            plan_grid(&m.model, &content, &ads)
        })
        .collect::<Result<Vec<ModelPlans>>>()?;
    let reference = reference.map(|p| read_reference_distances(open(p)?)).transpose()?;
    let outcomes = outcomes.map(|p| read_outcomes(open(p)?)).transpose()?;
    let report = plan_report(&plans, reference.as_ref(), outcomes.as_ref())?;
    create_dir(out)?;
    write_json(&out.join("plans.json"), &plans)?;
    write_json(&out.join("report.json"), &report)?;
    let mut f = fs::File::create(out.join("report.txt")).map_err(|e| Error::io(out, e))?;
    f.write_all(report.to_table().as_bytes()).map_err(|e| Error::io(out, e))?;
    Ok(report)
}
