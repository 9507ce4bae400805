//! Mini-batch Adam training with seeded shuffling and best-epoch retention.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::{batch_tensor, Model};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{softmax_cross_entropy, softmax_cross_entropy_batch, Adam, AdamConfig, Ctx, Tensor};
use crate::quadrant::{argmax, Quadrant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub folds: usize,
    pub balance_cap: f64,
    /// Share of each training fold held back for best-epoch selection.
    pub validation_fraction: f64,
    /// Share of the training songs used at all (data-size experiments).
    pub data_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            folds: 10,
            balance_cap: 1.5,
            validation_fraction: 0.1,
            data_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Range(format!("fold count {} < 2", self.folds)));
        }
        if !(self.balance_cap > 1.0) {
            return Err(Error::Range(format!("balance cap {} must exceed 1", self.balance_cap)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Range("batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Range(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Range(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Range(format!("data fraction {} outside (0, 1]", self.data_fraction)));
        }
        Ok(())
    }
}

/// A normalized mel grid with its quadrant label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMel {
    pub id: String,
    pub mel: Grid,
    pub label: Quadrant,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1 (lower
    /// validation loss, then earlier epoch, on ties), or from the last epoch
    /// when no validation set was given.
    pub model: Model<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_f1: Option<f64>,
}

/// Inference-mode logits for every item.
pub fn predict_logits(model: &mut Model<f32>, items: &[LabeledMel], batch: usize) -> Result<Vec<[f64; 4]>> {
    let mels: Vec<&Grid> = items.iter().map(|c| &c.mel).collect();
    model.logits_many(&mels, batch)
}

fn split_record(epoch: usize, split: &str, loss: f64, preds: &[Quadrant], truth: &[Quadrant]) -> Result<EpochRecord> {
    let r = evaluate(preds, truth)?;
    Ok(EpochRecord {
        epoch,
        split: split.into(),
        loss,
        accuracy: r.accuracy,
        f1: r.weighted.f1,
    })
}

fn snapshot(model: &Model<f32>) -> Vec<Vec<f32>> {
    model
        .params()
        .iter()
        .map(|p| p.value.data().to_vec())
        .chain(model.buffers().iter().map(|b| b.data().to_vec()))
        .collect()
}

fn restore(model: &mut Model<f32>, snap: &[Vec<f32>]) {
    let mut it = snap.iter();
    for p in model.params_mut() {
        p.value.data_mut().copy_from_slice(it.next().expect("snapshot matches model"));
    }
    for b in model.buffers_mut() {
        b.data_mut().copy_from_slice(it.next().expect("snapshot matches model"));
    }
}

/// Trains `model` in place. `on_epoch` sees each log record as it is made.
pub fn train(
    mut model: Model<f32>,
    train_set: &[LabeledMel],
    validation: &[LabeledMel],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut opt = Adam::<f32>::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut ctx = Ctx::train(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, Vec<Vec<f32>>)> = None;
    let val_truth: Vec<Quadrant> = validation.iter().map(|c| c.label).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut preds = Vec::with_capacity(order.len());
        let mut truth = Vec::with_capacity(order.len());
        for chunk in order.chunks(cfg.batch_size) {
            let mels: Vec<&Grid> = chunk.iter().map(|&i| &train_set[i].mel).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set[i].label.index()).collect();
            let x: Tensor<f32> = batch_tensor(&mels)?;
            let y = model.forward(&x, &mut ctx)?;
            let (loss, dy) = softmax_cross_entropy_batch(&y, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss} in epoch {epoch}")));
            }
            model.backward(&dy)?;
            opt.step(&mut model.params_mut());
            loss_sum += loss as f64 * chunk.len() as f64;
            for (s, &i) in chunk.iter().enumerate() {
                let row: Vec<f64> = y.sample(s).iter().map(|&v| v as f64).collect();
                preds.push(Quadrant::ALL[argmax(&row)]);
                truth.push(train_set[i].label);
            }
        }
        let rec = split_record(epoch, "train", loss_sum / order.len() as f64, &preds, &truth)?;
        on_epoch(&rec);
        log.push(rec);

        if !validation.is_empty() {
            let logits = predict_logits(&mut model, validation, cfg.batch_size)?;
            let mut vloss = 0.0;
            let mut vpred = Vec::with_capacity(logits.len());
            for (z, c) in logits.iter().zip(validation) {
                vloss += softmax_cross_entropy(z, c.label.index())?.0;
                vpred.push(Quadrant::ALL[argmax(z)]);
            }
            let rec = split_record(epoch, "validation", vloss / logits.len() as f64, &vpred, &val_truth)?;
            on_epoch(&rec);
            let better = best
                .as_ref()
                .is_none_or(|(f, l, _, _)| rec.f1 > *f || (rec.f1 == *f && rec.loss < *l));
            if better {
                best = Some((rec.f1, rec.loss, epoch, snapshot(&model)));
            }
            log.push(rec);
        }
    }
    let (best_epoch, best_validation_f1) = match best {
        Some((f, _, e, snap)) => {
            restore(&mut model, &snap);
            (e, Some(f))
        }
        None => (cfg.epochs, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_validation_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{ArchitectureSpec, Variant};
    use super::*;
    use crate::harmonics::BlinderSet;

    fn tiny_model(seed: u64) -> Model<f32> {
        let spec = ArchitectureSpec {
            variant: Variant::Harmonics,
            channels: 4,
            n_mels: 8,
            dropout_rate: 0.0,
            ..Default::default()
        };
        let cols = (0..12)
            .map(|p| (0..8).map(|r| if (r + p) % 3 == 0 { 1.0 } else { 0.3 }).collect())
            .collect();
        Model::with_blinders(&spec, &BlinderSet::from_weights(cols).unwrap(), seed).unwrap()
    }

    /// Four clips whose energy sits in a different pair of rows each.
    fn memorization_set() -> Vec<LabeledMel> {
        Quadrant::ALL
            .iter()
            .map(|&q| {
                let mut g = Grid::zeros(8, 6);
                for c in 0..6 {
                    g.set(2 * q.index(), c, 1.0);
                    g.set(2 * q.index() + 1, c, 0.5);
                }
                LabeledMel {
                    id: q.to_string(),
                    mel: g,
                    label: q,
                }
            })
            .collect()
    }

    #[test]
    fn memorizes_four_points_with_falling_loss() {
        let data = memorization_set();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 4,
            learning_rate: 0.02,
            ..Default::default()
        };
        let out = train(tiny_model(1), &data, &[], &cfg, |_| {}).unwrap();
        let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
        assert!(losses.windows(10).all(|w| w[9] < w[0]), "{losses:?}");
        assert!(losses.last().unwrap() < &0.2, "{losses:?}");
        let mut m = out.model;
        for c in &data {
            assert_eq!(m.predict_label(&c.mel).unwrap(), c.label);
        }
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let data = memorization_set();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            ..Default::default()
        };
        let a = train(tiny_model(3), &data, &data, &cfg, |_| {}).unwrap();
        let b = train(tiny_model(3), &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.log.len(), 10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            train(tiny_model(0), &[], &[], &TrainConfig::default(), |_| {}),
            Err(Error::Input(_))
        ));
        let bad = TrainConfig {
            folds: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
