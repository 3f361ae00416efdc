use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, lit, AdamConfig, Adam, Checkpoint, Model, ModelSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kinlab::NUM_CLASSES;
use crate::metrics::evaluate;
use crate::synthgen::stream_rng;

const STREAM_SHUFFLE: u64 = 4;
/// Examples per gradient task; partial sums are added in task order.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassWeighting {
    Uniform,
    InverseFrequency,
}

impl fmt::Display for ClassWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassWeighting::Uniform => "uniform",
            ClassWeighting::InverseFrequency => "inverse_frequency",
        })
    }
}

impl FromStr for ClassWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ClassWeighting::Uniform),
            "inverse_frequency" => Ok(ClassWeighting::InverseFrequency),
            _ => Err(Error::Config(format!("unknown class weighting `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam: AdamConfig,
    pub class_weights: ClassWeighting,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 100,
            adam: AdamConfig::default(),
            class_weights: ClassWeighting::InverseFrequency,
            seed: 0,
            patience: Some(20),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be >= 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("train.patience must be >= 1 when set".into()));
        }
        self.adam.validate()
    }
}

/// Inverse-frequency weights `N / (K * N_k)`; absent classes get 0.
pub fn class_weights(counts: &[usize; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let n: usize = counts.iter().sum();
    counts.map(|c| {
        if c == 0 {
            0.0
        } else {
            n as f64 / (NUM_CLASSES * c) as f64
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub val_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn check_dataset(spec: &ModelSpec, ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyResult(format!("{what} set is empty")));
    }
    if ds.n_channels != spec.channels || ds.window_len != spec.window {
        return Err(Error::Shape {
            expected: format!("{} x {}", spec.channels, spec.window),
            actual: format!("{} x {} ({what} set)", ds.n_channels, ds.window_len),
        });
    }
    Ok(())
}

/// Predicted class per example: argmax of the probabilities, lowest index on
/// ties.
pub fn predict(model: &Model<f32>, examples: &[&[f32]]) -> Result<Vec<usize>> {
    let parts: Vec<Vec<usize>> = examples
        .par_chunks(64)
        .map(|chunk| Ok(model.probabilities(chunk)?.iter().map(|p| argmax(p)).collect()))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

pub fn predict_dataset(model: &Model<f32>, ds: &Dataset) -> Result<Vec<usize>> {
    let xs: Vec<&[f32]> = ds.examples.iter().map(|e| e.window.as_slice()).collect();
    predict(model, &xs)
}

/// Trains from a seeded initialisation, keeping the parameters with the
/// best validation Macro-F1 (earliest epoch on ties).
pub fn train(spec: ModelSpec, cfg: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    check_dataset(&spec, train_set, "training")?;
    check_dataset(&spec, val_set, "validation")?;
    let labels = train_set.class_indices();
    let val_labels = val_set.class_indices();
    let weights: [f32; NUM_CLASSES] = match cfg.class_weights {
        ClassWeighting::Uniform => [1.0; NUM_CLASSES],
        ClassWeighting::InverseFrequency => class_weights(&train_set.class_counts()).map(|w| w as f32),
    };
    let mut model = Model::<f32>::new(spec, cfg.seed)?;
    let mut opt = Adam::new(model.params.len(), cfg.adam);
    let mut rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=cfg.max_epochs {
        let fail = |e: Error| Error::Training {
            epoch,
            msg: e.to_string(),
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let partial: Vec<(f32, Vec<f32>)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|idx| {
                    let xs: Vec<&[f32]> = idx.iter().map(|&i| train_set.examples[i].window.as_slice()).collect();
                    let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                    model.loss_sum_and_grad(&xs, &ys, &weights)
                })
                .collect::<Result<_>>()
                .map_err(fail)?;
            let mut grad = vec![0.0f32; model.params.len()];
            let mut batch_loss = 0.0f32;
            for (l, g) in &partial {
                batch_loss += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            if !batch_loss.is_finite() {
                return Err(fail(Error::Numerical("loss".into())));
            }
            let inv = lit::<f32>(1.0 / batch.len() as f64);
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut model.params, &grad).map_err(fail)?;
            loss_sum += batch_loss as f64;
        }
        let preds = predict_dataset(&model, val_set).map_err(fail)?;
        let rep = evaluate(&val_labels, &preds, NUM_CLASSES)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_macro_f1: rep.macro_f1,
            val_balanced_accuracy: rep.balanced_accuracy,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} val macro-F1 {:.4} balanced acc {:.4}",
            entry.train_loss,
            entry.val_macro_f1,
            entry.val_balanced_accuracy
        );
        log.push(entry);
        if best.as_ref().is_none_or(|b| rep.macro_f1 > b.val_macro_f1) {
            best = Some(Checkpoint {
                model: model.clone(),
                epoch,
                val_macro_f1: rep.macro_f1,
            });
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.epoch);
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_frequency_weights() {
        let w = class_weights(&[60, 30, 10]);
        assert!((w[0] - 0.5556).abs() < 1e-4);
        assert!((w[1] - 1.1111).abs() < 1e-4);
        assert!((w[2] - 3.3333).abs() < 1e-4);
        assert_eq!(class_weights(&[5, 5, 5]), [1.0; 3]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        let adam = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        assert!(TrainConfig { adam, ..TrainConfig::default() }.validate().is_err());
    }
}
