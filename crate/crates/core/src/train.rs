//! Mini-batch Adam on mean BCE with plateau learning-rate decay, early
//! stopping and best-on-validation parameter selection.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datagen::VisitSequence;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{
    interval_scales, EncoderConfig, FeatureSource, Model, ModelConfig, SequenceInput, VisitInput, CAM_HIDDEN,
};
use crate::nn::{AdamConfig, AdamState, ParamSet, Tensor};
use crate::preprocess::{preprocess_image, PreprocessConfig, RawImage};

/// One labelled eye ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub patient_id: String,
    pub label: u8,
    pub input: SequenceInput,
}

/// Build model inputs from the most recent `timepoints` visits of each record.
///
/// Images are read relative to `base_dir` and preprocessed; visits carrying a
/// `features` vector are used as-is. Interval scales are always attached; the
/// model decides whether to apply them.
pub fn load_examples(
    records: &[VisitSequence],
    base_dir: &Path,
    timepoints: usize,
    preprocess: &PreprocessConfig,
    mode: Execution,
) -> Result<Vec<Example>> {
    preprocess.validate()?;
    exec::try_map_indexed(records.len(), mode, |i| {
        let rec = &records[i];
        if rec.visits.len() < timepoints {
            return Err(Error::Input(format!(
                "eye {} has {} observed visits, {timepoints} required",
                rec.id,
                rec.visits.len()
            )));
        }
        let recent = &rec.visits[rec.visits.len() - timepoints..];
        let times: Vec<f64> = recent.iter().map(|v| v.time).collect();
        let scales = interval_scales(&times, rec.prediction_time)?;
        let visits = recent
            .iter()
            .map(|v| match &v.features {
                Some(f) => Ok(VisitInput::Features(f.clone())),
                None => {
                    let raw = RawImage::read_ppm(&base_dir.join(&v.image))?;
                    preprocess_image(&raw, rec.eye, preprocess)
                        .map(VisitInput::Image)
                        .map_err(|e| Error::Preprocess(format!("{}: {e}", v.image)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Example {
            id: rec.id.clone(),
            patient_id: rec.patient_id.clone(),
            label: rec.label,
            input: SequenceInput {
                visits,
                scales: scales.as_slice().to_vec(),
            },
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Observed visits consumed; 1 selects the single-image baseline.
    pub timepoints: usize,
    pub interval_scaling: bool,
    pub lr: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplier on the loss of positive examples; `None` is plain BCE.
    pub pos_weight: Option<f64>,
    /// GRU hidden size.
    pub hidden: usize,
    /// Add the dense readout used for class activation maps.
    pub cam_head: bool,
    pub encoder: EncoderConfig,
    pub preprocess: PreprocessConfig,
    /// Feature length when the manifest supplies precomputed vectors.
    pub external_features: Option<usize>,
    /// Seed of the patient-level train/validation/test split.
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            timepoints: 3,
            interval_scaling: true,
            lr: 1e-4,
            plateau_patience: 10,
            lr_factor: 2.0 / 3.0,
            early_stop_patience: 25,
            min_delta: 1e-6,
            max_epochs: 60,
            batch_size: 16,
            seed: 0,
            pos_weight: None,
            hidden: 1,
            cam_head: false,
            encoder: EncoderConfig::default(),
            preprocess: PreprocessConfig::default(),
            external_features: None,
            split_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=3).contains(&self.timepoints) {
            return bad(format!("timepoints must be 1, 2 or 3, got {}", self.timepoints));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} outside (0, 1)", self.lr_factor));
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta {} must be non-negative", self.min_delta));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive".into());
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("pos_weight {w} must be positive"));
            }
        }
        if self.timepoints == 1 && self.cam_head {
            return bad("the CAM head needs the recurrent model (timepoints ≥ 2)".into());
        }
        self.preprocess.validate()?;
        if self.external_features.is_none() && self.encoder.input_size != self.preprocess.target_size {
            return bad(format!(
                "encoder input_size {} differs from preprocess target_size {}",
                self.encoder.input_size, self.preprocess.target_size
            ));
        }
        self.model_config().validate()
    }

    /// Architecture selected by this configuration.
    pub fn model_config(&self) -> ModelConfig {
        let source = match self.external_features {
            Some(features) => FeatureSource::External { features },
            None => FeatureSource::Encoder(self.encoder.clone()),
        };
        if self.timepoints == 1 && !self.cam_head {
            return ModelConfig {
                source,
                ..ModelConfig::single_image(self.encoder.clone())
            };
        }
        let hidden = if self.cam_head && self.hidden == 1 {
            CAM_HIDDEN
        } else {
            self.hidden
        };
        ModelConfig {
            timepoints: self.timepoints,
            interval_scaling: self.interval_scaling,
            source,
            hidden,
            cam_head: self.cam_head,
            ..ModelConfig::longitudinal(self.timepoints, self.encoder.clone())
        }
    }
}

/// Plateau decay and early stopping driven by validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    initial: f64,
    factor: f64,
    patience: usize,
    stop_patience: usize,
    min_delta: f64,
    reductions: i32,
    best: f64,
    since_reduction_or_best: usize,
    since_best: usize,
}

impl LrSchedule {
    pub fn new(config: &TrainConfig) -> Self {
        LrSchedule {
            initial: config.lr,
            factor: config.lr_factor,
            patience: config.plateau_patience,
            stop_patience: config.early_stop_patience,
            min_delta: config.min_delta,
            reductions: 0,
            best: f64::INFINITY,
            since_reduction_or_best: 0,
            since_best: 0,
        }
    }

    /// `initial · factor^k` after `k` reductions.
    pub fn lr(&self) -> f64 {
        self.initial * self.factor.powi(self.reductions)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record one epoch's validation loss; returns `(lr for the next epoch, stop)`
    /// and whether this loss is a new best.
    pub fn step(&mut self, val_loss: f64) -> (f64, bool, bool) {
        let improved = val_loss < self.best - self.min_delta;
        if improved {
            self.best = val_loss;
            self.since_best = 0;
            self.since_reduction_or_best = 0;
        } else {
            self.since_best += 1;
            self.since_reduction_or_best += 1;
            if self.since_reduction_or_best >= self.patience {
                self.reductions += 1;
                self.since_reduction_or_best = 0;
            }
        }
        (self.lr(), self.since_best >= self.stop_patience, improved)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Seconds since training started; the only non-deterministic field.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,wall_time_s\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.6e},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.wall_time
            ));
        }
        out
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map(|e| e.val_loss)
    }
}

/// Provenance stored in the checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub train_eyes: usize,
    pub val_eyes: usize,
}

impl TrainMeta {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ck.metadata.clone())
            .map_err(|e| Error::Checkpoint(format!("checkpoint lacks training metadata: {e}")))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Mean BCE of `model` over `examples`.
pub fn mean_loss(model: &Model, examples: &[Example], mode: Execution) -> Result<f64> {
    let probs = predict_all(model, examples, mode)?;
    let losses: Vec<f64> = probs
        .iter()
        .zip(examples)
        .map(|(&p, e)| crate::nn::bce_loss(p, f64::from(e.label)))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn predict_all(model: &Model, examples: &[Example], mode: Execution) -> Result<Vec<f64>> {
    exec::try_map_indexed(examples.len(), mode, |i| model.predict_proba(&examples[i].input))
}

fn check_classes(examples: &[Example], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Config(format!("{what} split is empty")));
    }
    let positives = examples.iter().filter(|e| e.label == 1).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::Config(format!(
            "{what} split has a single class ({positives} of {} positive)",
            examples.len()
        )));
    }
    Ok(())
}

/// Sum per-example gradients of one batch in index order and average.
fn batch_gradient(
    model: &Model,
    batch: &[&Example],
    pos_weight: Option<f64>,
    mode: Execution,
) -> Result<(Vec<Tensor>, f64)> {
    let per_example = exec::try_map_indexed(batch.len(), mode, |i| {
        model.loss_and_grads(&batch[i].input, f64::from(batch[i].label), pos_weight)
    })?;
    let scale = 1.0 / batch.len() as f64;
    let mut total: Vec<Tensor> = model.params().tensors().map(|t| Tensor::zeros(t.shape())).collect();
    let mut loss = 0.0;
    for ex in &per_example {
        loss += ex.loss;
        for (acc, g) in total.iter_mut().zip(&ex.grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
    }
    for t in &mut total {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    Ok((total, loss))
}

/// Log-odds of the positive fraction. Starting the output bias here means
/// early updates need not bend the encoder to fit the base rate, which
/// otherwise saturates the recurrent head.
pub fn prior_logit(examples: &[Example]) -> f64 {
    let pos = examples.iter().filter(|e| e.label == 1).count() as f64;
    let neg = examples.len() as f64 - pos;
    (pos / neg).ln().clamp(-PRIOR_LOGIT_BOUND, PRIOR_LOGIT_BOUND)
}

const PRIOR_LOGIT_BOUND: f64 = 20.0;

/// Train from a fresh initialization. `progress` receives each epoch's record.
pub fn train(
    config: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    mode: Execution,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_classes(train_set, "training")?;
    if val_set.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut model = Model::init(config.model_config(), config.seed)?;
    model.set_output_bias(prior_logit(train_set));
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut schedule = LrSchedule::new(config);
    let mut history = TrainHistory::default();
    let mut best: Option<ParamSet> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = Instant::now();

    for epoch in 1..=config.max_epochs {
        let lr = schedule.lr();
        adam.set_lr(lr);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (grads, loss) = batch_gradient(&model, &batch, config.pos_weight, mode)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite training loss {loss}"),
                });
            }
            adam.update(model.params_mut(), &grads).map_err(|e| Error::Divergence {
                epoch,
                detail: e.to_string(),
            })?;
            loss_sum += loss;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = mean_loss(&model, val_set, mode)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite validation loss {val_loss}"),
            });
        }
        let (_, stop, improved) = schedule.step(val_loss);
        if improved {
            best = Some(model.params().clone());
            history.best_epoch = epoch;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_time: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        history.epochs.push(record);
        if stop {
            history.stopped_early = true;
            break;
        }
    }

    let params = best.ok_or_else(|| Error::Internal("no epoch produced a finite validation loss".into()))?;
    let model = Model::from_params(config.model_config(), params)?;
    let meta = TrainMeta {
        config: config.clone(),
        best_epoch: history.best_epoch,
        best_val_loss: history.best_val_loss().expect("best epoch recorded"),
        epochs_run: history.epochs.len(),
        train_eyes: train_set.len(),
        val_eyes: val_set.len(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            metadata: serde_json::to_value(meta).expect("metadata serializes"),
        },
        history,
    })
}
