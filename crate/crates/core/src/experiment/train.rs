//! Early-stopped minibatch training of one classifier head.
//!
//! Every epoch shuffles the training set, walks it in minibatches with
//! fresh dropout masks, then measures validation accuracy with dropout
//! off. Training stops after `patience` consecutive epochs without a
//! strict accuracy improvement (or at `max_epochs`), and the returned
//! model carries the parameters of the best validation epoch. The
//! untrained model is scored first as the epoch-0 incumbent: with its
//! zero-initialized output layer it predicts the majority class, so on
//! data with no usable signal no epoch strictly improves on it and
//! training falls back to that baseline instead of a noise-fitted net.

use super::{stack_required, ExperimentError};
use crate::corpus::Label;
use crate::encoders::EmbeddingPair;
use crate::heads::{
    base_logit_features, init_head, softmax_cross_entropy, Adam, HeadConfig, HeadModel, Net,
    NetInput,
};
use crate::heads::Architecture;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Fraction of the training set held out for validation.
    pub val_fraction: f64,
    /// Epochs without strict validation-accuracy improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stratify the validation split by label instead of the default plain
    /// random split.
    pub stratify_val: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            val_fraction: 0.30,
            patience: 5,
            max_epochs: 50,
            batch_size: 16,
            learning_rate: 1e-4,
            seed: 0,
            stratify_val: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |detail: String| Err(ExperimentError::BadConfig { detail });
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must be in (0,1), got {}", self.val_fraction));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Patience rule on validation accuracy: a *strict* improvement resets the
/// counter; `patience` consecutive non-improvements stop training. Epochs
/// are 1-based; the best epoch is the earliest one reaching the best value.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record one epoch's validation accuracy; returns true when training
    /// should stop.
    pub fn record(&mut self, epoch: usize, accuracy: f64) -> bool {
        if accuracy > self.best {
            self.best = accuracy;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training examples.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStat>,
    /// 0 means no epoch beat the untrained model's validation accuracy.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Validation accuracy of the untrained model (the epoch-0 incumbent).
    pub baseline_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Feature matrices a head trains on, already stacked batch-first.
enum Inputs {
    Single(Array2<f64>),
    Dual {
        audio: Array2<f64>,
        text: Array2<f64>,
    },
}

impl Inputs {
    fn rows(&self, idx: &[usize]) -> Inputs {
        match self {
            Inputs::Single(x) => Inputs::Single(x.select(Axis(0), idx)),
            Inputs::Dual { audio, text } => Inputs::Dual {
                audio: audio.select(Axis(0), idx),
                text: text.select(Axis(0), idx),
            },
        }
    }

    fn as_net_input(&self) -> NetInput<'_> {
        match self {
            Inputs::Single(x) => NetInput::Single(x),
            Inputs::Dual { audio, text } => NetInput::Dual { audio, text },
        }
    }
}

/// Train one head on embedded examples. LF and AF require `bases` (a trained
/// TO and AO model); the bases stay frozen — LF learns only its combiner
/// over their logits, AF learns nothing and is evaluated once.
pub fn train_model(
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    train_set: &[(&EmbeddingPair, Label)],
    val_set: &[(&EmbeddingPair, Label)],
    bases: Option<(HeadModel, HeadModel)>,
) -> Result<(HeadModel, TrainingLog), ExperimentError> {
    train_config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ExperimentError::BadConfig {
            detail: format!(
                "training needs non-empty splits, got train={} val={}",
                train_set.len(),
                val_set.len()
            ),
        });
    }
    let arch = head_config.architecture;
    let mut model = init_head(head_config, bases)?;

    let targets = |set: &[(&EmbeddingPair, Label)]| -> Vec<usize> {
        set.iter().map(|(_, label)| label.class_index()).collect()
    };
    let train_y = targets(train_set);
    let val_y = targets(val_set);

    if arch == Architecture::AF {
        // Nothing to train: measure validation accuracy of the averaged
        // bases once and return.
        let (audio, text) = matrices(val_set, arch)?;
        let logits = model.logits_batch(audio.as_ref(), text.as_ref(), None)?;
        let val_accuracy = accuracy_of_logits(&logits, &val_y);
        let log = TrainingLog {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_accuracy: val_accuracy,
            baseline_val_accuracy: val_accuracy,
            stopped_early: false,
        };
        return Ok((model, log));
    }

    let train_x = head_inputs(&model, train_set)?;
    let val_x = head_inputs(&model, val_set)?;
    let net = model
        .trainable_net_mut()
        .expect("non-AF heads have a trainable net");
    let log = fit_net(net, &train_x, &train_y, &val_x, &val_y, train_config)?;
    Ok((model, log))
}

fn matrices(
    set: &[(&EmbeddingPair, Label)],
    arch: Architecture,
) -> Result<(Option<Array2<f64>>, Option<Array2<f64>>), ExperimentError> {
    let pairs: Vec<&EmbeddingPair> = set.iter().map(|(p, _)| *p).collect();
    stack_required(&pairs, arch)
}

/// The matrices the trainable net consumes: raw embeddings for TO/AO/EF,
/// frozen-base logit features for LF.
fn head_inputs(
    model: &HeadModel,
    set: &[(&EmbeddingPair, Label)],
) -> Result<Inputs, ExperimentError> {
    let arch = model.architecture();
    let (audio, text) = matrices(set, arch)?;
    Ok(match arch {
        Architecture::TO => Inputs::Single(text.expect("required modality")),
        Architecture::AO => Inputs::Single(audio.expect("required modality")),
        Architecture::EF => Inputs::Dual {
            audio: audio.expect("required modality"),
            text: text.expect("required modality"),
        },
        Architecture::LF => {
            let (to, ao) = model.base_models().expect("LF carries base models");
            let features = base_logit_features(
                to,
                ao,
                audio.as_ref().expect("required modality"),
                text.as_ref().expect("required modality"),
            )?;
            Inputs::Single(features)
        }
        Architecture::AF => unreachable!("AF is handled before input stacking"),
    })
}

fn accuracy_of_logits(logits: &Array2<f64>, targets: &[usize]) -> f64 {
    let correct = logits
        .axis_iter(Axis(0))
        .zip(targets)
        .filter(|(row, &y)| {
            let predicted = usize::from(!(row[0] > row[1]));
            predicted == y
        })
        .count();
    correct as f64 / targets.len() as f64
}

fn fit_net(
    net: &mut Net,
    train_x: &Inputs,
    train_y: &[usize],
    val_x: &Inputs,
    val_y: &[usize],
    config: &TrainConfig,
) -> Result<TrainingLog, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate, &net.layers());
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_params = net.flat_params();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let n = train_y.len();
    let mut order: Vec<usize> = (0..n).collect();

    // Score the untrained net as the incumbent; an epoch only becomes the
    // returned model by strictly improving on it.
    let baseline_logits = net.forward(val_x.as_net_input(), None);
    let baseline_val_accuracy = accuracy_of_logits(&baseline_logits, val_y);
    stopper.record(0, baseline_val_accuracy);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let bx = train_x.rows(batch);
            let by: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let masks = net.sample_masks(batch.len(), &mut rng);
            let (logits, cache) = net.forward_cached(bx.as_net_input(), Some(&masks));
            let (loss, dlogits) = softmax_cross_entropy(&logits, &by);
            if !loss.is_finite() {
                return Err(ExperimentError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    detail: format!("loss={loss}, batch of {}", batch.len()),
                });
            }
            let grads = net.backward(bx.as_net_input(), &cache, Some(&masks), &dlogits);
            adam.step(net.layers_mut(), &grads);
            loss_sum += loss * batch.len() as f64;
        }
        let val_logits = net.forward(val_x.as_net_input(), None);
        let val_accuracy = accuracy_of_logits(&val_logits, val_y);
        epochs.push(EpochStat {
            epoch,
            train_loss: loss_sum / n as f64,
            val_accuracy,
        });
        let stop = stopper.record(epoch, val_accuracy);
        if stopper.best_epoch() == epoch {
            best_params = net.flat_params();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    net.set_flat_params(&best_params);
    Ok(TrainingLog {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_accuracy: stopper.best_accuracy(),
        baseline_val_accuracy,
        stopped_early,
    })
}
