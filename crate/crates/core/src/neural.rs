//! Neural branch: tokenizer, CNN-BiLSTM construction, training with
//! validation monitoring and early stopping, and inference.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{auc, CurvePoint};
use crate::numerics::{
    batch_loss, forward_sequence, AdamConfig, AdamState, DropoutMasks, LayerParams, NetDims, NumericsError, ParamSet,
    Pooling,
};
use crate::textprep::CleanDoc;
use crate::{seed, Label};

pub const PAD_ID: usize = crate::numerics::PAD_ID;
pub const OOV_ID: usize = 1;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("no training documents")]
    NoDocuments,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{set} set is empty")]
    EmptySet { set: &'static str },
    #[error("{set} example {index} has no tokens")]
    AllPad { set: &'static str, index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Token to id map. Id 0 is padding, id 1 is out-of-vocabulary, content ids
/// start at 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerState {
    /// Content tokens in id order; `tokens[i]` has id `i + 2`.
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TokenizerState {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 2)).collect();
        Self { tokens, index }
    }

    /// Vocabulary size including the pad and OOV ids.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }
}

/// Ranks tokens by training frequency (ties lexicographic) and keeps the top
/// `max_vocab - 2`.
pub fn fit_tokenizer(docs: &[CleanDoc], max_vocab: usize) -> Result<TokenizerState, NeuralError> {
    if docs.is_empty() {
        return Err(NeuralError::NoDocuments);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for t in docs.iter().flat_map(|d| &d.tokens) {
        *freq.entry(t.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_vocab.saturating_sub(2));
    Ok(TokenizerState::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect()))
}

/// Fixed-length, post-padded id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedSequence {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

impl PaddedSequence {
    pub fn content(&self) -> &[usize] {
        &self.ids[..self.true_length]
    }

    /// The same content padded to `len` (at least `true_length`).
    pub fn repadded(&self, len: usize) -> Self {
        let mut ids = self.content().to_vec();
        ids.resize(len.max(self.true_length), PAD_ID);
        Self { ids, true_length: self.true_length }
    }
}

/// Keeps the first `max_len` tokens.
pub fn encode_pad(doc: &CleanDoc, tokenizer: &TokenizerState, max_len: usize) -> PaddedSequence {
    let mut ids: Vec<usize> = doc.tokens.iter().take(max_len).map(|t| tokenizer.id(t)).collect();
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    PaddedSequence { ids, true_length }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub max_len: usize,
    pub filters: usize,
    pub kernel: usize,
    pub lstm_units: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_vocab: usize,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            max_len: 50,
            filters: 64,
            kernel: 3,
            lstm_units: 50,
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 20,
            patience: 3,
            val_fraction: 0.1,
            max_vocab: 20_000,
            pooling: Pooling::Max,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("max_len", self.max_len),
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("lstm_units", self.lstm_units),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|p| p.1 == 0) {
            return Err(NeuralError::Config(format!("{name} must be positive")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(NeuralError::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NeuralError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(NeuralError::Config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if self.max_vocab < 3 {
            return Err(NeuralError::Config("max_vocab must be at least 3".into()));
        }
        Ok(())
    }

    pub fn dims(&self, vocab_size: usize) -> NetDims {
        NetDims {
            vocab: vocab_size,
            embed: self.embed_dim,
            filters: self.filters,
            kernel: self.kernel,
            hidden: self.lstm_units,
        }
    }
}

/// Seeded parameters for the configured architecture.
pub fn build_model(config: &ModelConfig, vocab_size: usize) -> Result<LayerParams, NeuralError> {
    config.validate()?;
    if vocab_size < 2 {
        return Err(NeuralError::Config(format!("vocab_size must be at least 2, got {vocab_size}")));
    }
    Ok(LayerParams::init(config.dims(vocab_size), seed::derive(config.seed, "init")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<CurvePoint>,
    /// Index into `epochs` of the lowest validation loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn best(&self) -> &CurvePoint {
        &self.epochs[self.best_epoch]
    }
}

/// Validation-loss watcher. Training stops once more than `patience`
/// consecutive epochs fail to improve on the best loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        StopDecision { improved, stop: self.bad_epochs > self.patience }
    }
}

pub type LabeledSequence = (PaddedSequence, Label);

fn check_set(set: &[LabeledSequence], name: &'static str) -> Result<(), NeuralError> {
    if set.is_empty() {
        return Err(NeuralError::EmptySet { set: name });
    }
    match set.iter().position(|s| s.0.true_length == 0) {
        Some(index) => Err(NeuralError::AllPad { set: name, index }),
        None => Ok(()),
    }
}

/// Inference-mode loss and AUC over a whole set.
pub fn evaluate_set(params: &LayerParams, set: &[LabeledSequence], pooling: Pooling) -> Result<(f64, Option<f64>), NeuralError> {
    let batch: Vec<(&[usize], f64)> = set.iter().map(|(s, y)| (s.content(), f64::from(*y))).collect();
    let (loss, probs) = batch_loss(params, &batch, pooling, None, None)?;
    let labels: Vec<Label> = set.iter().map(|s| s.1).collect();
    Ok((loss, auc(&labels, &probs).ok()))
}

/// Mini-batch Adam training with per-epoch monitoring and early stopping on
/// validation loss. Returns the parameters of the best epoch.
pub fn train(
    params: LayerParams,
    train_set: &[LabeledSequence],
    val_set: &[LabeledSequence],
    config: &ModelConfig,
) -> Result<(LayerParams, TrainingLog), NeuralError> {
    config.validate()?;
    check_set(train_set, "training")?;
    check_set(val_set, "validation")?;
    let dims = params.dims();
    let adam_cfg = AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() };
    let mut params = params;
    let mut adam = AdamState::new(&params, adam_cfg);
    let mut grads = params.zeros_like();
    let mut shuffle_rng = seed::rng_for(config.seed, "shuffle");
    let mut dropout_rng = seed::rng_for(config.seed, "dropout");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut log = TrainingLog { epochs: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut best_params = params.clone();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&[usize], f64)> =
                chunk.iter().map(|&i| (train_set[i].0.content(), f64::from(train_set[i].1))).collect();
            let masks: Option<Vec<DropoutMasks>> = (config.dropout > 0.0).then(|| {
                batch.iter().map(|(ids, _)| DropoutMasks::sample(&mut dropout_rng, ids.len(), dims, config.dropout)).collect()
            });
            grads.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
            match batch_loss(&params, &batch, config.pooling, masks.as_deref(), Some(&mut grads)) {
                Ok(_) => {}
                Err(NumericsError::NonFinite(_)) => return Err(NeuralError::NonFinite { epoch, batch: b + 1 }),
                Err(e) => return Err(e.into()),
            }
            adam.update(&mut params, &grads)?;
            // the pad row never receives gradient, but keep it exactly zero
            params.embedding.row_mut(PAD_ID).fill(0.0);
        }
        let (train_loss, train_auc) = evaluate_set(&params, train_set, config.pooling)?;
        let (val_loss, val_auc) = evaluate_set(&params, val_set, config.pooling)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(NeuralError::NonFinite { epoch, batch: 0 });
        }
        log.epochs.push(CurvePoint { epoch, train_loss, val_loss, train_auc, val_auc });
        let decision = stopper.observe(val_loss);
        if decision.improved {
            log.best_epoch = log.epochs.len() - 1;
            best_params = params.clone();
        }
        if decision.stop {
            log.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    Ok((best_params, log))
}

/// Inference probabilities, one per sequence, in input order.
pub fn predict_proba(params: &LayerParams, sequences: &[PaddedSequence], pooling: Pooling) -> Result<Vec<f64>, NeuralError> {
    sequences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            if s.true_length == 0 {
                return Err(NeuralError::AllPad { set: "prediction", index });
            }
            Ok(forward_sequence(params, s.content(), pooling, None)?.prob)
        })
        .collect()
}
