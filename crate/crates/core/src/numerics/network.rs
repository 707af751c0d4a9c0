//! The fixed CNN-BiLSTM graph: embedding -> same-padded convolution with
//! rectifier -> bidirectional LSTM -> pooling -> logistic output.
//!
//! A sequence is processed over its non-pad prefix only, so trailing padding
//! cannot influence the prediction.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    bce_loss, bilstm_backward, bilstm_forward, conv1d_backward, conv1d_forward, embedding_forward, pooled_output, ConvCache, LstmParams, LstmTrace,
};
use super::{sigmoid, NumericsError, ParamSet, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub vocab: usize,
    pub embed: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
}

/// How the per-step BiLSTM outputs are reduced to one vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Elementwise max over non-pad steps.
    #[default]
    Max,
    /// Last forward state next to the first backward state.
    FinalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `V x d_e`; row 0 (pad) stays zero.
    pub embedding: Tensor,
    /// `k x d_e x F`
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    /// `2H`
    pub out_w: Tensor,
    /// `[1]`
    pub out_b: Tensor,
}

impl ParamSet for LayerParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("embedding".to_string(), &self.embedding),
            ("conv.W".to_string(), &self.conv_w),
            ("conv.b".to_string(), &self.conv_b),
        ];
        v.extend(self.fwd.named("lstm_fwd"));
        v.extend(self.bwd.named("lstm_bwd"));
        v.push(("out.w".to_string(), &self.out_w));
        v.push(("out.b".to_string(), &self.out_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![
            ("embedding".to_string(), &mut self.embedding),
            ("conv.W".to_string(), &mut self.conv_w),
            ("conv.b".to_string(), &mut self.conv_b),
        ];
        v.extend(self.fwd.named_mut("lstm_fwd"));
        v.extend(self.bwd.named_mut("lstm_bwd"));
        v.push(("out.w".to_string(), &mut self.out_w));
        v.push(("out.b".to_string(), &mut self.out_b));
        v
    }
}

fn glorot(rng: &mut seed::Rng, t: &mut Tensor, fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

/// Q factor of a seeded Gaussian square matrix, sign-fixed so the result is
/// unique for a given draw.
fn orthogonal(rng: &mut seed::Rng, t: &mut Tensor) {
    let n = t.rows();
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    for i in 0..n {
        let sign = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            // column i of Q, scaled, lands in column i of the row-major tensor
            t.data_mut()[j * n + i] = q[(j, i)] * sign;
        }
    }
}

impl LayerParams {
    pub fn zeros(d: NetDims) -> Self {
        Self {
            embedding: Tensor::zeros(&[d.vocab, d.embed]),
            conv_w: Tensor::zeros(&[d.kernel, d.embed, d.filters]),
            conv_b: Tensor::zeros(&[d.filters]),
            fwd: LstmParams::zeros(d.filters, d.hidden),
            bwd: LstmParams::zeros(d.filters, d.hidden),
            out_w: Tensor::zeros(&[2 * d.hidden]),
            out_b: Tensor::zeros(&[1]),
        }
    }

    /// Seeded initialization: uniform Glorot for the embedding, the kernel and
    /// every dense matrix; orthogonal recurrent matrices; forget bias 1.
    pub fn init(d: NetDims, seed: u64) -> Self {
        let mut p = Self::zeros(d);
        let rng_for = |name: &str| seed::rng_for(seed, name);
        glorot(&mut rng_for("embedding"), &mut p.embedding, d.vocab, d.embed);
        p.embedding.row_mut(0).fill(0.0);
        glorot(&mut rng_for("conv.W"), &mut p.conv_w, d.kernel * d.embed, d.kernel * d.filters);
        for (dir, lstm) in [("fwd", &mut p.fwd), ("bwd", &mut p.bwd)] {
            for g in 0..4 {
                glorot(&mut rng_for(&format!("{dir}.W{g}")), &mut lstm.w[g], d.filters, d.hidden);
                orthogonal(&mut rng_for(&format!("{dir}.U{g}")), &mut lstm.u[g]);
            }
            lstm.b[1].fill(1.0);
        }
        glorot(&mut rng_for("out.w"), &mut p.out_w, 2 * d.hidden, 1);
        p
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            vocab: self.embedding.shape()[0],
            embed: self.embedding.shape()[1],
            filters: self.conv_b.len(),
            kernel: self.conv_w.shape()[0],
            hidden: self.fwd.hidden(),
        }
    }

    /// Checks every array against the shapes implied by `d`, naming the first
    /// offender.
    pub fn check_shapes(&self, d: NetDims) -> Result<(), NumericsError> {
        let want = Self::zeros(d);
        for ((name, have), (_, expected)) in self.tensors().iter().zip(want.tensors()) {
            have.expect_shape(name, expected.shape())?;
        }
        Ok(())
    }

    /// Rebuilds parameters from named arrays (e.g. a checkpoint).
    pub fn from_named(d: NetDims, arrays: &[(String, Tensor)]) -> Result<Self, NumericsError> {
        let mut p = Self::zeros(d);
        for (name, slot) in p.tensors_mut() {
            let src = arrays
                .iter()
                .find(|a| a.0 == name)
                .ok_or_else(|| NumericsError::MissingArray(name.clone()))?;
            src.1.expect_shape(&name, slot.shape())?;
            *slot = src.1.clone();
        }
        Ok(p)
    }
}

/// Multiplicative dropout masks for one sequence (entries 0 or `1/keep`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// `L x F`, applied to the convolution output.
    pub conv: Vec<f64>,
    /// `2H`, applied to the pooled vector.
    pub pooled: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample(rng: &mut seed::Rng, steps: usize, d: NetDims, rate: f64) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
        };
        let conv = draw(steps * d.filters);
        let pooled = draw(2 * d.hidden);
        Self { conv, pooled }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct SeqCache {
    ids: Vec<usize>,
    emb: Tensor,
    conv: ConvCache,
    lstm_in: Tensor,
    traces: (LstmTrace, LstmTrace),
    /// Source step for each component of the pooled vector.
    source: Vec<usize>,
    pub features: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

/// Forward pass over the content ids of one sequence (no pad ids).
pub fn forward_sequence(
    p: &LayerParams,
    ids: &[usize],
    pooling: Pooling,
    dropout: Option<&DropoutMasks>,
) -> Result<SeqCache, NumericsError> {
    if ids.is_empty() {
        return Err(NumericsError::AllPad);
    }
    let steps = ids.len();
    let hidden = p.fwd.hidden();
    let emb = embedding_forward(ids, &p.embedding)?;
    let conv = conv1d_forward(&emb, &p.conv_w, &p.conv_b);
    let mut lstm_in = conv.out.clone();
    if let Some(m) = dropout {
        for (v, k) in lstm_in.data_mut().iter_mut().zip(&m.conv) {
            *v *= k;
        }
    }
    let (hseq, tf, tb) = bilstm_forward(&lstm_in, &p.fwd, &p.bwd);
    let (pooled, source) = match pooling {
        Pooling::Max => {
            let out = pooled_output(&hseq, &vec![true; steps], &p.out_w, p.out_b.data()[0])?;
            (out.pooled, out.argmax)
        }
        Pooling::FinalState => {
            let mut v = tf.h_at(steps - 1).to_vec();
            v.extend_from_slice(tb.h_at(0));
            let src = (0..2 * hidden).map(|j| if j < hidden { steps - 1 } else { 0 }).collect();
            (v, src)
        }
    };
    let mut features = pooled;
    if let Some(m) = dropout {
        for (v, k) in features.iter_mut().zip(&m.pooled) {
            *v *= k;
        }
    }
    let logit = features.iter().zip(p.out_w.data()).map(|(a, b)| a * b).sum::<f64>() + p.out_b.data()[0];
    Ok(SeqCache {
        ids: ids.to_vec(),
        emb,
        conv,
        lstm_in,
        traces: (tf, tb),
        source,
        features,
        logit,
        prob: sigmoid(logit),
    })
}

/// Parameter gradients of one sequence; the embedding part is kept sparse.
#[derive(Debug, Clone)]
pub struct SequenceGrads {
    pub embedding_rows: Vec<(usize, Vec<f64>)>,
    /// Same layout as [`LayerParams`] with a `0 x d_e` embedding.
    pub body: LayerParams,
}

impl SequenceGrads {
    /// Adds into a dense gradient of the full parameter set.
    pub fn accumulate_into(&self, grads: &mut LayerParams) {
        for (id, row) in &self.embedding_rows {
            for (g, v) in grads.embedding.row_mut(*id).iter_mut().zip(row) {
                *g += v;
            }
        }
        let body = self.body.tensors();
        for ((name, g), (_, b)) in grads.tensors_mut().into_iter().zip(body) {
            if name != "embedding" {
                g.add_assign(b);
            }
        }
    }
}

/// Backward pass of one sequence given `d loss / d logit`.
pub fn backward_sequence(p: &LayerParams, cache: &SeqCache, dlogit: f64, dropout: Option<&DropoutMasks>) -> SequenceGrads {
    let d = p.dims();
    let steps = cache.ids.len();
    let mut body = LayerParams::zeros(NetDims { vocab: 0, ..d });
    for (g, f) in body.out_w.data_mut().iter_mut().zip(&cache.features) {
        *g = dlogit * f;
    }
    body.out_b.data_mut()[0] = dlogit;
    let mut dpooled: Vec<f64> = p.out_w.data().iter().map(|w| dlogit * w).collect();
    if let Some(m) = dropout {
        for (v, k) in dpooled.iter_mut().zip(&m.pooled) {
            *v *= k;
        }
    }
    let mut dhseq = Tensor::zeros(&[steps, 2 * d.hidden]);
    for (j, (&t, g)) in cache.source.iter().zip(&dpooled).enumerate() {
        dhseq.row_mut(t)[j] += g;
    }
    let mut dlstm_in = bilstm_backward(
        &cache.lstm_in,
        &p.fwd,
        &p.bwd,
        (&cache.traces.0, &cache.traces.1),
        &dhseq,
        (&mut body.fwd, &mut body.bwd),
    );
    if let Some(m) = dropout {
        for (v, k) in dlstm_in.data_mut().iter_mut().zip(&m.conv) {
            *v *= k;
        }
    }
    let (demb, dw, db) = conv1d_backward(&cache.emb, &p.conv_w, &cache.conv, &dlstm_in);
    body.conv_w = dw;
    body.conv_b = db;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (t, &id) in cache.ids.iter().enumerate() {
        if id == super::PAD_ID {
            continue;
        }
        match rows.iter_mut().find(|r| r.0 == id) {
            Some(r) => r.1.iter_mut().zip(demb.row(t)).for_each(|(a, b)| *a += b),
            None => rows.push((id, demb.row(t).to_vec())),
        }
    }
    SequenceGrads { embedding_rows: rows, body }
}

/// One labelled example: its content ids and target in {0, 1}.
pub type Example<'a> = (&'a [usize], f64);

/// Mean BCE of a batch. When `grads` is given, the batch gradient is added to
/// it. Returns the loss and each example's probability.
pub fn batch_loss(
    p: &LayerParams,
    batch: &[Example<'_>],
    pooling: Pooling,
    dropout: Option<&[DropoutMasks]>,
    grads: Option<&mut LayerParams>,
) -> Result<(f64, Vec<f64>), NumericsError> {
    let caches = batch
        .par_iter()
        .enumerate()
        .map(|(i, (ids, _))| forward_sequence(p, ids, pooling, dropout.map(|m| &m[i])))
        .collect::<Result<Vec<_>, _>>()?;
    let probs: Vec<f64> = caches.iter().map(|c| c.prob).collect();
    let targets: Vec<f64> = batch.iter().map(|e| e.1).collect();
    let (loss, dprob) = bce_loss(&probs, &targets)?;
    if !loss.is_finite() {
        return Err(NumericsError::NonFinite(loss));
    }
    if let Some(grads) = grads {
        let per_seq: Vec<SequenceGrads> = caches
            .par_iter()
            .enumerate()
            .map(|(i, c)| backward_sequence(p, c, dprob[i] * c.prob * (1.0 - c.prob), dropout.map(|m| &m[i])))
            .collect();
        for g in &per_seq {
            g.accumulate_into(grads);
        }
    }
    Ok((loss, probs))
}

/// Inference probability of one content-id sequence.
pub fn predict_sequence(p: &LayerParams, ids: &[usize], pooling: Pooling) -> Result<f64, NumericsError> {
    Ok(forward_sequence(p, ids, pooling, None)?.prob)
}
