//! Individual layers with hand-written backward passes.
//!
//! Matrices multiply row vectors from the left: a gate pre-activation is
//! `x W + h U + b` with `W: in x H` and `U: H x H`.

use serde::{Deserialize, Serialize};

use super::{sigmoid, NumericsError, ParamSet, Tensor};

pub const PAD_ID: usize = 0;

// ---------------------------------------------------------------- embedding

/// Looks up one row per id. The pad id yields a zero row whatever the table
/// holds there.
pub fn embedding_forward(ids: &[usize], table: &Tensor) -> Result<Tensor, NumericsError> {
    let (vocab, dim) = (table.rows(), table.row_len());
    let mut out = Tensor::zeros(&[ids.len(), dim]);
    for (t, &id) in ids.iter().enumerate() {
        if id >= vocab {
            return Err(NumericsError::IndexOutOfRange { id, vocab });
        }
        if id != PAD_ID {
            out.row_mut(t).copy_from_slice(table.row(id));
        }
    }
    Ok(out)
}

/// Adds `dout` rows into the rows of `grad_table` they were read from. The
/// pad row never receives gradient.
pub fn embedding_backward(ids: &[usize], dout: &Tensor, grad_table: &mut Tensor) {
    for (t, &id) in ids.iter().enumerate() {
        if id != PAD_ID {
            for (g, d) in grad_table.row_mut(id).iter_mut().zip(dout.row(t)) {
                *g += d;
            }
        }
    }
}

// -------------------------------------------------------------- convolution

/// Output of [`conv1d_forward`]; `pre` is kept for the rectifier's backward.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub pre: Tensor,
    pub out: Tensor,
}

/// Same-length 1-D convolution with `floor(k/2)` zero padding each side and a
/// rectifier: `out[t] = relu(b + sum_j x[t + j - k/2] W[j])`.
///
/// `x: T x C`, `w: k x C x F`, `b: F`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> ConvCache {
    let (steps, chans) = (x.rows(), x.row_len());
    let (k, filters) = (w.shape()[0], w.shape()[2]);
    debug_assert_eq!(w.shape()[1], chans);
    let half = k / 2;
    let mut pre = Tensor::zeros(&[steps, filters]);
    let wd = w.data();
    for t in 0..steps {
        let row = pre.row_mut(t);
        row.copy_from_slice(b.data());
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(half).filter(|&s| s < steps) else { continue };
            for (c, &xv) in x.row(src).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[(j * chans + c) * filters..(j * chans + c + 1) * filters];
                for (r, &wv) in row.iter_mut().zip(wrow) {
                    *r += xv * wv;
                }
            }
        }
    }
    let mut out = pre.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    ConvCache { pre, out }
}

/// Gradients of [`conv1d_forward`] for the input, the kernel and the bias.
/// The rectifier's subgradient at 0 is taken as 0.
pub fn conv1d_backward(x: &Tensor, w: &Tensor, cache: &ConvCache, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (steps, chans) = (x.rows(), x.row_len());
    let (k, filters) = (w.shape()[0], w.shape()[2]);
    let half = k / 2;
    let mut dpre = dout.clone();
    for (d, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[filters]);
    let wd = w.data();
    for t in 0..steps {
        let g = dpre.row(t);
        for (acc, v) in db.data_mut().iter_mut().zip(g) {
            *acc += v;
        }
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(half).filter(|&s| s < steps) else { continue };
            let xrow = x.row(src);
            for c in 0..chans {
                let base = (j * chans + c) * filters;
                let wrow = &wd[base..base + filters];
                let mut acc = 0.0;
                for (wv, gv) in wrow.iter().zip(g) {
                    acc += wv * gv;
                }
                dx.row_mut(src)[c] += acc;
                let xv = xrow[c];
                if xv != 0.0 {
                    for (dwv, gv) in dw.data_mut()[base..base + filters].iter_mut().zip(g) {
                        *dwv += xv * gv;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// --------------------------------------------------------------------- lstm

/// Gate order used by every per-gate array: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// One direction's weights: `w[g]: F x H`, `u[g]: H x H`, `b[g]: H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Tensor::zeros(&[input, hidden])),
            u: std::array::from_fn(|_| Tensor::zeros(&[hidden, hidden])),
            b: std::array::from_fn(|_| Tensor::zeros(&[hidden])),
        }
    }

    pub fn input(&self) -> usize {
        self.w[0].shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.b[0].len()
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor)> {
        let mut v = Vec::with_capacity(12);
        for (kind, arr) in [("W", &self.w), ("U", &self.u), ("b", &self.b)] {
            for (g, t) in GATES.iter().zip(arr) {
                v.push((format!("{prefix}.{kind}_{g}"), t));
            }
        }
        v
    }

    pub(crate) fn named_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor)> {
        let mut v = Vec::with_capacity(12);
        for (kind, arr) in [("W", &mut self.w), ("U", &mut self.u), ("b", &mut self.b)] {
            for (g, t) in GATES.iter().zip(arr.iter_mut()) {
                v.push((format!("{prefix}.{kind}_{g}"), t));
            }
        }
        v
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.named("lstm")
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.named_mut("lstm")
    }
}

/// Activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    /// Post-activation gates in [`GATES`] order.
    pub gates: [Vec<f64>; 4],
    pub cell: Vec<f64>,
    pub h: Vec<f64>,
}

fn affine_into(out: &mut [f64], x: &[f64], w: &Tensor) {
    let h = out.len();
    let wd = w.data();
    for (k, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&wd[k * h..(k + 1) * h]) {
            *o += xv * wv;
        }
    }
}

/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `cell = f*cell_prev + i*g`,
/// `h = o * tanh(cell)`.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], cell_prev: &[f64], p: &LstmParams) -> CellState {
    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut a = p.b[g].data().to_vec();
        affine_into(&mut a, x, &p.w[g]);
        affine_into(&mut a, h_prev, &p.u[g]);
        if g == 3 {
            a.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            a.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        a
    });
    let [i, f, o, g] = &gates;
    let cell: Vec<f64> = (0..cell_prev.len()).map(|k| f[k] * cell_prev[k] + i[k] * g[k]).collect();
    let h = (0..cell.len()).map(|k| o[k] * cell[k].tanh()).collect();
    CellState { gates, cell, h }
}

/// Backward through one step. `dh` and `dcell` are the gradients arriving at
/// this step's outputs; parameter gradients are accumulated into `grads`.
/// Returns `(dx, dh_prev, dcell_prev)`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell_backward(
    x: &[f64],
    h_prev: &[f64],
    cell_prev: &[f64],
    state: &CellState,
    p: &LstmParams,
    dh: &[f64],
    dcell: &[f64],
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = dh.len();
    let [i, f, o, g] = &state.gates;
    let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
    let mut dcell_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let tc = state.cell[k].tanh();
        let dc = dcell[k] + dh[k] * o[k] * (1.0 - tc * tc);
        let (di, df, dout, dg) = (dc * g[k], dc * cell_prev[k], dh[k] * tc, dc * i[k]);
        da[0][k] = di * i[k] * (1.0 - i[k]);
        da[1][k] = df * f[k] * (1.0 - f[k]);
        da[2][k] = dout * o[k] * (1.0 - o[k]);
        da[3][k] = dg * (1.0 - g[k] * g[k]);
        dcell_prev[k] = dc * f[k];
    }
    let mut dx = vec![0.0; x.len()];
    let mut dh_prev = vec![0.0; hidden];
    for gi in 0..4 {
        let a = &da[gi];
        outer_acc(grads.w[gi].data_mut(), x, a);
        outer_acc(grads.u[gi].data_mut(), h_prev, a);
        for (bv, av) in grads.b[gi].data_mut().iter_mut().zip(a) {
            *bv += av;
        }
        matvec_acc(&mut dx, p.w[gi].data(), a);
        matvec_acc(&mut dh_prev, p.u[gi].data(), a);
    }
    (dx, dh_prev, dcell_prev)
}

/// `m += u^T v` for row-major `m: |u| x |v|`.
fn outer_acc(m: &mut [f64], u: &[f64], v: &[f64]) {
    let n = v.len();
    for (r, &uv) in u.iter().enumerate() {
        if uv == 0.0 {
            continue;
        }
        for (mv, &vv) in m[r * n..(r + 1) * n].iter_mut().zip(v) {
            *mv += uv * vv;
        }
    }
}

/// `out += M v` for row-major `M: |out| x |v|`.
fn matvec_acc(out: &mut [f64], m: &[f64], v: &[f64]) {
    let n = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * n..(r + 1) * n];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// All steps of one direction, in processing order.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub reverse: bool,
    /// `states[s]` is the state after the s-th processed step.
    pub states: Vec<CellState>,
}

impl LstmTrace {
    /// Time index of the s-th processed step.
    fn time(&self, s: usize, steps: usize) -> usize {
        if self.reverse { steps - 1 - s } else { s }
    }

    /// Hidden state at time t.
    pub fn h_at(&self, t: usize) -> &[f64] {
        let n = self.states.len();
        let s = if self.reverse { n - 1 - t } else { t };
        &self.states[s].h
    }
}

/// Runs one direction over `xs: T x F` from zero initial states.
pub fn lstm_scan(xs: &Tensor, p: &LstmParams, reverse: bool) -> LstmTrace {
    let steps = xs.rows();
    let hidden = p.hidden();
    let zero = vec![0.0; hidden];
    let mut states: Vec<CellState> = Vec::with_capacity(steps);
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let (h_prev, c_prev) = match states.last() {
            Some(st) => (st.h.as_slice(), st.cell.as_slice()),
            None => (zero.as_slice(), zero.as_slice()),
        };
        let next = lstm_cell(xs.row(t), h_prev, c_prev, p);
        states.push(next);
    }
    LstmTrace { reverse, states }
}

/// Backpropagation through time. `dhs: T x H` holds the gradient arriving at
/// each time step's hidden output. Returns the gradient for `xs`.
pub fn lstm_scan_backward(xs: &Tensor, p: &LstmParams, trace: &LstmTrace, dhs: &Tensor, grads: &mut LstmParams) -> Tensor {
    let steps = xs.rows();
    let hidden = p.hidden();
    let zero = vec![0.0; hidden];
    let mut dx = Tensor::zeros(xs.shape());
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    for s in (0..steps).rev() {
        let t = trace.time(s, steps);
        let (h_prev, c_prev) = if s == 0 {
            (zero.as_slice(), zero.as_slice())
        } else {
            (trace.states[s - 1].h.as_slice(), trace.states[s - 1].cell.as_slice())
        };
        let dh: Vec<f64> = dhs.row(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (dxt, dhp, dcp) = lstm_cell_backward(xs.row(t), h_prev, c_prev, &trace.states[s], p, &dh, &dc_next, grads);
        dx.row_mut(t).copy_from_slice(&dxt);
        dh_next = dhp;
        dc_next = dcp;
    }
    dx
}

/// Forward and backward directions side by side: row t is `[h_fwd_t ; h_bwd_t]`.
pub fn bilstm_forward(xs: &Tensor, fwd: &LstmParams, bwd: &LstmParams) -> (Tensor, LstmTrace, LstmTrace) {
    let steps = xs.rows();
    let hidden = fwd.hidden();
    let tf = lstm_scan(xs, fwd, false);
    let tb = lstm_scan(xs, bwd, true);
    let mut out = Tensor::zeros(&[steps, 2 * hidden]);
    for t in 0..steps {
        let row = out.row_mut(t);
        row[..hidden].copy_from_slice(tf.h_at(t));
        row[hidden..].copy_from_slice(tb.h_at(t));
    }
    (out, tf, tb)
}

/// Splits `dout: T x 2H` back through both directions; returns the input
/// gradient.
pub fn bilstm_backward(
    xs: &Tensor,
    fwd: &LstmParams,
    bwd: &LstmParams,
    traces: (&LstmTrace, &LstmTrace),
    dout: &Tensor,
    grads: (&mut LstmParams, &mut LstmParams),
) -> Tensor {
    let steps = xs.rows();
    let hidden = fwd.hidden();
    let mut dhf = Tensor::zeros(&[steps, hidden]);
    let mut dhb = Tensor::zeros(&[steps, hidden]);
    for t in 0..steps {
        dhf.row_mut(t).copy_from_slice(&dout.row(t)[..hidden]);
        dhb.row_mut(t).copy_from_slice(&dout.row(t)[hidden..]);
    }
    let mut dx = lstm_scan_backward(xs, fwd, traces.0, &dhf, grads.0);
    dx.add_assign(&lstm_scan_backward(xs, bwd, traces.1, &dhb, grads.1));
    dx
}

// ------------------------------------------------------------------ pooling

/// Elementwise max over the rows of `hseq` where `mask` is true. `argmax[j]`
/// is the first row attaining the max of column j.
pub fn masked_max_pool(hseq: &Tensor, mask: &[bool]) -> Result<(Vec<f64>, Vec<usize>), NumericsError> {
    if !mask.iter().any(|&m| m) {
        return Err(NumericsError::AllPad);
    }
    let width = hseq.row_len();
    let mut best = vec![f64::NEG_INFINITY; width];
    let mut arg = vec![usize::MAX; width];
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (j, &v) in hseq.row(t).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = t;
            }
        }
    }
    Ok((best, arg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledOutput {
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
    pub logit: f64,
    pub prob: f64,
}

/// `prob = sigmoid(w . maxpool(hseq) + b)`.
pub fn pooled_output(hseq: &Tensor, mask: &[bool], w: &Tensor, b: f64) -> Result<PooledOutput, NumericsError> {
    let (pooled, argmax) = masked_max_pool(hseq, mask)?;
    let logit = pooled.iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>() + b;
    Ok(PooledOutput { pooled, argmax, logit, prob: sigmoid(logit) })
}

// --------------------------------------------------------------------- loss

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over the batch and its gradient with respect to
/// each prediction. Predictions are clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NumericsError> {
    if pred.is_empty() {
        return Err(NumericsError::EmptyBatch);
    }
    if pred.len() != target.len() {
        return Err(NumericsError::ShapeMismatch {
            name: "bce targets".into(),
            expected: vec![pred.len()],
            found: vec![target.len()],
        });
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((p - y) / (p * (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::seed;
    use rand::Rng;

    fn random(shape: &[usize], rng: &mut seed::Rng, scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn embedding_lookup_and_pad() {
        let table = Tensor::from_vec(&[8, 2], (0..16).map(f64::from).collect()).unwrap();
        let out = embedding_forward(&[7, 0, 2], &table).unwrap();
        assert_eq!(out.row(0), table.row(7));
        assert_eq!(out.row(1), [0.0, 0.0]);
        assert_eq!(out.row(2), table.row(2));
        let pads = embedding_forward(&[0, 0], &table).unwrap();
        assert!(pads.data().iter().all(|&v| v == 0.0));
        let mut g = Tensor::zeros(&[8, 2]);
        embedding_backward(&[0, 0], &Tensor::from_vec(&[2, 2], vec![1.0; 4]).unwrap(), &mut g);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert_eq!(embedding_forward(&[8], &table).unwrap_err(), NumericsError::IndexOutOfRange { id: 8, vocab: 8 });
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let mut rng = seed::rng(1);
        let ids = [1, 3, 3, 0, 4, 2];
        let table = random(&[5, 3], &mut rng, 1.0);
        let r = random(&[ids.len(), 3], &mut rng, 1.0);
        let loss = |p: &Vec<Tensor>| dot(&embedding_forward(&ids, &p[0]).unwrap(), &r);
        let mut g = Tensor::zeros(&[5, 3]);
        embedding_backward(&ids, &r, &mut g);
        let rep = grad_check(loss, &vec![table], &vec![g], 1e-5, 200, 0).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn conv_bias_only_and_same_length() {
        let x = Tensor::from_vec(&[50, 4], vec![0.3; 200]).unwrap();
        let w = Tensor::zeros(&[3, 4, 2]);
        let b = Tensor::from_vec(&[2], vec![0.7, -0.4]).unwrap();
        let c = conv1d_forward(&x, &w, &b);
        assert_eq!(c.out.shape(), [50, 2]);
        for t in 0..50 {
            assert_eq!(c.out.row(t), [0.7, 0.0]);
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = seed::rng(2);
        let (x, w, b) = (random(&[4, 2], &mut rng, 1.0), random(&[3, 2, 3], &mut rng, 1.0), random(&[3], &mut rng, 1.0));
        let c = conv1d_forward(&x, &w, &b);
        for t in 0..4 {
            for f in 0..3 {
                let mut s = b.data()[f];
                for j in 0..3 {
                    let src = t as isize + j as isize - 1;
                    if (0..4).contains(&src) {
                        for ch in 0..2 {
                            s += x.row(src as usize)[ch] * w.data()[(j * 2 + ch) * 3 + f];
                        }
                    }
                }
                assert!((c.out.row(t)[f] - s.max(0.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = seed::rng(3);
        let (steps, d, f) = (7, 5, 4);
        let params = vec![random(&[steps, d], &mut rng, 1.0), random(&[3, d, f], &mut rng, 0.5), random(&[f], &mut rng, 0.3)];
        let r = random(&[steps, f], &mut rng, 1.0);
        let loss = |p: &Vec<Tensor>| dot(&conv1d_forward(&p[0], &p[1], &p[2]).out, &r);
        let cache = conv1d_forward(&params[0], &params[1], &params[2]);
        let (dx, dw, db) = conv1d_backward(&params[0], &params[1], &cache, &r);
        let rep = grad_check(loss, &params, &vec![dx, dw, db], 1e-5, 200, 0).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    fn random_lstm(input: usize, hidden: usize, rng: &mut seed::Rng) -> LstmParams {
        let mut p = LstmParams::zeros(input, hidden);
        for (_, t) in p.tensors_mut() {
            *t = random(t.shape(), rng, 0.6);
        }
        p
    }

    #[test]
    fn zero_cell_has_half_gates_and_zero_output() {
        let p = LstmParams::zeros(4, 3);
        let s = lstm_cell(&[0.5, -1.0, 2.0, 0.0], &[0.0; 3], &[0.0; 3], &p);
        for g in &s.gates[..3] {
            assert!(g.iter().all(|&v| v == 0.5));
        }
        assert!(s.gates[3].iter().all(|&v| v == 0.0));
        assert!(s.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_is_bounded() {
        let mut rng = seed::rng(4);
        let mut p = random_lstm(4, 3, &mut rng);
        for (_, t) in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 20.0);
        }
        let mut h = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        for _ in 0..20 {
            let s = lstm_cell(&[3.0, -2.0, 5.0, 1.0], &h, &c, &p);
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
            (h, c) = (s.h, s.cell);
        }
    }

    fn lstm_from(v: &[Tensor]) -> LstmParams {
        LstmParams {
            w: std::array::from_fn(|g| v[g].clone()),
            u: std::array::from_fn(|g| v[4 + g].clone()),
            b: std::array::from_fn(|g| v[8 + g].clone()),
        }
    }

    #[test]
    fn chained_cells_gradient_matches_finite_differences() {
        let mut rng = seed::rng(5);
        let (steps, f, h) = (3, 4, 3);
        let lstm = random_lstm(f, h, &mut rng);
        let xs = random(&[steps, f], &mut rng, 1.0);
        let r = random(&[steps, h], &mut rng, 1.0);
        for reverse in [false, true] {
            let mut params: Vec<Tensor> = lstm.tensors().into_iter().map(|(_, t)| t.clone()).collect();
            params.push(xs.clone());
            let loss = |p: &Vec<Tensor>| {
                let tr = lstm_scan(&p[12], &lstm_from(p), reverse);
                (0..steps).map(|t| tr.h_at(t).iter().zip(r.row(t)).map(|(a, b)| a * b).sum::<f64>()).sum()
            };
            let tr = lstm_scan(&xs, &lstm, reverse);
            let mut g = LstmParams::zeros(f, h);
            let dx = lstm_scan_backward(&xs, &lstm, &tr, &r, &mut g);
            let mut analytic: Vec<Tensor> = g.tensors().into_iter().map(|(_, t)| t.clone()).collect();
            analytic.push(dx);
            let rep = grad_check(loss, &params, &analytic, 1e-5, 200, 0).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn bilstm_width_and_single_step() {
        let mut rng = seed::rng(6);
        let (fwd, bwd) = (random_lstm(4, 50, &mut rng), random_lstm(4, 50, &mut rng));
        let (out, _, _) = bilstm_forward(&random(&[6, 4], &mut rng, 1.0), &fwd, &bwd);
        assert_eq!(out.shape(), [6, 100]);
        let x = random(&[1, 4], &mut rng, 1.0);
        let (out, _, _) = bilstm_forward(&x, &fwd, &bwd);
        let zero = vec![0.0; 50];
        assert_eq!(&out.row(0)[..50], lstm_cell(x.row(0), &zero, &zero, &fwd).h.as_slice());
        assert_eq!(&out.row(0)[50..], lstm_cell(x.row(0), &zero, &zero, &bwd).h.as_slice());
    }

    #[test]
    fn palindrome_with_tied_directions_is_time_symmetric() {
        let mut rng = seed::rng(7);
        let p = random_lstm(2, 3, &mut rng);
        let a = [0.4, -1.2];
        let b = [1.5, 0.3];
        let xs = Tensor::from_vec(&[3, 2], [a, b, a].concat()).unwrap();
        let (out, _, _) = bilstm_forward(&xs, &p, &p);
        for t in 0..3 {
            assert_eq!(&out.row(t)[..3], &out.row(2 - t)[3..]);
        }
    }

    #[test]
    fn pooling_cases() {
        let h = Tensor::from_vec(&[3, 2], vec![1.0, -5.0, 3.0, -7.0, 9.0, 9.0]).unwrap();
        let (p, arg) = masked_max_pool(&h, &[true, true, false]).unwrap();
        assert_eq!((p, arg), (vec![3.0, -5.0], vec![1, 0]));
        let (p, _) = masked_max_pool(&h, &[false, true, false]).unwrap();
        assert_eq!(p, h.row(1));
        assert_eq!(masked_max_pool(&h, &[false; 3]).unwrap_err(), NumericsError::AllPad);
        let out = pooled_output(&h, &[true; 3], &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(out.prob, 0.5);
    }

    #[test]
    fn pooled_output_gradient_matches_finite_differences() {
        let mut rng = seed::rng(8);
        let params = vec![random(&[5, 4], &mut rng, 1.0), random(&[4], &mut rng, 1.0), random(&[1], &mut rng, 0.5)];
        let mask = [true, true, false, true, true];
        let y = 1.0;
        let loss = |p: &Vec<Tensor>| {
            let o = pooled_output(&p[0], &mask, &p[1], p[2].data()[0]).unwrap();
            bce_loss(&[o.prob], &[y]).unwrap().0
        };
        let o = pooled_output(&params[0], &mask, &params[1], params[2].data()[0]).unwrap();
        let dlogit = o.prob - y;
        let mut dh = Tensor::zeros(&[5, 4]);
        for (j, &t) in o.argmax.iter().enumerate() {
            dh.row_mut(t)[j] = params[1].data()[j] * dlogit;
        }
        let dw = Tensor::from_vec(&[4], o.pooled.iter().map(|v| v * dlogit).collect()).unwrap();
        let db = Tensor::from_vec(&[1], vec![dlogit]).unwrap();
        let rep = grad_check(loss, &params, &vec![dh, dw, db], 1e-5, 200, 0).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn bce_values_and_signs() {
        let (l, g) = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g[0] < 0.0);
        let (l, _) = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l > 0.0 && l < 1e-6);
        let (_, g) = bce_loss(&[0.9, 0.2], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v > 0.0));
        assert_eq!(bce_loss(&[], &[]).unwrap_err(), NumericsError::EmptyBatch);
    }
}
