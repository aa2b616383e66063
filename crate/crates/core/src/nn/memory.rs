use serde::{Deserialize, Serialize};

use super::layers::{uniform, Linear};
use super::{Matrix, ParamId, ParameterSet, Tape, Var};
use crate::{Error, Result, Rng};

const MASKED: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySpec {
    /// Width of one history token.
    pub token_dim: usize,
    /// Embedding size `e_h`.
    pub embed_dim: usize,
    /// Maximum history length `W`.
    pub window: usize,
}

impl MemorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.embed_dim == 0 || self.window == 0 {
            return Err(Error::config(format!("memory dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// A batch of variable-length token histories, oldest token first.
///
/// Each history is stored flat (`len·token_dim` values). Padding to a common
/// width happens at encode time and is masked out exactly.
#[derive(Clone, Debug, Default)]
pub struct HistoryBatch {
    token_dim: usize,
    histories: Vec<Vec<f64>>,
}

impl HistoryBatch {
    pub fn new(token_dim: usize) -> Self {
        Self {
            token_dim,
            histories: Vec::new(),
        }
    }

    pub fn push(&mut self, flat_tokens: Vec<f64>) {
        assert_eq!(flat_tokens.len() % self.token_dim, 0, "ragged history token");
        self.histories.push(flat_tokens);
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    pub fn history_len(&self, i: usize) -> usize {
        self.histories[i].len() / self.token_dim
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn history(&self, i: usize) -> &[f64] {
        &self.histories[i]
    }

    /// Sub-batch with the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            token_dim: self.token_dim,
            histories: rows.iter().map(|&r| self.histories[r].clone()).collect(),
        }
    }

    /// The first `cols` entries of each history's newest token (the current
    /// observation), zeros for an empty history.
    pub fn current(&self, cols: usize) -> Matrix {
        assert!(cols <= self.token_dim, "current slice wider than a token");
        let mut out = Matrix::zeros(self.len(), cols);
        for (i, h) in self.histories.iter().enumerate() {
            if let Some(start) = h.len().checked_sub(self.token_dim) {
                out.row_mut(i).copy_from_slice(&h[start..start + cols]);
            }
        }
        out
    }

    fn width(&self) -> usize {
        (0..self.len()).map(|i| self.history_len(i)).max().unwrap_or(0).max(1)
    }
}

/// History encoder: linear token encoder plus sinusoidal position codes,
/// one single-head self-attention layer with a skip connection and layer
/// normalization, then soft attention pooling with a learned query.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionMemory {
    pub spec: MemorySpec,
    encoder: Linear,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    ln_gain: ParamId,
    ln_bias: ParamId,
    soft_key: Linear,
    query: ParamId,
    start: ParamId,
}

impl AttentionMemory {
    pub fn new(set: &mut ParameterSet, name: &str, spec: MemorySpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let e = spec.embed_dim;
        let encoder = Linear::new(set, &format!("{name}.enc"), spec.token_dim, e, true, rng);
        let wq = Linear::new(set, &format!("{name}.q"), e, e, false, rng);
        let wk = Linear::new(set, &format!("{name}.k"), e, e, false, rng);
        let wv = Linear::new(set, &format!("{name}.v"), e, e, false, rng);
        let ln_gain = set.add(format!("{name}.ln.gain"), Matrix::filled(1, e, 1.0));
        let ln_bias = set.add(format!("{name}.ln.bias"), Matrix::zeros(1, e));
        let soft_key = Linear::new(set, &format!("{name}.soft_key"), e, e, false, rng);
        let bound = 1.0 / (e as f64).sqrt();
        let query = set.add(format!("{name}.soft_query"), uniform(e, 1, bound, rng));
        let start = set.add(format!("{name}.start"), uniform(1, e, bound, rng));
        Ok(Self {
            spec,
            encoder,
            wq,
            wk,
            wv,
            ln_gain,
            ln_bias,
            soft_key,
            query,
            start,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    /// Encode every history in the batch into a `B×e_h` embedding matrix.
    pub fn forward(&self, tape: &mut Tape, set: &ParameterSet, batch: &HistoryBatch) -> Var {
        assert_eq!(batch.token_dim, self.spec.token_dim, "memory token width");
        assert!(!batch.is_empty(), "empty history batch");
        let (b, w, e, d) = (batch.len(), batch.width(), self.spec.embed_dim, self.spec.token_dim);
        assert!(w <= self.spec.window, "history longer than the memory window");

        let mut tokens = Matrix::zeros(b * w, d);
        let mut pe = Matrix::zeros(b * w, e);
        let mut self_mask = Matrix::zeros(b * w, w);
        let mut pool_mask = Matrix::zeros(b, w);
        let empty: Vec<f64> = (0..b).map(|i| if batch.history_len(i) == 0 { 1.0 } else { 0.0 }).collect();
        for i in 0..b {
            let len = batch.history_len(i);
            let h = batch.history(i);
            for k in 0..w {
                let row = i * w + k;
                if k < len {
                    tokens.row_mut(row).copy_from_slice(&h[k * d..(k + 1) * d]);
                    positional(len - 1 - k, pe.row_mut(row));
                }
                // An empty history keeps slot 0 visible so the pooled value
                // stays finite; it is replaced by the start token below.
                let visible = len.max(1);
                for j in visible..w {
                    self_mask.set(row, j, MASKED);
                }
            }
            for j in len.max(1)..w {
                pool_mask.set(i, j, MASKED);
            }
        }

        let x = tape.leaf(tokens);
        let x = self.encoder.forward(tape, set, x);
        let pe = tape.leaf(pe);
        let x = tape.add(x, pe);

        let q = self.wq.forward(tape, set, x);
        let k = self.wk.forward(tape, set, x);
        let v = self.wv.forward(tape, set, x);
        let scores = tape.group_matmul_bt(q, k, b);
        let scores = tape.scale(scores, 1.0 / (e as f64).sqrt());
        let self_mask = tape.leaf(self_mask);
        let scores = tape.add(scores, self_mask);
        let attn = tape.softmax_rows(scores);
        let ctx = tape.group_matmul(attn, v, b);
        let y = tape.add(x, ctx);
        let y = tape.layer_norm_rows(y, LN_EPS);
        let gain = tape.param(set, self.ln_gain);
        let bias = tape.param(set, self.ln_bias);
        let y = tape.mul_row(y, gain);
        let y = tape.add_row(y, bias);

        let keys = self.soft_key.forward(tape, set, y);
        let query = tape.param(set, self.query);
        let logits = tape.matmul(keys, query);
        let logits = tape.reshape(logits, b, w);
        let pool_mask = tape.leaf(pool_mask);
        let logits = tape.add(logits, pool_mask);
        let weights = tape.softmax_rows(logits);
        let pooled = tape.group_matmul(weights, y, b);

        if empty.iter().all(|&x| x == 0.0) {
            return pooled;
        }
        let keep: Vec<f64> = empty.iter().map(|x| 1.0 - x).collect();
        let keep = tape.leaf(Matrix::column(&keep));
        let pooled = tape.mul_col(pooled, keep);
        let start = tape.param(set, self.start);
        let zeros = tape.leaf(Matrix::zeros(b, e));
        let start = tape.add_row(zeros, start);
        let empty = tape.leaf(Matrix::column(&empty));
        let start = tape.mul_col(start, empty);
        tape.add(pooled, start)
    }

    /// Embedding of a single history, without keeping the tape.
    pub fn encode(&self, set: &ParameterSet, flat_tokens: &[f64]) -> Vec<f64> {
        let mut batch = HistoryBatch::new(self.spec.token_dim);
        batch.push(flat_tokens.to_vec());
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, set, &batch);
        tape.value(out).clone().into_vec()
    }
}

/// Sinusoidal code for position `pos` written into `out`.
fn positional(pos: usize, out: &mut [f64]) {
    let e = out.len() as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / e);
        *o = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}
