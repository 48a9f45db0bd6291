//! Cross-slice attention: attention along the depth axis of in-plane pooled
//! features, added back residually.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::layers::module_fields;
use crate::nn::params::{Init, Param};
use crate::ops::{self, PoolMode};

/// Attention rank used for a stage of width `channels`: `max(8, C / 4)`.
pub fn csa_rank(channels: usize) -> usize {
    (channels / 4).max(8)
}

#[derive(Debug)]
pub struct CrossSliceAttention {
    pub query: Param,
    pub key: Param,
    pub value: Param,
    /// Output map `[C, d]`, zero at initialization.
    pub output: Param,
    attention_macs: AtomicU64,
}

module_fields!(CrossSliceAttention { query, key, value, output });

impl Clone for CrossSliceAttention {
    fn clone(&self) -> Self {
        CrossSliceAttention {
            query: self.query.clone(),
            key: self.key.clone(),
            value: self.value.clone(),
            output: self.output.clone(),
            attention_macs: AtomicU64::new(self.attention_macs()),
        }
    }
}

impl CrossSliceAttention {
    pub fn new(init: &mut Init, channels: usize, rank: usize) -> Self {
        CrossSliceAttention {
            query: init.he_normal("query", vec![rank, channels], channels),
            key: init.he_normal("key", vec![rank, channels], channels),
            value: init.he_normal("value", vec![rank, channels], channels),
            output: init.zeros("output", vec![channels, rank]),
            attention_macs: AtomicU64::new(0),
        }
    }

    pub fn rank(&self) -> usize {
        self.query.tensor().dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.query.tensor().dims()[1]
    }

    /// Multiply-accumulates counted inside the two attention products
    /// (`Q^T K` and `V A`) during the most recent forward call.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs.load(Ordering::Relaxed)
    }

    /// Slice-attention matrix `softmax(Q^T K / sqrt(d))`, `[B, D, D]`, rows
    /// summing to one.
    pub fn attention(&self, tape: &mut Tape, x: &Var) -> Result<(Var, Var)> {
        let pooled = ops::pool(tape, x, PoolMode::MeanOverHw)?;
        let proj = |tape: &mut Tape, w: &Param| -> Result<Var> {
            let w = w.var(tape);
            ops::pointwise_conv3d(tape, &pooled, &w, None)
        };
        let q = proj(tape, &self.query)?;
        let k = proj(tape, &self.key)?;
        let v = proj(tape, &self.value)?;
        let qt = ops::transpose(tape, &q)?;
        let scores = ops::matmul(tape, &qt, &k)?;
        let scores = ops::affine(tape, &scores, 1.0 / (self.rank() as f64).sqrt(), 0.0);
        let a = ops::softmax_axis(tape, &scores, 2)?;
        Ok((a, v))
    }

    /// `x + broadcast_HW(W_o (V A))`.
    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let before = ops::matmul_macs();
        let (a, v) = self.attention(tape, x)?;
        let va = ops::matmul(tape, &v, &a)?;
        self.attention_macs.store(ops::matmul_macs() - before, Ordering::Relaxed);
        let w_o = self.output.var(tape);
        let correction = ops::pointwise_conv3d(tape, &va, &w_o, None)?;
        ops::add(tape, x, &correction)
    }

    /// Analytic multiply-accumulate counts `(projections, attention)` for a
    /// `[D, H, W]` input: `4·C·d·D` and `2·d·D²`. In-plane pooling is
    /// additions only and is not counted.
    pub fn macs(&self, spatial: [usize; 3]) -> (u64, u64) {
        let (c, d, depth) = (self.channels(), self.rank(), spatial[0]);
        ((4 * c * d * depth) as u64, (2 * d * depth * depth) as u64)
    }
}
