//! Skip-connection fusion blending a low-rank cross-attention path with a
//! channel-gating path.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::nn::layers::{module_fields, Conv3d, GroupNorm, Pointwise};
use crate::nn::params::{Init, Param};
use crate::ops::{self, PoolMode};

/// Hidden width of the gating MLP: `max(8, (C_dec + C_enc) / 4)`.
pub fn gate_hidden(c_dec: usize, c_enc: usize) -> usize {
    ((c_dec + c_enc) / 4).max(8)
}

#[derive(Debug)]
pub struct Ssfb {
    /// `[r, C_dec]` query projection of the decoder features.
    pub query: Param,
    /// `[r, C_enc]` key projection of the encoder features.
    pub key: Param,
    /// `[r, C_enc]` value projection of the encoder features.
    pub value: Param,
    /// `[C_enc, r]` output map, zero at initialization.
    pub out: Param,
    pub gate_hidden: Pointwise,
    /// Zero at initialization, so the gate starts at 0.5.
    pub gate_out: Pointwise,
    /// Blend logit; the blend weight is `sigmoid(alpha_logit)`.
    pub alpha_logit: Param,
    pub fuse: Conv3d,
    pub norm: GroupNorm,
    attention_macs: AtomicU64,
}

module_fields!(Ssfb { query, key, value, out, gate_hidden, gate_out, alpha_logit, fuse, norm });

impl Clone for Ssfb {
    fn clone(&self) -> Self {
        Ssfb {
            query: self.query.clone(),
            key: self.key.clone(),
            value: self.value.clone(),
            out: self.out.clone(),
            gate_hidden: self.gate_hidden.clone(),
            gate_out: self.gate_out.clone(),
            alpha_logit: self.alpha_logit.clone(),
            fuse: self.fuse.clone(),
            norm: self.norm.clone(),
            attention_macs: AtomicU64::new(self.attention_macs()),
        }
    }
}

/// The intermediate branches of one SSFB evaluation.
pub struct SsfbParts {
    pub attn: Var,
    pub gate: Var,
    pub alpha: Var,
    pub blend: Var,
    pub output: Var,
}

impl Ssfb {
    pub fn new(init: &mut Init, c_dec: usize, c_enc: usize, rank: usize) -> Self {
        let hidden = gate_hidden(c_dec, c_enc);
        Ssfb {
            query: init.he_normal("query", vec![rank, c_dec], c_dec),
            key: init.he_normal("key", vec![rank, c_enc], c_enc),
            value: init.he_normal("value", vec![rank, c_enc], c_enc),
            out: init.zeros("out", vec![c_enc, rank]),
            gate_hidden: Pointwise::new(&mut init.pp("gate_hidden"), c_dec + c_enc, hidden, true),
            gate_out: Pointwise::zeroed(&mut init.pp("gate_out"), hidden, c_enc, true),
            alpha_logit: init.zeros("alpha_logit", vec![1]),
            fuse: Conv3d::same(&mut init.pp("fuse"), c_dec + c_enc, c_enc),
            norm: GroupNorm::new(&mut init.pp("norm"), c_enc),
            attention_macs: AtomicU64::new(0),
        }
    }

    pub fn rank(&self) -> usize {
        self.query.tensor().dims()[0]
    }

    pub fn c_dec(&self) -> usize {
        self.query.tensor().dims()[1]
    }

    pub fn c_enc(&self) -> usize {
        self.key.tensor().dims()[1]
    }

    /// Multiply-accumulates counted inside the two rank-space products
    /// (`V K~^T` and `G Q`) during the most recent forward call.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs.load(Ordering::Relaxed)
    }

    fn attention_path(&self, tape: &mut Tape, f_dec: &Var, f_enc: &Var) -> Result<Var> {
        let dims = f_enc.dims().to_vec();
        let (b, n, r) = (dims[0], dims[2] * dims[3] * dims[4], self.rank());
        let project = |tape: &mut Tape, w: &Param, x: &Var| -> Result<Var> {
            let w = w.var(tape);
            let y = ops::pointwise_conv3d(tape, x, &w, None)?;
            ops::reshape(tape, &y, vec![b, r, n])
        };
        let q = project(tape, &self.query, f_dec)?;
        let k = project(tape, &self.key, f_enc)?;
        let v = project(tape, &self.value, f_enc)?;
        // normalize keys over positions, then summarize into an r x r context
        let k = ops::softmax_axis(tape, &k, 2)?;
        let kt = ops::transpose(tape, &k)?;
        let before = ops::matmul_macs();
        let context = ops::matmul(tape, &v, &kt)?;
        let mixed = ops::matmul(tape, &context, &q)?;
        self.attention_macs.store(ops::matmul_macs() - before, Ordering::Relaxed);
        let mixed = ops::reshape(tape, &mixed, vec![b, r, dims[2], dims[3], dims[4]])?;
        let w_out = self.out.var(tape);
        ops::pointwise_conv3d(tape, &mixed, &w_out, None)
    }

    fn gate_path(&self, tape: &mut Tape, f_dec: &Var, f_enc: &Var) -> Result<Var> {
        let gd = ops::pool(tape, f_dec, PoolMode::GlobalMean)?;
        let ge = ops::pool(tape, f_enc, PoolMode::GlobalMean)?;
        let joint = ops::concat_channels(tape, &gd, &ge)?;
        let h = self.gate_hidden.forward(tape, &joint)?;
        let h = ops::gelu(tape, &h);
        let g = self.gate_out.forward(tape, &h)?;
        let g = ops::sigmoid(tape, &g);
        ops::mul(tape, f_enc, &g)
    }

    pub fn forward_parts(&self, tape: &mut Tape, f_dec: &Var, f_enc: &Var) -> Result<SsfbParts> {
        if f_dec.dims()[0] != f_enc.dims()[0] || f_dec.dims()[2..] != f_enc.dims()[2..] {
            return Err(shape_err("ssfb", format!("decoder {:?} vs encoder {:?}", f_dec.dims(), f_enc.dims())));
        }
        let attn = self.attention_path(tape, f_dec, f_enc)?;
        let gate = self.gate_path(tape, f_dec, f_enc)?;
        let logit = self.alpha_logit.var(tape);
        let alpha = ops::sigmoid(tape, &logit);
        let one_minus = ops::affine(tape, &alpha, -1.0, 1.0);
        let a = ops::mul(tape, &attn, &alpha)?;
        let g = ops::mul(tape, &gate, &one_minus)?;
        let blend = ops::add(tape, &a, &g)?;
        let joint = ops::concat_channels(tape, f_dec, &blend)?;
        let y = self.fuse.forward(tape, &joint)?;
        let y = self.norm.forward(tape, &y)?;
        let output = ops::gelu(tape, &y);
        Ok(SsfbParts { attn, gate, alpha, blend, output })
    }

    pub fn forward(&self, tape: &mut Tape, f_dec: &Var, f_enc: &Var) -> Result<Var> {
        Ok(self.forward_parts(tape, f_dec, f_enc)?.output)
    }

    /// Analytic multiply-accumulates `(projections and fusion, attention)`
    /// at `[D, H, W]`.
    pub fn macs(&self, spatial: [usize; 3]) -> (u64, u64) {
        let n: usize = spatial.iter().product();
        let (r, cd, ce) = (self.rank(), self.c_dec(), self.c_enc());
        let proj = n * r * (cd + 2 * ce) + n * ce * r;
        let gate = self.gate_hidden.macs(1) + self.gate_out.macs(1);
        (proj as u64 + gate + self.fuse.macs(spatial), (2 * r * r * n) as u64)
    }
}
