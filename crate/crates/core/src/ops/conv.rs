//! Differentiable convolution primitives.

use crate::autodiff::{Backward, Tape, Var};
use crate::error::Result;
use crate::kernels::conv::{
    self as k, channel_sums, Conv3dSpec, DepthwiseSpec, PointwiseSpec, TransposedSpec,
};
use crate::tensor::Tensor;

struct Conv3dBackward {
    spec: Conv3dSpec,
    has_bias: bool,
}

impl Backward for Conv3dBackward {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let mut out = vec![
            Some(k::conv3d_grad_input(&self.spec, w, grad)),
            Some(k::conv3d_grad_weight(&self.spec, x, grad)),
        ];
        if self.has_bias {
            let d = output.dims();
            out.push(Some(channel_sums(grad, d[0], d[1], output.shape().spatial_numel())));
        }
        out
    }
}

/// Dense 3D cross-correlation. `x: [B, Cin, D, H, W]`, `w: [Cout, Cin, k, k, k]`.
pub fn conv3d(tape: &mut Tape, x: &Var, w: &Var, b: Option<&Var>, stride: usize, padding: usize) -> Result<Var> {
    let spec = Conv3dSpec::new(x.value(), w.value(), b.map(Var::value), stride, padding)?;
    let y = k::conv3d_with(&spec, x.value(), w.value(), b.map(Var::value)).ensure_finite("conv3d")?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(tape.record(y, &inputs, Conv3dBackward { spec, has_bias: b.is_some() }))
}

struct DepthwiseBackward {
    spec: DepthwiseSpec,
}

impl Backward for DepthwiseBackward {
    fn name(&self) -> &'static str {
        "depthwise_conv3d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (gx, gw) = k::depthwise_grads(&self.spec, inputs[0], inputs[1], grad, true, true);
        vec![gx, gw]
    }
}

/// Per-channel spatial filtering. `w: [C, k, k, k]`, no bias.
pub fn depthwise_conv3d(tape: &mut Tape, x: &Var, w: &Var, stride: usize, padding: usize) -> Result<Var> {
    let spec = DepthwiseSpec::new(x.value(), w.value(), stride, padding)?;
    let y = k::depthwise_with(&spec, x.value(), w.value()).ensure_finite("depthwise_conv3d")?;
    Ok(tape.record(y, &[x, w], DepthwiseBackward { spec }))
}

struct PointwiseBackward {
    spec: PointwiseSpec,
    has_bias: bool,
}

impl Backward for PointwiseBackward {
    fn name(&self) -> &'static str {
        "pointwise_conv3d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let mut out = vec![
            Some(k::pointwise_grad_input(&self.spec, w, grad)),
            Some(k::pointwise_grad_weight(&self.spec, x, grad)),
        ];
        if self.has_bias {
            out.push(Some(channel_sums(grad, self.spec.b, self.spec.cout, self.spec.spatial)));
        }
        out
    }
}

/// 1x1x1 channel mixing over any `[B, Cin, ...]` map. `w: [Cout, Cin]`.
///
/// Also serves as the affine map of `[B, F]` feature vectors.
pub fn pointwise_conv3d(tape: &mut Tape, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
    let y = k::pointwise_conv3d(x.value(), w.value(), b.map(Var::value))?.ensure_finite("pointwise_conv3d")?;
    let spec = PointwiseSpec::new(x.value(), w.value(), b.map(Var::value))?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(tape.record(y, &inputs, PointwiseBackward { spec, has_bias: b.is_some() }))
}

struct TransposedBackward {
    spec: TransposedSpec,
    has_bias: bool,
}

impl Backward for TransposedBackward {
    fn name(&self) -> &'static str {
        "transposed_conv3d"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = Tensor::from_vec(output.dims().to_vec(), grad.to_vec()).expect("grad shape");
        let mut out = vec![
            Some(k::transposed_grad_input(&self.spec, inputs[1], &g)),
            Some(k::transposed_grad_weight(&self.spec, inputs[0], &g)),
        ];
        if self.has_bias {
            let d = output.dims();
            out.push(Some(channel_sums(grad, d[0], d[1], output.shape().spatial_numel())));
        }
        out
    }
}

/// Kernel-2, stride-2 transposed convolution. `w: [Cin, Cout, 2, 2, 2]`.
/// Every spatial extent doubles exactly.
pub fn transposed_conv3d(tape: &mut Tape, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
    let spec = TransposedSpec::new(x.value(), w.value(), b.map(Var::value))?;
    let y = k::transposed_with(&spec, x.value(), w.value(), b.map(Var::value)).ensure_finite("transposed_conv3d")?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(tape.record(y, &inputs, TransposedBackward { spec, has_bias: b.is_some() }))
}
