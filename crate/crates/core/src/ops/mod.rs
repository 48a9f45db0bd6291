//! Differentiable primitives. Each records itself on the [`Tape`](crate::autodiff::Tape)
//! it is given and returns a handle to its output.

mod conv;
mod elementwise;
mod norm;
mod reduce;
mod resize;

pub use conv::{conv3d, depthwise_conv3d, pointwise_conv3d, transposed_conv3d};
pub use elementwise::{
    activation, add, affine, concat_channels, elementwise, gelu, gelu_scalar, mul, reshape,
    select_row, sigmoid, sigmoid_scalar, sum, Activation, Binary,
};
pub use norm::{default_groups, group_norm};
pub use reduce::{matmul, matmul_macs, pool, softmax_axis, softmax_channel, transpose, PoolMode};
pub use resize::interpolate_trilinear;

