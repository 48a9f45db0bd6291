//! Raw numeric kernels operating on plain tensors, without gradient tracking.

pub mod conv;
