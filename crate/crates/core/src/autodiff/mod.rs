//! Reverse-mode differentiation and finite-difference checking.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, grad_check_module, GradCheckReport, DENOM_FLOOR};
pub use tape::{Backward, Tape, Var};
