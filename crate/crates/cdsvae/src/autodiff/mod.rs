//! Reverse-mode automatic differentiation on flat f32 buffers.
//!
//! The pieces:
//! - [`Tensor`]: detached values (parameters, inputs, results).
//! - [`Tape`] and [`Var`]: one recorded forward pass plus its backward sweep.
//! - [`ParamStore`] / [`BoundParams`]: named parameters bound per step.
//! - [`Adam`]: the optimizer.
//! - [`grad_check`]: finite-difference verification of the backward rules.

mod adam;
mod grad_check;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use grad_check::{as_build, grad_check, op_kind_checks, GradCheckReport, OpCheck};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{NodeId, Tape, Var};
pub use tensor::Tensor;
