//! Reverse-mode differentiation: the op tape, trainable parameters, and
//! their binary checkpoint format.

pub mod checkpoint;
mod param;
mod tape;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{segment_softmax_raw, spmm_raw, BackwardFn, Gradients, Tape, Var};
