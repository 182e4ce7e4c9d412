//! Dense-array computation substrate with reverse-mode differentiation.
//!
//! Everything the model computes is a flat row-major `f64` [`Array`]. A
//! [`Tape`](tape::Tape) records primitive applications during the forward
//! pass and replays them in reverse to accumulate gradients into named
//! [`Parameter`]s. A finite-difference [`gradient_check`](gradcheck::gradient_check)
//! validates every primitive and the end-to-end loss.

mod array;
mod gradcheck;
mod store;
mod tape;

pub use array::Array;
pub use gradcheck::{eval_scalar, gradient_check, primitive_checks, CheckReport};
pub use store::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tape::{Tape, ValueId};
