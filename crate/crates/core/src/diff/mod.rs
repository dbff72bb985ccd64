//! Dense reverse-mode differentiation engine.
//!
//! A [`Graph`] records every op as it is evaluated; [`Graph::backward`]
//! walks the tape in reverse. Parameters live in a [`ParamStore`] and are
//! copied onto a tape with [`Graph::param`]; after `backward`, their
//! gradients are folded back with [`Graph::accumulate_param_grads`].

mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_check, CoordCheck, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Value};
pub use params::{Adam, Param, ParamStore};
pub use tensor::{Tensor, MAX_RANK};

#[cfg(test)]
mod tests;
