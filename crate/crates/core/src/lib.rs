// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depth;
pub mod flow;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod pose;
pub mod residual;
pub mod synth;
pub mod trajectory;

#[cfg(test)]
mod testutil;
