//! Gaussian Brascamp-Lieb functionals, extremiser search, heat-flow
//! operators and monotonicity experiments.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod datum;
pub mod extremiser;
pub mod gaussian;
pub mod harness;
pub mod heat_flow;
pub mod linalg;
pub mod numerics;
pub mod quadrature;
