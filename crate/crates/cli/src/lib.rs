//! Command-line driver for the monotonicity experiments.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod config;
pub mod output;
pub mod runner;
pub mod suites;
