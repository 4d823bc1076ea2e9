//! Ergodic and infinite-horizon quadratic BSDE systems with regime switching:
//! PDE solvers for the discounted and ergodic Markovian systems, Monte Carlo
//! for the forward-performance market, a comparison harness and test oracles.

#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod comparison;
pub mod config;
pub mod drivers;
pub mod ergodic;
pub mod io;
pub mod market;
pub mod model;
pub mod oracles;
pub mod pde;
pub mod vector;
