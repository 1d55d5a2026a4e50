//! Multi-scale GP-UCB black-box optimization over adaptive partitions of
//! the unit cube, with local polynomial upper bounds, comparison baselines
//! and a regret benchmark harness.

pub mod kernels;
pub mod gp;
pub mod geometry;
pub mod local_poly;
pub mod optimizer;
pub mod baselines;
pub mod bench;
