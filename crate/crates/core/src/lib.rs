//! Decision Regularized Decision Test-Time Training (DRDT3): a
//! test-time-training sequence model produces coarse actions that condition a
//! small denoising diffusion policy, trained jointly on offline trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diffusion;
pub mod dt3;
pub mod envdata;
pub mod layers;
pub mod numerics;
pub mod policy;
pub mod training;
