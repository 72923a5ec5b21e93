//! Soft bridge policies for maximum-entropy reinforcement learning.
//!
//! A bridge actor is a short Markov chain of Gaussian residual transitions in
//! pre-tanh latent space; its relative entropy against a fixed high-entropy
//! reference chain is available in closed form as a sum of per-step control
//! costs. This crate implements that policy class and everything needed to
//! check it: a minimal dense-network core with explicit backward passes, the
//! bridge sampler and its control energy, exact enumeration oracles for the
//! path-space optimality results on finite alphabets, deterministic grid
//! propagation of the reference endpoint law, a fixed-critic 2D training
//! diagnostic, and a full off-policy actor-critic loop on built-in desk-scale
//! environments. The `softbridge` binary exposes all of it as subcommands.

pub mod bridge;
pub mod cli;
pub mod density;
pub mod env;
pub mod linalg;
pub mod nn;
pub mod path_oracle;
pub mod report;
pub mod rng;
pub mod softgac;
pub mod toy2d;
