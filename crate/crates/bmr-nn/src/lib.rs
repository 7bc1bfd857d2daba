//! Mean-field stochastic variational inference for small Bayesian neural
//! networks, with post-hoc weight pruning by Bayesian model reduction (BMR).
//!
//! The crate trains fully factorised Gaussian posteriors over standardized
//! network weights (plus Log-Normal posteriors over positive scale latents)
//! with reparameterized stochastic gradients and the AdaBelief optimizer, and
//! then sparsifies the fitted posterior by evaluating, in closed form, the
//! change in variational free energy of swapping each weight's `N(0,1)` prior
//! for a spike at zero. A Beta/Bernoulli hyperposterior over per-layer
//! inclusion probabilities turns those free-energy changes into per-weight
//! keep probabilities through a digamma fixed point; weights with keep
//! probability below one half have their variational mean zeroed between
//! training epochs.
//!
//! # Layout
//!
//! - [`stats`] — densities, special functions, seeded random streams.
//! - [`tensor`] — dense `f64` tensors and a reverse-mode gradient tape.
//! - [`nets`] — architecture catalog (MLP, LeNet-5), forward pass, checkpoints.
//! - [`models`] — flat and regularised-horseshoe generative models and their
//!   mean-field guides.
//! - [`svi`] — ELBO estimation, pathwise and REINFORCE gradients, AdaBelief,
//!   the epoch loop.
//! - [`bmr`] — closed-form free-energy deltas, spike-and-slab updates,
//!   pruning, and the prune-train schedule.
//! - [`metrics`] — Top-1 accuracy, NLL, ECE, sparsity, per-layer CDFs.
//! - [`data`] — IDX ingestion, synthetic blob datasets, batch iteration.
//! - [`run`] — run directories, train/eval/report orchestration for the CLI.
//!
//! The `examples/` directory contains one runnable program per major
//! capability; start with `cargo run --release --example conjugate_gaussian`.

pub mod bmr;
pub mod data;
pub mod metrics;
pub mod models;
pub mod nets;
pub mod run;
pub mod stats;
pub mod svi;
pub mod tensor;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("{op}: {what} out of domain: {value}")]
    Domain {
        op: &'static str,
        what: &'static str,
        value: f64,
    },
    /// Two operands had incompatible shapes.
    #[error("{op}: shape mismatch: left {lhs:?} vs right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A single operand had an unusable shape.
    #[error("{op}: bad shape {shape:?}: {why}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        why: String,
    },
    /// A NaN or infinity appeared in checked numeric code.
    #[error("non-finite value out of {op} at flat index {index}{}", step.map(|s| format!(" (step {s})")).unwrap_or_default())]
    NumericFault {
        op: &'static str,
        index: usize,
        step: Option<u64>,
    },
    /// Malformed input data (IDX files, manifests, checkpoints).
    #[error("parse error in {what}: {why}")]
    Parse { what: &'static str, why: String },
    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// A checkpoint was evaluated against a different architecture.
    #[error("architecture hash mismatch: checkpoint {found:#018x} vs requested {expected:#018x}")]
    HashMismatch { found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Io(_) | Error::HashMismatch { .. } => 3,
            Error::NumericFault { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// FNV-1a 64-bit hash; stable across platforms and Rust versions, used for
/// architecture and dataset fingerprints.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
