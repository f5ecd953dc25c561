//! Verification-driven deep active learning.
//!
//! This crate implements a full experimentation loop for label-efficient
//! training of small ReLU networks:
//!
//! * [`nn`] — one-hidden-layer MLP with softmax cross-entropy, Adam, and
//!   analytic input gradients.
//! * [`data`] — IDX and CIFAR-10 binary loaders plus a synthetic blob
//!   generator, all producing the same in-memory [`data::Dataset`].
//! * [`attacks`] — FGSM, binary-search robustness margins, and DeepFool.
//! * [`verifier`] — a complete branch-and-bound robustness verifier over
//!   ReLU activation phases with LP leaf checks, able to harvest several
//!   distinct counterexamples per query point.
//! * [`strategies`] — acquisition functions (random, margin-based,
//!   DeepFool-based, gradient-embedding k-means++).
//! * [`engine`] — the round-based select / label / augment / retrain loop.
//! * [`metrics`] — area under the budget curve, adversarial diversity
//!   statistics, CSV round logs, and SVG accuracy curves.
//! * [`config`] — the TOML experiment file read by the CLI.
//!
//! All numeric kernels are generic over [`Scalar`] so they can run in `f32`
//! or `f64`; the experiment engine itself is pinned to `f64` (see the type
//! aliases at the crate root) because round logs are compared bit-for-bit
//! across runs.

pub mod attacks;
mod bytes;
pub mod config;
pub mod data;
pub mod engine;
mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod simplex;
pub mod strategies;
pub mod verifier;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};

/// Floating-point element type for every numeric kernel in this crate.
///
/// This is a trait-alias-style bound: anything that is an IEEE float with
/// assignment operators, lossless-enough conversions from `f64` literals,
/// and thread-safety markers. It is implemented for `f32` and `f64` (and
/// automatically for any future type satisfying the bounds).
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    ///
    /// Panics if the value is not representable, which cannot happen for
    /// the finite constants this crate feeds it.
    fn cast(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite f64 constant")
    }

    /// Widens this scalar to `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("float widens to f64")
    }
}

impl<T> Scalar for T where
    T: num_traits::Float
        + num_traits::NumAssignOps
        + num_traits::FromPrimitive
        + num_traits::ToPrimitive
        + std::iter::Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Default 64-bit model used by the engine and CLI.
pub type Model = nn::MlpModel<f64>;
/// Default 64-bit optimizer state paired with [`Model`].
pub type Optimizer = nn::AdamState<f64>;
/// Default 64-bit dataset flowing through the engine.
pub type Pool = data::Dataset<f64>;
