//! Modified truncated Euler–Maruyama (MTEM) simulation for stochastic
//! differential equations `dx = f(x) dt + g(x) dB` driven by a scalar
//! Brownian motion, where `f` and `g` may grow superlinearly.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: SDE models, the built-in registry and the stability functional.
//! - [`truncation`]: the truncation radius `h(Δ)` and the truncated coefficients.
//! - [`brownian`]: seeded, order-independent Brownian increments.
//! - [`schemes`]: MTEM and classical EM steppers plus continuous-time interpolants.
//! - [`lab`]: Monte Carlo moment / Lyapunov exponent estimation and lemma verifiers.
//! - [`cli`]: configuration parsing and the `mtem` command-line front end.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod cli;
pub mod error;
pub mod lab;
pub mod model;
pub mod schemes;
pub mod truncation;

mod numeric;
mod parallel;

pub use error::{MtemError, Result};
pub use model::{SamplingPlan, SdeModel, StabilityParams};
pub use schemes::{SchemeKind, TrajectoryRecord};
pub use truncation::TruncationPolicy;
