//! Audit binary classifiers for counterfactual invariance with respect to a
//! protected attribute.
//!
//! The library has three layers:
//!
//! * synthetic data with fully known causal structure ([`scm`]), which makes
//!   an interventional ground truth ([`scm::eca`]) computable exactly;
//! * a conditional latent diffusion generator ([`generative`]) that learns to
//!   produce counterfactual feature vectors for observed rows;
//! * the invariance test itself ([`citest`]) plus the associational baselines
//!   it is compared against ([`baselines`]).
//!
//! Everything downstream of a seed is deterministic: the same configuration
//! and master seed reproduce every dataset, model, and report byte for byte.
//! [`runner`] wires the layers into a resumable experiment sweep behind the
//! `cfaudit` command-line tool.

pub mod baselines;
pub mod citest;
pub mod error;
pub mod generative;
pub mod numerics;
pub mod report;
pub mod runner;
pub mod scm;
pub mod store;
pub mod zoo;

pub use error::{Error, Result};
