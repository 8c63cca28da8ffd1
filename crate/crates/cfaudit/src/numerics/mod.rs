//! Deterministic numeric substrate: dense linear algebra, feed-forward
//! networks with hand-written backpropagation, an adaptive-moment optimizer,
//! Student-t tail probabilities, and labelled reproducible RNG streams.
//!
//! All arithmetic is in `f64`. Nothing in this module allocates per element
//! on hot paths, and nothing depends on global state: given the same inputs
//! (including RNG stream labels) every function returns bit-identical output
//! on every run.

pub mod fd;
pub mod linalg;
pub mod net;
pub mod optim;
pub mod rng;
pub mod special;

pub use linalg::Matrix;
pub use net::{Activation, DenseNet, NetGrads};
pub use optim::{AdamConfig, OptimState};
pub use rng::RngStream;
