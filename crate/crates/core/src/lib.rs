//! Vulnerability-weighted perturbation budgets for adversarial training.
//!
//! This crate trains small ReLU MLPs with per-example l-infinity perturbation
//! budgets derived from how vulnerable each example currently looks to the
//! model. Two scoring rules are provided: the softmax margin (probability of
//! the true class minus the best other class) and a modified standard
//! deviation of the softmax vector around the true-class probability. Budgets
//! are an exponential reweighting of a shared base radius, so confidently
//! correct examples receive larger budgets and fragile ones smaller budgets.
//!
//! The pieces are deliberately small and testable:
//!
//! - [`tensor`] / [`graph`]: a dense f64 tensor and a reverse-mode tape
//!   sufficient for MLP losses, plus a finite-difference gradient oracle.
//! - [`models`]: MLP definition, Glorot init, forward pass, checkpoint I/O.
//! - [`vulnerability`]: scores, budget formulas, per-batch assignment.
//! - [`attacks`]: FGSM / PGD / CW-PGD / SPSA with per-example budgets.
//! - [`training`]: SGD with momentum, milestone LR schedule and the two-phase
//!   (warm-up then reweighted) adversarial training loop.
//! - [`analysis`]: robustness evaluation and executable checks of the
//!   first-order ordering properties the budget rules rely on.
//! - [`harness`]: synthetic datasets, an IDX image loader, run configuration
//!   and the command-line interface.
//!
//! Everything is deterministic given the seeds in the relevant config: the
//! random streams are counter-derived per (seed, purpose, epoch, batch), so
//! repeated runs produce byte-identical artifacts.

pub mod analysis;
pub mod attacks;
pub mod error;
pub mod graph;
pub mod harness;
pub mod models;
pub mod prng;
pub mod tensor;
pub mod training;
pub mod vulnerability;

pub use error::{Error, Result};
pub use tensor::Tensor;
