//! Stability of perturbation-based explanations under input and output noise.
//!
//! A small embedding classifier stands in for the black box. LIME, Kernel
//! Shapley and Sample Shapley explain its predictions, and the harness
//! measures how much those explanations move when the model's embeddings
//! or its output probabilities are perturbed.

pub mod attribution;
pub mod blackbox;
pub mod conditioning;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod perturbation;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
