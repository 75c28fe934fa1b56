//! Continual-learning strategies and an intra-class distribution shift
//! benchmark for class-incremental Split-MNIST.
//!
//! - [`nn`]: dense networks, losses and gradients in `f64`.
//! - [`data`]: IDX ingestion, class splits, occlusion / FGSM shifts, joint datasets.
//! - [`strategies`]: OWM, ER, DER++, GDumb, iCaRL, an expert-per-task baseline and joint training.
//! - [`harness`]: experiment configs, continual runs, replicates, metrics and sweeps.
//! - [`analysis`]: the clean-vs-shifted probe and its overlap ranking.

pub mod data;
pub mod nn;
pub mod rng;
pub mod analysis;
pub mod harness;
pub mod strategies;
