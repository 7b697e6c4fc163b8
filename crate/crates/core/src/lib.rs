//! Deep constrained clustering.
//!
//! A self-training embedded clusterer (autoencoder + Student's-t soft
//! assignment + KL self-training) extended with differentiable
//! must-link, cannot-link, instance-difficulty, triplet, global-size and
//! cardinality losses, trained by alternating an instance branch with a
//! constraint branch.

pub mod tensor;
pub mod seed;
pub mod metrics;
pub mod datasets;
pub mod network;
pub mod cluster;
pub mod constraints;
pub mod oracles;
pub mod trainer;
pub mod cli;
