//! Deterministic simulation framework for clustered federated learning on
//! MNIST-family image classification.
//!
//! The crate partitions a dataset across simulated clients under one of five
//! data-heterogeneity scenarios, trains a 784-200-10 ReLU classifier under
//! four regimes (global FedAvg, a per-class centralized oracle, server-side
//! clustered FL via one-shot k-means on model weights, and client-side
//! clustered FL where clients pick the cluster model minimizing their local
//! loss), and scores the recovered client clustering against the ground-truth
//! heterogeneity classes with extrinsic metrics (ARI, AMI, homogeneity,
//! completeness, v-measure).
//!
//! Everything is seeded: the same seed produces byte-identical outputs,
//! independent of worker parallelism.

pub mod cfl_client;
pub mod cfl_server;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod heterogeneity;
pub mod metrics;
pub mod model;
pub mod report;
mod seed;

pub use error::{Error, Result};
