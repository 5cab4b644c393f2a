//! Distributed quantum neural networks over partitioned input features.
//!
//! An input grid is cut into contiguous row bands; each band is angle-encoded
//! into its own small variational circuit (a *shard*), and the class logits
//! are a scaled sum of every shard's Pauli expectation values. Everything is
//! simulated exactly on dense statevectors and trained with Adam using
//! adjoint-method gradients.
//!
//! Module map:
//!
//! * [`sim`]: statevector, RX/RY/CZ kernels, Pauli expectations
//! * [`model`]: per-shard circuit layout and forward pass
//! * [`gradients`]: adjoint, parameter-shift and finite-difference engines
//! * [`ensemble`]: feature partitioning, summed logits, loss and gradients, checkpoints
//! * [`training`]: Adam, initialisation, k-fold cross-validation, metrics
//! * [`data`]: Semeion and MNIST IDX loaders, normalisation, pooling
//! * [`config`] and [`cli`]: experiment files and the `dqnn` command

pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradients;
pub mod model;
pub mod sim;
pub mod training;

pub use ensemble::{EnsembleModel, PartitionSpec, Prediction};
pub use error::{Error, Result};
pub use model::{build_architecture, ArchSpec, QnnArchitecture};
pub use sim::{Observable, StateVector};
