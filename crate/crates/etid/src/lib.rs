//! ETID: machine unlearning for ensemble predictive models.
//!
//! The crate builds a leave-one-part-out ensemble (ROEL) whose sub-models
//! mutually serve as retrained-alike references, erases requested training
//! samples by iterative KL distillation with rectification (TID), and
//! evaluates the four unlearning desiderata (consistency, accuracy,
//! efficiency, verifiability) against retraining, SISA, and relabel
//! baselines.
//!
//! Typical flow:
//!
//! ```
//! use etid::config::ExperimentConfig;
//! use etid::dataset::{generate_synthetic, sample_unlearning, split};
//! use etid::nn::{LossKind, TrainConfig};
//! use etid::roel::Ensemble;
//! use etid::tid::{handle_request, TidConfig};
//!
//! # fn main() -> etid::Result<()> {
//! let data = generate_synthetic(300, 6, 3, 1.5, 7)?;
//! let (train, _test) = split(&data, 0.8, 7)?;
//! let cfg = TrainConfig {
//!     learning_rate: 0.1, epochs: 10, batch_size: 16,
//!     seed: 7, shuffle: true, loss: LossKind::CrossEntropy,
//! };
//! let mut ensemble = Ensemble::build(&train, 5, &[16], &cfg, false)?;
//! let request = sample_unlearning(&train, 0.02, 7)?;
//! let tid = TidConfig {
//!     distill: TrainConfig { loss: LossKind::KlToTargets, ..cfg.clone() },
//!     rectify: TrainConfig { epochs: 2, ..cfg.clone() },
//!     parallel: false,
//! };
//! let report = handle_request(&mut ensemble, &train, &request, &tid)?;
//! assert_eq!(report.ledger_total, request.len());
//! # Ok(())
//! # }
//! ```

pub mod baselines;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod matrix;
pub mod nn;
pub mod roel;
pub mod seeds;
pub mod tid;

pub use error::{EtidError, Result};
