//! A small pre-norm decoder-only transformer trained from scratch on the
//! three-token artificial language, with per-epoch probes of `P(A | context,
//! penult)`.
//!
//! Differentiation is done by [`tape::Tape`], a reverse-mode tape over
//! `f64` matrices. Training is single-threaded and bitwise deterministic for
//! a given seed.

pub mod checkpoint;
pub mod error;
pub mod model;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, parameter_count, LMConfig, Vocab, LM};
pub use train::{probe, renormalize, train_and_probe, train_epoch, Adam, LossRecord, Probe, ProbeRecord, TrainRun};
