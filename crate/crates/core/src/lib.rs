//! Dual-embedding neural collaborative filtering for implicit feedback.
//!
//! Each user and item is represented by an ID embedding plus a history
//! embedding aggregated from its interactions. The crate provides the data
//! pipeline, the DGMF / DMLP / DNMF / DNCF-MF models with hand-written
//! backpropagation, Adam and SGD, and leave-one-out ranking evaluation.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{load_dataset, Dataset, InteractionStore, TestInstance};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use models::{fuse, Model, ModelKind, ModelSpec};
pub use nn::CombinerKind;
pub use optim::{Optimizer, OptimizerKind};
pub use train::{fit, TrainSettings};
