//! Class-incremental learning engine.
//!
//! Tasks of `k` new classes arrive one after another. Each new task is ordered
//! into a curriculum by feature-prototype similarity to the previous task,
//! trained jointly with replayed exemplars under cross-entropy plus a
//! contrastive distillation regularizer against the frozen previous model,
//! then summarised into a small exemplar set chosen by cluster-membership
//! entropy, and finally fine-tuned on a class-balanced set.

pub mod backbone;
pub mod checkpoint;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod memory;
pub mod numkit;
pub mod subset;

pub use backbone::{Activation, FrozenModel, IncrementalModel, OptimizerKind, OptimizerState};
pub use data::{ClassId, FeatureMatrix, TaskSet, TaskStream};
pub use error::{Error, Result};
pub use numkit::{Matrix, Vector};
