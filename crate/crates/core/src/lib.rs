//! Sharpness measurement, sharpness-aware training and loss-landscape
//! tooling for small binary (bona fide / spoof) classifiers, plus a
//! synthetic domain-shift benchmark and an experiment harness.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod landscape;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod sharpness;
pub mod synthbench;
pub mod tensor;

pub use data::{Batch, Dataset, BONA_FIDE, SPOOF};
pub use error::{Error, Result};
pub use model::{Activation, ClassWeights, MlpModel, MlpSpec};
pub use objective::Objective;
pub use tensor::{ParamLayout, ParamVector, Tensor};
