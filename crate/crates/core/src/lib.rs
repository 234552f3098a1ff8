//! Streaming data selection for a linear-softmax readout over frozen
//! embeddings, scored by how much a candidate's gradient step would move the
//! model's predictions on its class.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod scoring;
pub mod selection;
pub mod stream;

pub use error::{Error, FormatError, Result};
pub use harness::{run, IdsConfig, ReplaySampling, RunResult};
pub use model::LinearSoftmax;
pub use scoring::{AcquisitionMethod, ScoringConfig};
pub use stream::{Dataset, Example, Splits, SyntheticSpec};
