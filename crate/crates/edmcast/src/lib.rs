//! Time-delay embedding forecaster.

pub mod dynamics;
pub mod edm;
pub mod embedding;
pub mod error;
pub mod harness;
mod ioutil;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use dynamics::{OdeSystem, Trajectory};
pub use edm::{NeighborSource, RecallConfig, SimplexConfig};
pub use embedding::DelayEmbedding;
pub use error::Error;
pub use harness::{
    AblationParam, ExperimentConfig, ExperimentOutput, MetricRow, RecallGrid, RecallRow,
    SplitSpec, TimeSeries,
};
pub use metrics::{MaseScope, MetricReport};
pub use model::{DeepEdm, DeepEdmBlock, LossMode, ModelConfig, RevinState};
pub use nn::{AdamW, LinearLayer, Mlp};
pub use tensor::{Gradients, Tape, Tensor, Var};
pub use train::{EpochStats, LossConfig, TrainConfig, TrainReport, Window};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
