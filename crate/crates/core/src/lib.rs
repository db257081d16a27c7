//! Shift-variant filtered backprojection for circular cone-beam CT with a
//! trainable redundancy weight.
//!
//! Every numeric routine is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod data;
pub mod error;
pub mod fdk;
pub mod geometry;
pub mod io;
pub mod learning;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod scalar;
pub mod transforms;
pub mod weights;
pub mod workflow;

pub use data::{LineSinogramStack, ProjectionStack, Volume};
pub use error::{Error, Result};
pub use geometry::{DetectorGrid, LineGrid, OrbitGeometry, VolumeGrid};
pub use learning::{TrainConfig, TrainOutcome, TrainSample};
pub use pipeline::{Pipeline, PipelineConfig, Precision};
pub use scalar::{Dtype, Real};
pub use weights::{WeightMap, WeightRole};

pub type Volume64 = Volume<f64>;
pub type Volume32 = Volume<f32>;
pub type ProjectionStack64 = ProjectionStack<f64>;
pub type ProjectionStack32 = ProjectionStack<f32>;
pub type WeightMap64 = WeightMap<f64>;
pub type WeightMap32 = WeightMap<f32>;
pub type Pipeline64 = Pipeline<f64>;
pub type Pipeline32 = Pipeline<f32>;
