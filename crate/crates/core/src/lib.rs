pub mod config;
pub mod container;
pub mod dsp;
pub mod eegnet;
pub mod error;
pub mod eval;
pub mod labels;
pub mod numerics;
pub mod pipelines;
pub mod recording;
pub mod smlr;
pub mod synth;

pub use config::{PipelineConfig, TrainConfig};
pub use error::{Error, Result};
pub use recording::{FeatureSet, LabelVector, LaneDepartureEvent, Recording, SampleGrid};
