pub mod autodiff;
pub mod cli;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod schema;
pub mod stats;
pub mod tensor;
pub mod training;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use model::{AttentionMode, Batch, FusionModel, ModelConfig, ModelDims, ModelKind};
pub use schema::{DatasetSchema, Modality, CLASS_NAMES, NUM_CLASSES};
pub use tensor::Tensor;
