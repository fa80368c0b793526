//! Feature ingestion, splitting and synthetic data.

pub mod dataset;
pub mod folds;
pub mod ftns;
pub mod manifest;
pub mod scaler;
pub mod synth;

pub use dataset::{pad_or_truncate, FeatureSequence, LoadedDataset};
pub use folds::{make_folds, FoldSplit, SplitRatios};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, UtteranceRecord};
pub use scaler::{Split, StandardScaler};
pub use synth::{synth_generate, SynthSpec, MANIFEST_FILE};
