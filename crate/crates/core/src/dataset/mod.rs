//! Dataset tooling: JSON-lines manifests, stratified splits, and the
//! synthetic two-class motion dataset used for desk-scale training.

pub mod manifest;
pub mod split;
pub mod synth;

pub use manifest::{ingest_manifest, read_manifest, write_manifest, DatasetManifest, SplitSet};
pub use split::split_dataset;
pub use synth::{generate_dataset, generate_frames, generate_synthetic_video, MotionClass, SynthSpec};
