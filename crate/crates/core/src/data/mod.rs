//! File formats, manifests, checkpoints, synthetic data and projection.

pub mod checkpoint;
pub mod dataset;
pub mod io;
pub mod manifest;
pub mod project;
pub mod synth;

pub use checkpoint::{load_classifier, load_ufd, save_classifier, save_ufd};
pub use dataset::{Dataset, Split};
pub use io::{read_embeddings, read_labels, write_embeddings, write_labels};
pub use manifest::{Manifest, ManifestEntry, ManifestFile};
pub use project::{pca_project_2d, Projection};
pub use synth::{synth_generate, RowCounts, SynthConfig, SynthData, SynthSet};
