//! Batch refinement of a dataset of slices.

mod config;
mod dataset;
mod retrain;
mod run;
mod synth;

pub use config::{CpScope, RunConfig};
pub use dataset::{gen_synthetic, parse_manifest, Dataset, SliceData, SliceEntry, MANIFEST};
pub use retrain::{batch_loss, predict, retrain_toy, RetrainReport};
pub use run::{
    refine_slice, run_pipeline, run_with_backend, score, score_dir, RunSummary, Scores, SliceResult,
};
pub use synth::{synth_scene, SynthParams, MAX_CLASSES, TARGET_FEATURE_DIM};
