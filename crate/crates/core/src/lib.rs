//! Pseudo-label refinement by box-prompt search.
//!
//! Given target-model class probabilities and per-pixel features, the engine
//! grows a box prompt for every foreground class, queries a promptable
//! segmenter with it, keeps the mask where the segmenter output settles, and
//! cleans the result with connected-component filtering.

pub mod aggregation;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod search;
pub mod segmenter;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::{BinaryMask, BoxPrompt};
pub use postprocess::{
    assemble_labels, connected_components, keep_largest, ComponentLabeling, Connectivity,
};
pub use search::{
    search_class, PixelSet, Profile, SearchConfig, SearchOutcome, SearchTrace, Termination,
};
pub use segmenter::{BackendSpec, MockBackend, ProcessBackend, SegmenterBackend, SegmenterSession};
pub use tensor::{DenseTensor, Dtype, FeatureMap, LabelMask, ProbabilityMap};
