//! Promptable segmenter backends.
//!
//! A backend opens one session per image. Opening a session embeds the image;
//! every later `segment` call on that session reuses the embedding.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoxPrompt};
use crate::tensor::{DenseTensor, FeatureMap};

pub mod conformance;
pub mod mock;
pub mod process;
pub mod protocol;

pub use mock::{MockBackend, MockScene, MOCK_FEATURE_DIM};
pub use process::ProcessBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub features: bool,
    /// Segmenter feature dimension when features are exposed.
    pub feature_dim: usize,
}

/// Snapshot of a backend's call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackendStats {
    pub embed_calls: usize,
    pub segment_calls: usize,
    pub feature_calls: usize,
}

#[derive(Debug, Default)]
pub struct CallCounters {
    embed: AtomicUsize,
    segment: AtomicUsize,
    features: AtomicUsize,
}

impl CallCounters {
    pub fn embed(&self) {
        self.embed.fetch_add(1, Ordering::Relaxed);
    }

    pub fn segment(&self) {
        self.segment.fetch_add(1, Ordering::Relaxed);
    }

    pub fn features(&self) {
        self.features.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> BackendStats {
        BackendStats {
            embed_calls: self.embed.load(Ordering::Relaxed),
            segment_calls: self.segment.load(Ordering::Relaxed),
            feature_calls: self.features.load(Ordering::Relaxed),
        }
    }
}

pub trait SegmenterBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Embeds `image` (`[H, W]` or `[H, W, 3]`) and returns a session bound to it.
    fn open_session(
        &self,
        image_id: &str,
        image: &DenseTensor,
    ) -> Result<Box<dyn SegmenterSession + '_>>;

    fn stats(&self) -> BackendStats;
}

/// A single-owner handle on one embedded image.
pub trait SegmenterSession {
    fn image_id(&self) -> &str;

    fn height(&self) -> usize;

    fn width(&self) -> usize;

    fn segment(&mut self, bx: &BoxPrompt) -> Result<BinaryMask>;

    /// Per-pixel segmenter features, or a capability error.
    fn features(&mut self) -> Result<Arc<FeatureMap>>;
}

/// Height and width of an image tensor of shape `[H, W]` or `[H, W, 3]`.
pub fn image_dims(image: &DenseTensor) -> Result<(usize, usize)> {
    match image.shape() {
        [h, w] | [h, w, 3] => Ok((*h, *w)),
        s => Err(Error::InvalidTensor(format!(
            "image must be [H, W] or [H, W, 3], got {s:?}"
        ))),
    }
}

pub(crate) fn check_box(bx: &BoxPrompt, h: usize, w: usize) -> Result<()> {
    if bx.fits(h, w) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "box {bx} outside {h}x{w} image"
        )))
    }
}

/// Parses `mock:<seed>` or `proc:<command line>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock { seed: u64 },
    Process { command: Vec<String> },
}

impl std::str::FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(seed) = s.strip_prefix("mock:") {
            let seed = seed.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "mock backend seed must be an integer, got {seed:?}"
                ))
            })?;
            Ok(BackendSpec::Mock { seed })
        } else if let Some(cmd) = s.strip_prefix("proc:") {
            let command: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if command.is_empty() {
                return Err(Error::Config("proc backend needs a command line".into()));
            }
            Ok(BackendSpec::Process { command })
        } else {
            Err(Error::Config(format!(
                "backend must be mock:<seed> or proc:<cmdline>, got {s:?}"
            )))
        }
    }
}

impl BackendSpec {
    /// Instantiates the backend with up to `workers` external processes.
    pub fn build(&self, workers: usize) -> Result<Box<dyn SegmenterBackend>> {
        Ok(match self {
            BackendSpec::Mock { seed } => Box::new(MockBackend::new(*seed)),
            BackendSpec::Process { command } => Box::new(ProcessBackend::spawn(command, workers)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_spec_parsing() {
        assert_eq!(
            "mock:7".parse::<BackendSpec>().unwrap(),
            BackendSpec::Mock { seed: 7 }
        );
        assert_eq!(
            "proc:python worker.py --model m"
                .parse::<BackendSpec>()
                .unwrap(),
            BackendSpec::Process {
                command: vec![
                    "python".into(),
                    "worker.py".into(),
                    "--model".into(),
                    "m".into()
                ]
            }
        );
        assert!("mock:x".parse::<BackendSpec>().is_err());
        assert!("proc:".parse::<BackendSpec>().is_err());
        assert!("gpu".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn image_dims_accepts_gray_and_rgb() {
        let g = DenseTensor::from_f32(vec![3, 4], vec![0.0; 12]).unwrap();
        assert_eq!(image_dims(&g).unwrap(), (3, 4));
        let c = DenseTensor::from_f32(vec![3, 4, 3], vec![0.0; 36]).unwrap();
        assert_eq!(image_dims(&c).unwrap(), (3, 4));
        let bad = DenseTensor::from_f32(vec![3, 4, 2], vec![0.0; 24]).unwrap();
        assert!(image_dims(&bad).is_err());
    }
}
