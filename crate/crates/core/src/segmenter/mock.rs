//! Deterministic stand-in for a promptable segmenter.
//!
//! The image carries one tissue id per pixel (`0` is background). The mock
//! segments every non-background pixel inside the box, regardless of class,
//! and its features are one random orthonormal direction per tissue plus a
//! small per-pixel perturbation.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    check_box, image_dims, BackendStats, CallCounters, Capabilities, SegmenterBackend,
    SegmenterSession,
};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoxPrompt};
use crate::search::PixelSet;
use crate::tensor::{DenseTensor, FeatureMap, LabelMask, ProbabilityMap};

pub const MOCK_FEATURE_DIM: usize = 16;

/// Largest perturbation norm added to a pixel's base direction.
pub const MOCK_PERTURBATION: f64 = 0.05;

/// Tissue id of every pixel of an image tensor (first channel of RGB).
pub fn tissue_map(image: &DenseTensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = image_dims(image)?;
    let channels = if image.ndim() == 3 { 3 } else { 1 };
    let values = image.to_f64_vec();
    let mut tissue = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let v = values[i * channels];
        if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 256.0) {
            return Err(Error::InvalidTensor(format!(
                "mock image values must be integer tissue ids in 0..256, found {v}"
            )));
        }
        tissue.push(v as u8);
    }
    Ok((h, w, tissue))
}

/// `count` random orthonormal vectors of length `dim`.
pub fn orthonormal_bases(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return Err(Error::InvalidArgument(format!(
            "cannot build {count} orthonormal vectors in {dim} dimensions"
        )));
    }
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(count);
    while bases.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &bases {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            bases.push(v);
        }
    }
    Ok(bases)
}

/// Features of a tissue map: the tissue's base vector plus a random offset of
/// norm at most `max_perturbation`, drawn pixel by pixel in row-major order.
pub fn tissue_features(
    tissue: &[u8],
    height: usize,
    width: usize,
    dim: usize,
    seed: u64,
    max_perturbation: f64,
) -> Result<FeatureMap> {
    let tissues = tissue.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = orthonormal_bases(&mut rng, tissues, dim)?;
    let mut data = Vec::with_capacity(height * width * dim);
    let mut offset = vec![0.0f64; dim];
    for &t in tissue {
        offset
            .iter_mut()
            .for_each(|x| *x = rng.sample(StandardNormal));
        let n = offset.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let scale = rng.random_range(0.0..max_perturbation) / n;
        data.extend(
            bases[t as usize]
                .iter()
                .zip(&offset)
                .map(|(b, o)| (b + scale * o) as f32),
        );
    }
    FeatureMap::new(height, width, dim, data)
}

#[derive(Debug)]
pub struct MockBackend {
    seed: u64,
    features: bool,
    dim: usize,
    counters: CallCounters,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            features: true,
            dim: MOCK_FEATURE_DIM,
            counters: CallCounters::default(),
        }
    }

    /// A backend that refuses to expose features.
    pub fn without_features(seed: u64) -> Self {
        Self {
            features: false,
            ..Self::new(seed)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl SegmenterBackend for MockBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            features: self.features,
            feature_dim: if self.features { self.dim } else { 0 },
        }
    }

    fn open_session(
        &self,
        image_id: &str,
        image: &DenseTensor,
    ) -> Result<Box<dyn SegmenterSession + '_>> {
        let (height, width, tissue) = tissue_map(image)?;
        self.counters.embed();
        Ok(Box::new(MockSession {
            backend: self,
            image_id: image_id.to_owned(),
            height,
            width,
            foreground: BinaryMask::from_fn(height, width, |i| tissue[i] > 0),
            tissue,
            features: OnceLock::new(),
        }))
    }

    fn stats(&self) -> BackendStats {
        self.counters.snapshot()
    }
}

struct MockSession<'a> {
    backend: &'a MockBackend,
    image_id: String,
    height: usize,
    width: usize,
    tissue: Vec<u8>,
    foreground: BinaryMask,
    features: OnceLock<Arc<FeatureMap>>,
}

impl SegmenterSession for MockSession<'_> {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn segment(&mut self, bx: &BoxPrompt) -> Result<BinaryMask> {
        check_box(bx, self.height, self.width)?;
        self.backend.counters.segment();
        Ok(self.foreground.restrict_to_box(bx))
    }

    fn features(&mut self) -> Result<Arc<FeatureMap>> {
        if !self.backend.features {
            return Err(Error::Capability("features"));
        }
        self.backend.counters.features();
        if let Some(f) = self.features.get() {
            return Ok(f.clone());
        }
        let f = Arc::new(tissue_features(
            &self.tissue,
            self.height,
            self.width,
            self.backend.dim,
            self.backend.seed,
            MOCK_PERTURBATION,
        )?);
        Ok(self.features.get_or_init(|| f).clone())
    }
}

/// A fully specified synthetic slice: tissue layout, target-model outputs and
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MockScene {
    pub height: usize,
    pub width: usize,
    /// Number of label classes including background.
    pub classes: usize,
    /// Per-pixel tissue id; ids `1..classes` are annotated classes, larger
    /// ids are unannotated structures the segmenter still responds to.
    pub tissue: Vec<u8>,
    pub target_features: FeatureMap,
    pub probs: ProbabilityMap,
}

impl MockScene {
    /// Image tensor understood by [`MockBackend`].
    pub fn image(&self) -> DenseTensor {
        let v = self.tissue.iter().map(|&t| t as f32).collect();
        DenseTensor::from_f32(vec![self.height, self.width], v).expect("scene has positive size")
    }

    pub fn ground_truth(&self) -> LabelMask {
        let v = self
            .tissue
            .iter()
            .map(|&t| if (t as usize) < self.classes { t } else { 0 })
            .collect();
        LabelMask::new(self.height, self.width, self.classes, v).expect("tissue ids below classes")
    }

    /// Ground-truth objects as `(class, pixels)`, one per present class.
    pub fn objects(&self) -> Vec<(usize, PixelSet)> {
        (1..self.classes)
            .filter_map(|k| {
                let m =
                    BinaryMask::from_fn(self.height, self.width, |i| self.tissue[i] as usize == k);
                m.any().then(|| (k, PixelSet::from_mask(&m)))
            })
            .collect()
    }

    /// Every pixel the mock segmenter treats as foreground.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |i| self.tissue[i] > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    }

    fn two_object_image() -> DenseTensor {
        // 8x8 with a 3x3 object of tissue 1 at (1,1) and a 2x2 of tissue 2 at (5,5)
        let mut v = vec![0.0f32; 64];
        for r in 1..4 {
            for c in 1..4 {
                v[r * 8 + c] = 1.0;
            }
        }
        for r in 5..7 {
            for c in 5..7 {
                v[r * 8 + c] = 2.0;
            }
        }
        DenseTensor::from_f32(vec![8, 8], v).unwrap()
    }

    #[test]
    fn segment_rule() {
        let backend = MockBackend::new(1);
        let mut s = backend.open_session("a", &two_object_image()).unwrap();
        let all = s.segment(&BoxPrompt::full(8, 8)).unwrap();
        assert_eq!(all.count(), 13);
        let inner = s.segment(&BoxPrompt::new(2, 2, 2, 3).unwrap()).unwrap();
        assert_eq!(inner.ones().collect::<Vec<_>>(), vec![18, 19]);
        let exact = s.segment(&BoxPrompt::new(1, 1, 3, 3).unwrap()).unwrap();
        let padded = s.segment(&BoxPrompt::new(0, 0, 3, 4).unwrap()).unwrap();
        assert_eq!(exact, padded);
        assert!(s.segment(&BoxPrompt::new(0, 0, 8, 2).unwrap()).is_err());
    }

    #[test]
    fn embeds_once_per_session() {
        let backend = MockBackend::new(1);
        let mut s = backend.open_session("a", &two_object_image()).unwrap();
        for _ in 0..5 {
            s.segment(&BoxPrompt::full(8, 8)).unwrap();
        }
        s.features().unwrap();
        s.features().unwrap();
        let st = backend.stats();
        assert_eq!(
            (st.embed_calls, st.segment_calls, st.feature_calls),
            (1, 5, 2)
        );
    }

    #[test]
    fn feature_geometry() {
        let backend = MockBackend::new(9);
        let mut s = backend.open_session("a", &two_object_image()).unwrap();
        let f = s.features().unwrap();
        assert_eq!((f.height(), f.width(), f.dim()), (8, 8, MOCK_FEATURE_DIM));
        assert!(cosine_distance(f.pixel(1, 1), f.pixel(3, 3)) < 0.1);
        assert!(cosine_distance(f.pixel(1, 1), f.pixel(0, 0)) > 0.5);
        assert!(cosine_distance(f.pixel(1, 1), f.pixel(5, 5)) > 0.5);
        let again = MockBackend::new(9)
            .open_session("b", &two_object_image())
            .unwrap()
            .features()
            .unwrap();
        assert_eq!(f.data(), again.data());
    }

    #[test]
    fn capability_error_without_features() {
        let backend = MockBackend::without_features(0);
        assert!(!backend.capabilities().features);
        let mut s = backend.open_session("a", &two_object_image()).unwrap();
        assert!(matches!(s.features(), Err(Error::Capability(_))));
    }

    #[test]
    fn rejects_non_integer_images() {
        let img = DenseTensor::from_f32(vec![2, 2], vec![0.0, 0.5, 1.0, 1.0]).unwrap();
        assert!(MockBackend::new(0).open_session("a", &img).is_err());
    }

    #[test]
    fn bases_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = orthonormal_bases(&mut rng, 5, 8).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(orthonormal_bases(&mut rng, 9, 8).is_err());
    }
}
