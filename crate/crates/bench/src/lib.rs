//! Shared fixtures for the benchmarks.

use promptrefine::pipeline::{synth_scene, SynthParams};
use promptrefine::segmenter::MockScene;
use promptrefine::{BinaryMask, FeatureMap};

/// A default-sized synthetic slice.
pub fn scene(seed: u64, dispersion: f64) -> MockScene {
    let params = SynthParams {
        seed,
        dispersion,
        ..SynthParams::default()
    };
    synth_scene(&params, 0).expect("default parameters are valid")
}

/// Deterministic speckled mask with a few large blobs.
pub fn speckle(height: usize, width: usize) -> BinaryMask {
    BinaryMask::from_fn(height, width, |i| {
        let (r, c) = (i / width, i % width);
        let blob = (r / 24 + c / 24) % 3 == 0;
        let noise = (i.wrapping_mul(2654435761) >> 7) % 11 == 0;
        blob ^ noise
    })
}

/// Features that vary smoothly across the image.
pub fn smooth_features(height: usize, width: usize, dim: usize) -> FeatureMap {
    let mut v = Vec::with_capacity(height * width * dim);
    for i in 0..height * width {
        let (r, c) = ((i / width) as f32, (i % width) as f32);
        for j in 0..dim {
            v.push((r * 0.01 * (j + 1) as f32).sin() + (c * 0.013).cos() + j as f32 * 0.1);
        }
    }
    FeatureMap::new(height, width, dim, v).expect("sizes match")
}
