//! Synthetic slices with known ground truth.
//!
//! Each foreground class is one rectangle in its own grid cell. Next to it
//! lies a strip of unannotated tissue that the segmenter still responds to.
//! A small patch inside that strip gets the class's most confident target
//! output, so the initial box reaches into the strip. A `dispersion` fraction
//! of each object gets background-like target features: half as a band
//! along one side, half as scattered pixels.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::segmenter::MockScene;
use crate::tensor::{FeatureMap, ProbabilityMap};

pub const TARGET_FEATURE_DIM: usize = 8;
pub const MAX_CLASSES: usize = TARGET_FEATURE_DIM;
const TARGET_NOISE: f64 = 0.05;
const LOGIT_SCALE: f64 = 5.0;
/// Grid cell size the layout constants below are tuned for.
const REFERENCE_CELL: f64 = 96.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_slices: usize,
    pub height: usize,
    pub width: usize,
    /// Label classes including background.
    pub classes: usize,
    pub dispersion: f64,
    pub slices_per_volume: usize,
    pub false_positive_patches: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_slices: 20,
            height: 192,
            width: 192,
            classes: 3,
            dispersion: 0.0,
            slices_per_volume: 5,
            false_positive_patches: true,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::InvalidArgument(format!(
                "synthetic images must be at least 32x32, got {}x{}",
                self.height, self.width
            )));
        }
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::InvalidArgument(format!(
                "classes must be in 2..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        if !(0.0..=1.0).contains(&self.dispersion) {
            return Err(Error::InvalidArgument(format!(
                "dispersion must be in [0, 1], got {}",
                self.dispersion
            )));
        }
        if self.n_slices == 0 || self.slices_per_volume == 0 {
            return Err(Error::InvalidArgument(
                "need at least one slice per volume".into(),
            ));
        }
        Ok(())
    }

    pub fn slice_id(&self, index: usize) -> String {
        format!("s{index:04}")
    }

    pub fn volume_id(&self, index: usize) -> String {
        format!("v{:03}", index / self.slices_per_volume)
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r0 + self.h && c >= self.c0 && c < self.c0 + self.w
    }
}

/// Which side of the object something sits on.
#[derive(Debug, Clone, Copy)]
enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl Side {
    fn pick(rng: &mut ChaCha8Rng) -> Self {
        [Side::Top, Side::Bottom, Side::Left, Side::Right][rng.random_range(0..4)]
    }

    fn vertical(self) -> bool {
        matches!(self, Side::Top | Side::Bottom)
    }
}

struct Layout {
    object: Rect,
    distractor: Rect,
    patch: Rect,
}

fn layout(rng: &mut ChaCha8Rng, cell: Rect, scale: f64) -> Layout {
    let sz = |x: f64| ((x * scale).round() as usize).max(1);
    let pad = sz(9.0);
    let avail_h = cell.h.saturating_sub(2 * pad).max(4);
    let avail_w = cell.w.saturating_sub(2 * pad).max(4);
    let side = Side::pick(rng);
    let gap = rng.random_range(sz(2.0).max(2)..=sz(4.0).max(2));
    let thick = rng.random_range(sz(8.0)..=sz(14.0));
    let mut oh = rng.random_range(sz(48.0)..=sz(60.0));
    let mut ow = rng.random_range(sz(48.0)..=sz(60.0));
    let (mut total_h, mut total_w) = if side.vertical() {
        (oh + gap + thick, ow)
    } else {
        (oh, ow + gap + thick)
    };
    if total_h > avail_h {
        oh = oh.saturating_sub(total_h - avail_h).max(1);
        total_h = avail_h;
    }
    if total_w > avail_w {
        ow = ow.saturating_sub(total_w - avail_w).max(1);
        total_w = avail_w;
    }
    let r0 = cell.r0 + pad + rng.random_range(0..=avail_h - total_h.min(avail_h));
    let c0 = cell.c0 + pad + rng.random_range(0..=avail_w - total_w.min(avail_w));
    let (object, distractor) = match side {
        Side::Top => (
            Rect {
                r0: r0 + thick + gap,
                c0,
                h: oh,
                w: ow,
            },
            Rect {
                r0,
                c0,
                h: thick,
                w: ow,
            },
        ),
        Side::Bottom => (
            Rect {
                r0,
                c0,
                h: oh,
                w: ow,
            },
            Rect {
                r0: r0 + oh + gap,
                c0,
                h: thick,
                w: ow,
            },
        ),
        Side::Left => (
            Rect {
                r0,
                c0: c0 + thick + gap,
                h: oh,
                w: ow,
            },
            Rect {
                r0,
                c0,
                h: oh,
                w: thick,
            },
        ),
        Side::Right => (
            Rect {
                r0,
                c0,
                h: oh,
                w: ow,
            },
            Rect {
                r0,
                c0: c0 + ow + gap,
                h: oh,
                w: thick,
            },
        ),
    };
    // patch sits in the half of the strip nearer the object, away from its ends
    let p = sz(3.0).min(thick);
    let depth = rng.random_range(0..=(thick / 2).saturating_sub(p));
    let along_len = if side.vertical() { ow } else { oh };
    let lo = along_len / 4;
    let hi = (along_len * 3 / 4).saturating_sub(p).max(lo);
    let along = rng.random_range(lo..=hi);
    let patch = match side {
        Side::Top => Rect {
            r0: distractor.r0 + thick - depth - p,
            c0: distractor.c0 + along,
            h: p,
            w: p,
        },
        Side::Bottom => Rect {
            r0: distractor.r0 + depth,
            c0: distractor.c0 + along,
            h: p,
            w: p,
        },
        Side::Left => Rect {
            r0: distractor.r0 + along,
            c0: distractor.c0 + thick - depth - p,
            h: p,
            w: p,
        },
        Side::Right => Rect {
            r0: distractor.r0 + along,
            c0: distractor.c0 + depth,
            h: p,
            w: p,
        },
    };
    Layout {
        object,
        distractor,
        patch,
    }
}

/// Object pixels whose target features are replaced by background-like ones.
fn dispersed_pixels(rng: &mut ChaCha8Rng, obj: Rect, width: usize, fraction: f64) -> Vec<usize> {
    if fraction <= 0.0 {
        return Vec::new();
    }
    let side = Side::pick(rng);
    let band = |extent: usize| ((fraction / 2.0 * extent as f64).round() as usize).min(extent);
    let in_band = |r: usize, c: usize| match side {
        Side::Top => r < obj.r0 + band(obj.h),
        Side::Bottom => r >= obj.r0 + obj.h - band(obj.h),
        Side::Left => c < obj.c0 + band(obj.w),
        Side::Right => c >= obj.c0 + obj.w - band(obj.w),
    };
    let mut banded = Vec::new();
    let mut rest = Vec::new();
    for r in obj.r0..obj.r0 + obj.h {
        for c in obj.c0..obj.c0 + obj.w {
            if in_band(r, c) {
                banded.push(r * width + c);
            } else {
                rest.push(r * width + c);
            }
        }
    }
    let scattered = ((fraction / 2.0 * (obj.h * obj.w) as f64).round() as usize).min(rest.len());
    let mut picked: Vec<usize> = sample(rng, rest.len(), scattered)
        .into_iter()
        .map(|i| rest[i])
        .collect();
    picked.extend(banded);
    picked.sort_unstable();
    picked
}

fn noisy_basis(rng: &mut ChaCha8Rng, axis: usize, dim: usize, out: &mut Vec<f32>) {
    let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = noise.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let scale = rng.random_range(0.0..TARGET_NOISE) / n;
    out.extend((0..dim).map(|j| ((j == axis) as u8 as f64 + scale * noise[j]) as f32));
}

fn softmax_probs(feature: &[f32], classes: usize, out: &mut Vec<f32>) {
    let logits: Vec<f64> = (0..classes)
        .map(|k| LOGIT_SCALE * feature[k] as f64)
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    out.extend(e.iter().map(|x| (x / s) as f32));
}

/// Builds slice `index` of the dataset described by `params`.
pub fn synth_scene(params: &SynthParams, index: usize) -> Result<MockScene> {
    params.validate()?;
    let (h, w, k) = (params.height, params.width, params.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);

    let g = (((k - 1) as f64).sqrt().ceil() as usize).max(1);
    let (cell_h, cell_w) = (h / g, w / g);
    let scale = cell_h.min(cell_w) as f64 / REFERENCE_CELL;
    let distractor_id = k as u8;

    let mut tissue = vec![0u8; h * w];
    let mut layouts = Vec::with_capacity(k - 1);
    for class in 1..k {
        let cell = Rect {
            r0: (class - 1) / g * cell_h,
            c0: (class - 1) % g * cell_w,
            h: cell_h,
            w: cell_w,
        };
        let lay = layout(&mut rng, cell, scale);
        for r in 0..h {
            for c in 0..w {
                if lay.object.contains(r, c) {
                    tissue[r * w + c] = class as u8;
                } else if lay.distractor.contains(r, c) {
                    tissue[r * w + c] = distractor_id;
                }
            }
        }
        layouts.push(lay);
    }

    let mut base: Vec<usize> = tissue
        .iter()
        .map(|&t| if t == distractor_id { 0 } else { t as usize })
        .collect();
    for lay in &layouts {
        for i in dispersed_pixels(&mut rng, lay.object, w, params.dispersion) {
            base[i] = 0;
        }
    }

    let dim = TARGET_FEATURE_DIM;
    let mut feats = Vec::with_capacity(h * w * dim);
    for &b in &base {
        noisy_basis(&mut rng, b, dim, &mut feats);
    }
    let mut probs = Vec::with_capacity(h * w * k);
    for f in feats.chunks_exact(dim) {
        softmax_probs(f, k, &mut probs);
    }

    if params.false_positive_patches {
        for (i, lay) in layouts.iter().enumerate() {
            let class = i + 1;
            let mut best: Option<(usize, f32)> = None;
            for p in 0..h * w {
                let v = probs[p * k + class];
                if tissue[p] as usize == class && best.is_none_or(|(_, b)| v > b) {
                    best = Some((p, v));
                }
            }
            let Some((src, _)) = best else { continue };
            let (f_src, p_src) = (
                feats[src * dim..(src + 1) * dim].to_vec(),
                probs[src * k..(src + 1) * k].to_vec(),
            );
            for r in lay.patch.r0..lay.patch.r0 + lay.patch.h {
                for c in lay.patch.c0..lay.patch.c0 + lay.patch.w {
                    let p = r * w + c;
                    feats[p * dim..(p + 1) * dim].copy_from_slice(&f_src);
                    probs[p * k..(p + 1) * k].copy_from_slice(&p_src);
                }
            }
        }
    }

    Ok(MockScene {
        height: h,
        width: w,
        classes: k,
        tissue,
        target_features: FeatureMap::new(h, w, dim, feats)?,
        probs: ProbabilityMap::new(h, w, k, probs)?,
    })
}
