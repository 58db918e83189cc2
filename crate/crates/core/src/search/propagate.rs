//! Seed selection and the two region-growing rules.

use super::pixels::{disk_offsets, PixelSet};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoxPrompt};
use crate::tensor::{FeatureMap, ProbabilityMap};

/// Distances closer to zero than this are rounding noise and read as zero.
pub const COSINE_SNAP: f64 = 1e-12;

/// L2-normalised copy of a feature map. Zero-norm pixels are flagged invalid.
#[derive(Debug, Clone)]
pub struct UnitFeatures {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl UnitFeatures {
    pub fn new(feats: &FeatureMap) -> Self {
        let (h, w, d) = (feats.height(), feats.width(), feats.dim());
        let mut data = Vec::with_capacity(h * w * d);
        let mut valid = Vec::with_capacity(h * w);
        for i in 0..h * w {
            let px = feats.pixel_at(i);
            let n = px
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
                .sqrt();
            if n > 0.0 {
                data.extend(px.iter().map(|&x| x as f64 / n));
                valid.push(true);
            } else {
                data.extend(std::iter::repeat_n(0.0, d));
                valid.push(false);
            }
        }
        Self {
            height: h,
            width: w,
            dim: d,
            data,
            valid,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unit(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn zero_norm_count(&self) -> usize {
        self.valid.iter().filter(|&&v| !v).count()
    }

    /// Cosine similarity; -1 when either vector has zero norm.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        if !self.valid[a] || !self.valid[b] {
            return -1.0;
        }
        self.unit(a)
            .iter()
            .zip(self.unit(b))
            .map(|(x, y)| x * y)
            .sum()
    }

    /// `1 - cos(f_i, v)`; infinite for a zero-norm pixel or vector.
    pub fn distance_to(&self, index: usize, v: &[f64]) -> f64 {
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !self.valid[index] || nv == 0.0 {
            return f64::INFINITY;
        }
        let d = 1.0
            - self
                .unit(index)
                .iter()
                .zip(v)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / nv;
        if d.abs() < COSINE_SNAP {
            0.0
        } else {
            d
        }
    }
}

fn check_shape(set: &PixelSet, h: usize, w: usize) -> Result<()> {
    if set.height() != h || set.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "pixel set {}x{} vs feature map {h}x{w}",
            set.height(),
            set.width()
        )));
    }
    if set.is_empty() {
        return Err(Error::InvalidArgument(
            "propagation needs a nonempty pixel set".into(),
        ));
    }
    Ok(())
}

/// Calls `visit(candidate, member)` for every non-member within `radius` of a member.
fn for_each_candidate(set: &PixelSet, radius: usize, mut visit: impl FnMut(usize, usize)) {
    let (h, w) = (set.height() as isize, set.width() as isize);
    let offsets = disk_offsets(radius);
    for &m in set.members() {
        let (r, c) = ((m as isize) / w, (m as isize) % w);
        for &(dr, dc) in &offsets {
            let (rr, cc) = (r + dr, c + dc);
            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                continue;
            }
            let i = (rr * w + cc) as usize;
            if !set.contains(i) {
                visit(i, m);
            }
        }
    }
}

fn grown(set: &PixelSet, mut joined: Vec<usize>) -> PixelSet {
    joined.sort_unstable();
    joined.dedup();
    let mut out = set.clone();
    for i in joined {
        out.insert(i);
    }
    out
}

/// Most confident pixels of class `k`: `p_k > max p_k - p_delta`.
///
/// The class must appear in the arg-max prediction.
pub fn select_seed(probs: &ProbabilityMap, k: usize, p_delta: f64) -> Result<PixelSet> {
    if k == 0 || k >= probs.classes() {
        return Err(Error::InvalidArgument(format!(
            "class {k} is not a foreground class of K = {}",
            probs.classes()
        )));
    }
    if !(p_delta > 0.0 && p_delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p_delta must be in (0, 1), got {p_delta}"
        )));
    }
    if !probs.argmax().contains(k) {
        return Err(Error::ClassAbsent(k));
    }
    let (h, w) = (probs.height(), probs.width());
    let max = (0..h * w)
        .map(|i| probs.prob(i, k) as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - p_delta;
    let mut seed = PixelSet::empty(h, w);
    for i in 0..h * w {
        if probs.prob(i, k) as f64 > threshold {
            seed.insert(i);
        }
    }
    Ok(seed)
}

/// Target-feature growth: adds every non-member within distance `< radius` of
/// some member whose cosine similarity to that member exceeds `tau_f`.
pub fn tbs_step(
    current: &PixelSet,
    feats: &FeatureMap,
    tau_f: f64,
    radius: usize,
) -> Result<PixelSet> {
    tbs_step_unit(current, &UnitFeatures::new(feats), tau_f, radius)
}

pub fn tbs_step_unit(
    current: &PixelSet,
    unit: &UnitFeatures,
    tau_f: f64,
    radius: usize,
) -> Result<PixelSet> {
    check_shape(current, unit.height, unit.width)?;
    let mut joined = Vec::new();
    let mut seen = vec![false; unit.height * unit.width];
    for_each_candidate(current, radius, |cand, member| {
        if !seen[cand] && unit.similarity(cand, member) > tau_f {
            seen[cand] = true;
            joined.push(cand);
        }
    });
    Ok(grown(current, joined))
}

/// Segmenter-space prototype of the pixels in `seed_mask`: the mean of their
/// unit features, and the mean cosine distance of those features to it.
/// Zero-norm features are left out.
pub fn mbs_prototype(seed_mask: &BinaryMask, feats: &FeatureMap) -> Result<(Vec<f64>, f64)> {
    mbs_prototype_unit(seed_mask, &UnitFeatures::new(feats))
}

pub fn mbs_prototype_unit(seed_mask: &BinaryMask, unit: &UnitFeatures) -> Result<(Vec<f64>, f64)> {
    if seed_mask.height() != unit.height || seed_mask.width() != unit.width {
        return Err(Error::ShapeMismatch(
            "seed mask and feature map differ".into(),
        ));
    }
    let members: Vec<usize> = seed_mask.ones().filter(|&i| unit.is_valid(i)).collect();
    if members.is_empty() {
        return Err(Error::InvalidArgument(
            "prototype needs a nonempty seed mask".into(),
        ));
    }
    let mut proto = vec![0.0; unit.dim];
    for &i in &members {
        for (p, x) in proto.iter_mut().zip(unit.unit(i)) {
            *p += x;
        }
    }
    let n = members.len() as f64;
    proto.iter_mut().for_each(|p| *p /= n);
    let div = members
        .iter()
        .map(|&i| unit.distance_to(i, &proto))
        .sum::<f64>()
        / n;
    Ok((proto, div))
}

/// `min(tau_div * div_m, tau_max)`.
pub fn mbs_threshold(div_m: f64, tau_div: f64, tau_max: f64) -> f64 {
    (tau_div * div_m).min(tau_max)
}

/// Segmenter-feature growth: adds every non-member within distance `< radius`
/// of some member whose cosine distance to `c_m` is below the divergence
/// threshold.
pub fn mbs_step(
    current: &PixelSet,
    feats: &FeatureMap,
    c_m: &[f64],
    div_m: f64,
    tau_div: f64,
    tau_max: f64,
    radius: usize,
) -> Result<PixelSet> {
    let unit = UnitFeatures::new(feats);
    let dist = prototype_distances(&unit, c_m)?;
    mbs_step_with(
        current,
        &dist,
        mbs_threshold(div_m, tau_div, tau_max),
        radius,
    )
}

/// Distance of every pixel to `c_m`.
pub fn prototype_distances(unit: &UnitFeatures, c_m: &[f64]) -> Result<Vec<f64>> {
    if c_m.len() != unit.dim {
        return Err(Error::ShapeMismatch(format!(
            "prototype dim {} vs feature dim {}",
            c_m.len(),
            unit.dim
        )));
    }
    Ok((0..unit.height * unit.width)
        .map(|i| unit.distance_to(i, c_m))
        .collect())
}

pub fn mbs_step_with(
    current: &PixelSet,
    distances: &[f64],
    tau_d: f64,
    radius: usize,
) -> Result<PixelSet> {
    check_shape(current, current.height(), current.width())?;
    if distances.len() != current.height() * current.width() {
        return Err(Error::ShapeMismatch("distance map size".into()));
    }
    let mut joined = Vec::new();
    let mut seen = vec![false; distances.len()];
    for_each_candidate(current, radius, |cand, _| {
        if !seen[cand] {
            seen[cand] = true;
            if distances[cand] < tau_d {
                joined.push(cand);
            }
        }
    });
    Ok(grown(current, joined))
}

/// Tight box around `pixels` grown by `margin` on each side, clipped.
pub fn box_from_pixels(
    pixels: &PixelSet,
    margin: usize,
    height: usize,
    width: usize,
) -> Result<BoxPrompt> {
    let b = pixels
        .bounding_box()
        .ok_or_else(|| Error::InvalidArgument("box of an empty pixel set".into()))?;
    Ok(b.expanded(margin, height, width))
}

/// Moves each edge outward by `floor(radius / 2)`, clipped.
pub fn artificial_expand(bx: &BoxPrompt, radius: usize, height: usize, width: usize) -> BoxPrompt {
    bx.expanded(radius / 2, height, width)
}
