//! Brute-force references and random instance generators shared by the
//! integration suites.
#![allow(dead_code)]

use std::collections::VecDeque;

use promptrefine::postprocess::Connectivity;
use promptrefine::search::PixelSet;
use promptrefine::{BinaryMask, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cosine(a: &[f32], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * y).sum();
    let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

fn within(a: usize, b: usize, w: usize, radius: usize) -> bool {
    let (dr, dc) = (
        (a / w) as f64 - (b / w) as f64,
        (a % w) as f64 - (b % w) as f64,
    );
    (dr * dr + dc * dc).sqrt() < radius as f64
}

/// Checks every (candidate, member) pair directly.
pub fn tbs_oracle(set: &PixelSet, feats: &FeatureMap, tau_f: f64, radius: usize) -> Vec<usize> {
    let (h, w) = (set.height(), set.width());
    (0..h * w)
        .filter(|&p| {
            set.contains(p)
                || set.members().iter().any(|&q| {
                    let fq: Vec<f64> = feats.pixel_at(q).iter().map(|&x| x as f64).collect();
                    within(p, q, w, radius)
                        && cosine(feats.pixel_at(p), &fq).is_some_and(|s| s > tau_f)
                })
        })
        .collect()
}

pub fn mbs_oracle(
    set: &PixelSet,
    feats: &FeatureMap,
    c_m: &[f64],
    tau_d: f64,
    radius: usize,
) -> Vec<usize> {
    let (h, w) = (set.height(), set.width());
    (0..h * w)
        .filter(|&p| {
            set.contains(p)
                || (set.members().iter().any(|&q| within(p, q, w, radius))
                    && cosine(feats.pixel_at(p), c_m).is_some_and(|s| 1.0 - s < tau_d))
        })
        .collect()
}

fn neighbours(c: Connectivity) -> &'static [(isize, isize)] {
    match c {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    }
}

/// Flood-fill labelling, ids in raster order of each component's first pixel.
pub fn components_oracle(mask: &BinaryMask, c: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    for start in 0..h * w {
        if !mask.get_index(start) || labels[start] != 0 {
            continue;
        }
        sizes.push(0);
        let id = sizes.len() as u32;
        labels[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            sizes[id as usize - 1] += 1;
            for &(dr, dc) in neighbours(c) {
                let (r, cc) = ((i / w) as isize + dr, (i % w) as isize + dc);
                if r < 0 || cc < 0 || r >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = r as usize * w + cc as usize;
                if mask.get_index(j) && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, sizes)
}

pub fn keep_largest_oracle(mask: &BinaryMask, c: Connectivity) -> BinaryMask {
    let (labels, sizes) = components_oracle(mask, c);
    let Some(&max) = sizes.iter().max() else {
        return mask.clone();
    };
    let id = sizes.iter().position(|&s| s == max).unwrap() as u32 + 1;
    BinaryMask::from_fn(mask.height(), mask.width(), |i| labels[i] == id)
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let density = rng.random_range(0.1..0.7);
    BinaryMask::from_fn(h, w, |_| rng.random_bool(density))
}

pub fn random_set(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PixelSet {
    let n = rng.random_range(1..=6);
    let coords: Vec<(usize, usize)> = (0..n)
        .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
        .collect();
    PixelSet::from_coords(h, w, &coords).unwrap()
}

/// Small-integer features, so cosines sit far from any threshold used in the
/// suites. About one pixel in twenty is the zero vector.
pub fn random_features(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize) -> FeatureMap {
    let mut v = Vec::with_capacity(h * w * dim);
    for _ in 0..h * w {
        let zero = rng.random_bool(0.05);
        for _ in 0..dim {
            v.push(if zero {
                0.0
            } else {
                rng.random_range(-2i32..=2) as f32
            });
        }
    }
    FeatureMap::new(h, w, dim, v).unwrap()
}

/// Masks of a `1 x 200` strip with the first `n` pixels set.
pub fn prefix_masks(sizes: &[usize]) -> Vec<BinaryMask> {
    sizes
        .iter()
        .map(|&n| BinaryMask::from_fn(1, 200, |i| i < n))
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
