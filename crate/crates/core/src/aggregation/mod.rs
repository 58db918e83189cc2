//! Conditional-transport feature aggregation against frozen class prototypes.
//!
//! For a batch of pixel features `f` and prototypes `c_k`, logits are
//! `c_k . f / kappa`. Two posteriors are built from the same logits: a softmax
//! over classes for every pixel, and a softmax over all pixels of the batch
//! for every class. The loss weights the cosine distance `1 - cos(c_k, f)` by
//! each posterior:
//!
//! ```text
//! L = mean_pixels sum_k d(c_k, f) p(k | f)  +  mean_classes sum_pixels d(c_k, f) p(pixel | c_k)
//! ```
//!
//! The second term keeps every prototype assigned to some features.

mod train;

pub use train::{
    aggregate_train, argmax_assignment_counts, mean_nearest_prototype_distance,
    two_gaussian_batches, AffineExtractor, InputBatch, TrainConfig, TrainReport,
};

use crate::error::{Error, Result};

/// Classifier weights used as class prototypes, `K x d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    vectors: Vec<f64>,
    classes: usize,
    dim: usize,
    frozen: bool,
}

impl Prototypes {
    pub fn new(classes: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(
                "need at least two prototypes".into(),
            ));
        }
        if dim == 0 || vectors.len() != classes * dim {
            return Err(Error::ShapeMismatch(format!(
                "{classes} prototypes of dim {dim} need {} values, got {}",
                classes * dim,
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite prototype entry".into()));
        }
        Ok(Self {
            vectors,
            classes,
            dim,
            frozen: true,
        })
    }

    /// The first `classes` standard basis vectors of `R^dim`.
    pub fn orthonormal(classes: usize, dim: usize) -> Result<Self> {
        if dim < classes {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {classes} orthonormal prototypes in dim {dim}"
            )));
        }
        let mut v = vec![0.0; classes * dim];
        for k in 0..classes {
            v[k * dim + k] = 1.0;
        }
        Self::new(classes, dim, v)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }
}

/// `B` images of `N` pixels with `d`-dimensional features, plus the softmax
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Vec<f64>,
    batch: usize,
    pixels: usize,
    dim: usize,
    temperature: f64,
    normalize_logits: bool,
}

impl FeatureBatch {
    pub fn new(
        batch: usize,
        pixels: usize,
        dim: usize,
        features: Vec<f64>,
        temperature: f64,
    ) -> Result<Self> {
        if batch == 0 || pixels == 0 || dim == 0 {
            return Err(Error::InvalidArgument("empty feature batch".into()));
        }
        if features.len() != batch * pixels * dim {
            return Err(Error::ShapeMismatch(format!(
                "batch {batch}x{pixels}x{dim} needs {} values, got {}",
                batch * pixels * dim,
                features.len()
            )));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        Ok(Self {
            features,
            batch,
            pixels,
            dim,
            temperature,
            normalize_logits: false,
        })
    }

    /// Use `c_k . f / |f|` in the logits instead of the raw dot product.
    pub fn with_normalized_logits(mut self, on: bool) -> Self {
        self.normalize_logits = on;
        self
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn total_pixels(&self) -> usize {
        self.batch * self.pixels
    }

    fn feature(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }
}

/// Both directions of the transport posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `(B*N) x K`, rows sum to one.
    pub pixel_to_class: Vec<f64>,
    /// `K x (B*N)`, rows sum to one.
    pub class_to_pixel: Vec<f64>,
    pub classes: usize,
    pub pixels: usize,
}

impl Posteriors {
    pub fn pixel_row(&self, n: usize) -> &[f64] {
        &self.pixel_to_class[n * self.classes..(n + 1) * self.classes]
    }

    pub fn class_row(&self, k: usize) -> &[f64] {
        &self.class_to_pixel[k * self.pixels..(k + 1) * self.pixels]
    }

    /// Index of the most probable class of pixel `n` (ties: lowest index).
    pub fn argmax(&self, n: usize) -> usize {
        let row = self.pixel_row(n);
        (1..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

fn check_dims(batch: &FeatureBatch, protos: &Prototypes) -> Result<()> {
    if batch.dim != protos.dim {
        return Err(Error::ShapeMismatch(format!(
            "feature dim {} vs prototype dim {}",
            batch.dim, protos.dim
        )));
    }
    Ok(())
}

/// Logits `M x K`.
fn logits(batch: &FeatureBatch, protos: &Prototypes) -> Result<Vec<f64>> {
    let (m, k) = (batch.total_pixels(), protos.classes);
    let mut out = vec![0.0; m * k];
    for n in 0..m {
        let f = batch.feature(n);
        let scale = if batch.normalize_logits {
            let nf = norm(f);
            if nf == 0.0 {
                return Err(Error::ZeroNorm);
            }
            1.0 / (nf * batch.temperature)
        } else {
            1.0 / batch.temperature
        };
        for c in 0..k {
            out[n * k + c] = dot(protos.row(c), f) * scale;
        }
    }
    Ok(out)
}

fn posteriors_from_logits(s: &[f64], m: usize, k: usize) -> Posteriors {
    let mut p = s.to_vec();
    for row in p.chunks_exact_mut(k) {
        softmax_in_place(row);
    }
    let mut q = vec![0.0; k * m];
    for c in 0..k {
        let row = &mut q[c * m..(c + 1) * m];
        for n in 0..m {
            row[n] = s[n * k + c];
        }
        softmax_in_place(row);
    }
    Posteriors {
        pixel_to_class: p,
        class_to_pixel: q,
        classes: k,
        pixels: m,
    }
}

/// Pixel-to-class and class-to-pixel posteriors.
pub fn ct_posteriors(batch: &FeatureBatch, protos: &Prototypes) -> Result<Posteriors> {
    check_dims(batch, protos)?;
    let s = logits(batch, protos)?;
    Ok(posteriors_from_logits(
        &s,
        batch.total_pixels(),
        protos.classes,
    ))
}

/// Loss value and its gradient with respect to every feature entry
/// (same layout as [`FeatureBatch::features`]).
pub fn ct_loss(batch: &FeatureBatch, protos: &Prototypes) -> Result<(f64, Vec<f64>)> {
    check_dims(batch, protos)?;
    let (m, k, d) = (batch.total_pixels(), protos.classes, batch.dim);
    let proto_norms: Vec<f64> = (0..k).map(|c| norm(protos.row(c))).collect();
    if proto_norms.contains(&0.0) {
        return Err(Error::ZeroNorm);
    }
    let feat_norms: Vec<f64> = (0..m).map(|n| norm(batch.feature(n))).collect();
    if feat_norms.contains(&0.0) {
        return Err(Error::ZeroNorm);
    }
    let s = logits(batch, protos)?;
    let post = posteriors_from_logits(&s, m, k);

    // cosine similarity and distance, M x K
    let mut cos = vec![0.0; m * k];
    for n in 0..m {
        for c in 0..k {
            cos[n * k + c] =
                dot(protos.row(c), batch.feature(n)) / (proto_norms[c] * feat_norms[n]);
        }
    }
    let dist = |n: usize, c: usize| 1.0 - cos[n * k + c];

    let (mf, kf) = (m as f64, k as f64);
    let t1: Vec<f64> = (0..m)
        .map(|n| {
            let p = post.pixel_row(n);
            (0..k).map(|c| dist(n, c) * p[c]).sum()
        })
        .collect();
    let first = t1.iter().sum::<f64>() / mf;

    let t2: Vec<f64> = (0..k)
        .map(|c| {
            let q = post.class_row(c);
            (0..m).map(|n| dist(n, c) * q[n]).sum()
        })
        .collect();
    let second = t2.iter().sum::<f64>() / kf;

    let mut grad = vec![0.0; m * d];
    let mut g_logit = vec![0.0; d];
    for n in 0..m {
        let f = batch.feature(n);
        let nf = feat_norms[n];
        let p = post.pixel_row(n);
        let g = &mut grad[n * d..(n + 1) * d];
        g_logit.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..k {
            let q = post.class_to_pixel[c * m + n];
            let dnc = dist(n, c);
            // weight on d(c_k, f) and on the logit s_{n,k}
            let a = p[c] / mf + q / kf;
            let b = p[c] * (dnc - t1[n]) / mf + q * (dnc - t2[c]) / kf;
            let ck = protos.row(c);
            let cosv = cos[n * k + c];
            let inv = 1.0 / (proto_norms[c] * nf);
            for j in 0..d {
                // d/df (1 - cos) = -(c / (|c||f|) - cos f / |f|^2)
                g[j] -= a * (ck[j] * inv - cosv * f[j] / (nf * nf));
                g_logit[j] += b * ck[j];
            }
        }
        let t = batch.temperature;
        if batch.normalize_logits {
            // d/df (c . f/|f|) = (c - (c . fhat) fhat) / |f|
            let proj = dot(&g_logit, f) / (nf * nf);
            for j in 0..d {
                g[j] += (g_logit[j] - proj * f[j]) / (nf * t);
            }
        } else {
            for j in 0..d {
                g[j] += g_logit[j] / t;
            }
        }
    }
    Ok((first + second, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn single_pixel_on_first_prototype() {
        let protos = Prototypes::orthonormal(2, 2).unwrap();
        let batch = FeatureBatch::new(1, 1, 2, vec![1.0, 0.0], 1.0).unwrap();
        let post = ct_posteriors(&batch, &protos).unwrap();
        assert!((post.pixel_to_class[0] - E / (E + 1.0)).abs() < 1e-12);
        assert!((post.pixel_to_class[1] - 1.0 / (E + 1.0)).abs() < 1e-12);
        // one pixel total: class-to-pixel rows are exactly 1
        assert_eq!(post.class_to_pixel, vec![1.0, 1.0]);
        let (loss, _) = ct_loss(&batch, &protos).unwrap();
        let expected = 1.0 / (E + 1.0) + 0.5;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.7689).abs() < 1e-4);
    }

    #[test]
    fn hot_temperature_is_uniform() {
        let protos = Prototypes::orthonormal(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..2 * 5 * 4)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let batch = FeatureBatch::new(2, 5, 4, f, 1e6).unwrap();
        let post = ct_posteriors(&batch, &protos).unwrap();
        assert!(post
            .pixel_to_class
            .iter()
            .all(|p| (p - 1.0 / 3.0).abs() < 1e-4));
        assert!(post.class_to_pixel.iter().all(|p| (p - 0.1).abs() < 1e-4));
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let protos =
            Prototypes::new(3, 5, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f: Vec<f64> = (0..3 * 7 * 5)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let post = ct_posteriors(&FeatureBatch::new(3, 7, 5, f, 0.5).unwrap(), &protos).unwrap();
        for n in 0..21 {
            assert!((post.pixel_row(n).iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        for k in 0..3 {
            assert!((post.class_row(k).iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn features_on_prototypes_at_low_temperature() {
        let protos = Prototypes::orthonormal(3, 3).unwrap();
        let f = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let batch = FeatureBatch::new(1, 3, 3, f, 1e-3).unwrap();
        let (loss, _) = ct_loss(&batch, &protos).unwrap();
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn errors() {
        let protos = Prototypes::orthonormal(2, 2).unwrap();
        assert!(FeatureBatch::new(1, 1, 2, vec![1.0, 0.0], 0.0).is_err());
        assert!(FeatureBatch::new(1, 1, 2, vec![1.0, 0.0], -1.0).is_err());
        let wrong_dim = FeatureBatch::new(1, 1, 3, vec![1.0, 0.0, 0.0], 1.0).unwrap();
        assert!(ct_posteriors(&wrong_dim, &protos).is_err());
        let zero = FeatureBatch::new(1, 2, 2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(matches!(ct_loss(&zero, &protos), Err(Error::ZeroNorm)));
        let zp = Prototypes::new(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let ok = FeatureBatch::new(1, 1, 2, vec![1.0, 0.0], 1.0).unwrap();
        assert!(matches!(ct_loss(&ok, &zp), Err(Error::ZeroNorm)));
        assert!(Prototypes::new(1, 2, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let protos =
                Prototypes::new(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            let f: Vec<f64> = (0..2 * 6 * 4)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let kappa = rng.random_range(0.1..10.0);
            let (loss, _) =
                ct_loss(&FeatureBatch::new(2, 6, 4, f, kappa).unwrap(), &protos).unwrap();
            assert!(loss >= 0.0);
        }
    }
}
