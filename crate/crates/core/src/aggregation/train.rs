use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ct_loss, ct_posteriors, FeatureBatch, Prototypes};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Per-pixel affine feature extractor `f = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExtractor {
    weight: Vec<f64>,
    bias: Vec<f64>,
    d_in: usize,
    d_out: usize,
}

impl AffineExtractor {
    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::ShapeMismatch(format!(
                "affine map {d_in}->{d_out} needs {} weights and {d_out} biases",
                d_in * d_out
            )));
        }
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    /// Uniform weights in `[-scale, scale]`, zero bias.
    pub fn random(d_in: usize, d_out: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = (0..d_in * d_out)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self {
            weight,
            bias: vec![0.0; d_out],
            d_in,
            d_out,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Maps `n x d_in` inputs to `n x d_out` outputs.
    pub fn forward(&self, inputs: &[f64]) -> Vec<f64> {
        let n = inputs.len() / self.d_in;
        let mut out = Vec::with_capacity(n * self.d_out);
        for x in inputs.chunks_exact(self.d_in) {
            for o in 0..self.d_out {
                let w = &self.weight[o * self.d_in..(o + 1) * self.d_in];
                out.push(self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }

    /// Parameter gradients given the gradient with respect to the outputs.
    pub fn backward(&self, inputs: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.d_out];
        for (x, g) in inputs
            .chunks_exact(self.d_in)
            .zip(grad_out.chunks_exact(self.d_out))
        {
            for o in 0..self.d_out {
                gb[o] += g[o];
                let row = &mut gw[o * self.d_in..(o + 1) * self.d_in];
                for (r, xi) in row.iter_mut().zip(x) {
                    *r += g[o] * xi;
                }
            }
        }
        (gw, gb)
    }

    /// Gradient step with L2 weight decay on the weights.
    pub fn step(&mut self, gw: &[f64], gb: &[f64], lr: f64, weight_decay: f64) {
        for (w, g) in self.weight.iter_mut().zip(gw) {
            *w -= lr * (g + weight_decay * *w);
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }

    /// Weights as `[d_out, d_in + 1]`, bias in the last column.
    pub fn to_tensor(&self) -> DenseTensor {
        let mut v = Vec::with_capacity(self.d_out * (self.d_in + 1));
        for o in 0..self.d_out {
            v.extend(
                self.weight[o * self.d_in..(o + 1) * self.d_in]
                    .iter()
                    .map(|&x| x as f32),
            );
            v.push(self.bias[o] as f32);
        }
        DenseTensor::from_f32(vec![self.d_out, self.d_in + 1], v).expect("positive dims")
    }

    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let data = t
            .as_f32()
            .ok_or_else(|| Error::InvalidTensor("extractor tensor must be f32".into()))?;
        if t.ndim() != 2 || t.shape()[1] < 2 {
            return Err(Error::InvalidTensor(format!(
                "bad extractor shape {:?}",
                t.shape()
            )));
        }
        let (d_out, d_in) = (t.shape()[0], t.shape()[1] - 1);
        let mut weight = Vec::with_capacity(d_out * d_in);
        let mut bias = Vec::with_capacity(d_out);
        for row in data.chunks_exact(d_in + 1) {
            weight.extend(row[..d_in].iter().map(|&x| x as f64));
            bias.push(row[d_in] as f64);
        }
        Self::new(d_in, d_out, weight, bias)
    }
}

/// Raw per-pixel inputs for one batch: `images x pixels x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub images: usize,
    pub pixels: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub normalize_logits: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 5e-4,
            epochs: 5,
            batch_size: 16,
            temperature: 1.0,
            normalize_logits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss of each step, evaluated before its update.
    pub step_losses: Vec<f64>,
    /// Mean loss over all batches before training.
    pub initial_loss: f64,
    /// Mean loss over all batches after training.
    pub final_loss: f64,
}

impl TrainReport {
    /// CSV `step,loss`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.step_losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:.9}\n"));
        }
        s
    }
}

fn features_of(
    extractor: &AffineExtractor,
    b: &InputBatch,
    cfg: &TrainConfig,
) -> Result<FeatureBatch> {
    Ok(FeatureBatch::new(
        b.images,
        b.pixels,
        extractor.d_out,
        extractor.forward(&b.values),
        cfg.temperature,
    )?
    .with_normalized_logits(cfg.normalize_logits))
}

fn mean_loss(
    extractor: &AffineExtractor,
    data: &[InputBatch],
    protos: &Prototypes,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for b in data {
        total += ct_loss(&features_of(extractor, b, cfg)?, protos)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Gradient descent on the aggregation loss with the prototypes held fixed.
pub fn aggregate_train(
    extractor: &mut AffineExtractor,
    data: &[InputBatch],
    protos: &Prototypes,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training batches".into()));
    }
    if extractor.d_out != protos.dim() {
        return Err(Error::ShapeMismatch(format!(
            "extractor outputs {} dims, prototypes have {}",
            extractor.d_out,
            protos.dim()
        )));
    }
    if !protos.is_frozen() {
        return Err(Error::InvalidArgument(
            "prototypes must be frozen during aggregation".into(),
        ));
    }
    let initial_loss = mean_loss(extractor, data, protos, cfg)?;
    let mut step_losses = Vec::with_capacity(cfg.epochs * data.len());
    for _ in 0..cfg.epochs {
        for b in data {
            let feats = features_of(extractor, b, cfg)?;
            let (loss, grad) = ct_loss(&feats, protos)?;
            let step = step_losses.len();
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            step_losses.push(loss);
            let (gw, gb) = extractor.backward(&b.values, &grad);
            extractor.step(&gw, &gb, cfg.lr, cfg.weight_decay);
        }
    }
    let final_loss = mean_loss(extractor, data, protos, cfg)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: step_losses.len(),
            loss: final_loss,
        });
    }
    Ok(TrainReport {
        step_losses,
        initial_loss,
        final_loss,
    })
}

/// Mean cosine distance from each extracted feature to its nearest prototype.
pub fn mean_nearest_prototype_distance(
    extractor: &AffineExtractor,
    data: &[InputBatch],
    protos: &Prototypes,
) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for b in data {
        let feats = extractor.forward(&b.values);
        for f in feats.chunks_exact(extractor.d_out) {
            let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            let best = (0..protos.classes())
                .map(|k| {
                    let c = protos.row(k);
                    let nc = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                    1.0 - c.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / (nc * nf)
                })
                .fold(f64::INFINITY, f64::min);
            total += best;
            count += 1;
        }
    }
    total / count as f64
}

/// Number of pixels whose pixel-to-class argmax is each prototype.
pub fn argmax_assignment_counts(
    extractor: &AffineExtractor,
    data: &[InputBatch],
    protos: &Prototypes,
    cfg: &TrainConfig,
) -> Result<Vec<usize>> {
    let mut counts = vec![0; protos.classes()];
    for b in data {
        let post = ct_posteriors(&features_of(extractor, b, cfg)?, protos)?;
        for n in 0..post.pixels {
            counts[post.argmax(n)] += 1;
        }
    }
    Ok(counts)
}

/// Batches of inputs drawn from two isotropic Gaussians centred at `+mu` and
/// `-mu` (`mu = separation * e_0`), half the pixels from each.
pub fn two_gaussian_batches(
    seed: u64,
    batches: usize,
    images: usize,
    pixels: usize,
    d_in: usize,
    separation: f64,
    sigma: f64,
) -> Vec<InputBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batches)
        .map(|_| {
            let mut values = Vec::with_capacity(images * pixels * d_in);
            for _ in 0..images {
                for p in 0..pixels {
                    let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                    for j in 0..d_in {
                        let centre = if j == 0 { sign * separation } else { 0.0 };
                        values.push(centre + sigma * rng.sample::<f64, _>(StandardNormal));
                    }
                }
            }
            InputBatch {
                images,
                pixels,
                values,
            }
        })
        .collect()
}
