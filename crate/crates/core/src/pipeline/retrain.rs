//! Retraining a per-pixel affine classifier on refined pseudo-labels.

use super::config::RunConfig;
use super::dataset::SliceData;
use crate::aggregation::{AffineExtractor, TrainReport};
use crate::error::{Error, Result};
use crate::metrics::{soft_dice_loss, AssdMode, MetricReport};
use crate::tensor::{FeatureMap, LabelMask};

#[derive(Debug, Clone)]
pub struct RetrainReport {
    pub model: AffineExtractor,
    pub curve: TrainReport,
    /// Mean Dice of the model's arg-max against ground truth, NaN without it.
    pub initial_dice: f64,
    pub final_dice: f64,
}

fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|x| x / s));
    }
    out
}

fn inputs(features: &[&FeatureMap]) -> Vec<f64> {
    features
        .iter()
        .flat_map(|f| f.data().iter().map(|&x| x as f64))
        .collect()
}

/// Soft Dice loss of the model on a batch and its parameter gradients.
pub fn batch_loss(
    model: &AffineExtractor,
    features: &[&FeatureMap],
    labels: &[&LabelMask],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = model.d_out();
    let x = inputs(features);
    let p = softmax_rows(&model.forward(&x), k);
    let target: Vec<u8> = labels
        .iter()
        .flat_map(|l| l.data().iter().copied())
        .collect();
    let (loss, gp) = soft_dice_loss(&p, k, &target)?;
    let mut gz = vec![0.0; gp.len()];
    for ((z, g), pr) in gz
        .chunks_exact_mut(k)
        .zip(gp.chunks_exact(k))
        .zip(p.chunks_exact(k))
    {
        let dot: f64 = g.iter().zip(pr).map(|(a, b)| a * b).sum();
        for j in 0..k {
            z[j] = pr[j] * (g[j] - dot);
        }
    }
    let (gw, gb) = model.backward(&x, &gz);
    Ok((loss, gw, gb))
}

/// Arg-max labels of the model on one slice.
pub fn predict(model: &AffineExtractor, features: &FeatureMap) -> Result<LabelMask> {
    let k = model.d_out();
    let logits = model.forward(&inputs(&[features]));
    let labels = logits
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(features.height(), features.width(), k, labels)
}

fn model_dice(model: &AffineExtractor, data: &[(SliceData, LabelMask)]) -> Result<f64> {
    let mut pred = Vec::with_capacity(data.len());
    let mut gt = Vec::with_capacity(data.len());
    for (s, _) in data {
        let Some(g) = &s.ground_truth else {
            return Ok(f64::NAN);
        };
        pred.push(predict(model, &s.target_features)?);
        gt.push(g.clone());
    }
    Ok(MetricReport::for_volume(&pred, &gt, AssdMode::PerSlice, false)?.mean_dice)
}

/// Gradient descent of the soft Dice loss over batches of slices.
pub fn retrain_toy(cfg: &RunConfig, data: &[(SliceData, LabelMask)]) -> Result<RetrainReport> {
    let Some((first, labels)) = data.first() else {
        return Err(Error::InvalidArgument(
            "no pseudo-labels to train on".into(),
        ));
    };
    let (d, k) = (first.target_features.dim(), labels.num_classes());
    for (s, l) in data {
        if s.target_features.dim() != d
            || l.num_classes() != k
            || (l.height(), l.width()) != (s.target_features.height(), s.target_features.width())
        {
            return Err(Error::ShapeMismatch(
                "training slices disagree in shape".into(),
            ));
        }
    }
    let mut model = AffineExtractor::random(d, k, 0.1, cfg.retrain_seed);
    let initial_dice = model_dice(&model, data)?;
    let batches: Vec<&[(SliceData, LabelMask)]> = data.chunks(cfg.retrain_batch_size).collect();
    let eval = |m: &AffineExtractor| -> Result<f64> {
        let mut total = 0.0;
        for b in &batches {
            let f: Vec<&FeatureMap> = b.iter().map(|(s, _)| &s.target_features).collect();
            let l: Vec<&LabelMask> = b.iter().map(|(_, l)| l).collect();
            total += batch_loss(m, &f, &l)?.0;
        }
        Ok(total / batches.len() as f64)
    };
    let initial_loss = eval(&model)?;
    let mut step_losses = Vec::new();
    for _ in 0..cfg.retrain_epochs {
        for b in &batches {
            let f: Vec<&FeatureMap> = b.iter().map(|(s, _)| &s.target_features).collect();
            let l: Vec<&LabelMask> = b.iter().map(|(_, l)| l).collect();
            let (loss, gw, gb) = batch_loss(&model, &f, &l)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: step_losses.len(),
                    loss,
                });
            }
            step_losses.push(loss);
            model.step(&gw, &gb, cfg.retrain_lr, cfg.retrain_weight_decay);
        }
    }
    let final_loss = eval(&model)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: step_losses.len(),
            loss: final_loss,
        });
    }
    let final_dice = model_dice(&model, data)?;
    Ok(RetrainReport {
        model,
        curve: TrainReport {
            step_losses,
            initial_loss,
            final_loss,
        },
        initial_dice,
        final_dice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_gradient_matches_differences() {
        let f =
            FeatureMap::new(2, 2, 3, (0..12).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let l = LabelMask::new(2, 2, 3, vec![0, 1, 2, 1]).unwrap();
        let model = AffineExtractor::random(3, 3, 0.8, 11);
        let (_, gw, gb) = batch_loss(&model, &[&f], &[&l]).unwrap();
        let h = 1e-6;
        for i in 0..gw.len() {
            let mut w = model.weight().to_vec();
            w[i] += h;
            let up = AffineExtractor::new(3, 3, w.clone(), model.bias().to_vec()).unwrap();
            w[i] -= 2.0 * h;
            let down = AffineExtractor::new(3, 3, w, model.bias().to_vec()).unwrap();
            let fd = (batch_loss(&up, &[&f], &[&l]).unwrap().0
                - batch_loss(&down, &[&f], &[&l]).unwrap().0)
                / (2.0 * h);
            assert!((fd - gw[i]).abs() < 1e-7, "w{i}: {fd} vs {}", gw[i]);
        }
        assert_eq!(gb.len(), 3);
    }
}
