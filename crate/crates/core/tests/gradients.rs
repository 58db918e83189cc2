mod common;

use common::{numeric_gradient, relative_error, rng};
use promptrefine::aggregation::{ct_loss, ct_posteriors, FeatureBatch, Prototypes};
use promptrefine::metrics::soft_dice_loss;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn instance(seed: u64, normalized: bool) -> (FeatureBatch, Prototypes) {
    let mut r = rng(seed);
    let (k, d) = (r.random_range(2..=5), r.random_range(2..=8));
    let (b, n) = (r.random_range(1..=3), r.random_range(1..=8));
    let feats = (0..b * n * d).map(|_| r.sample(StandardNormal)).collect();
    let protos =
        Prototypes::new(k, d, (0..k * d).map(|_| r.sample(StandardNormal)).collect()).unwrap();
    let t = r.random_range(0.2..10.0);
    (
        FeatureBatch::new(b, n, d, feats, t)
            .unwrap()
            .with_normalized_logits(normalized),
        protos,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ct_gradient_matches_differences(seed in any::<u64>(), normalized in any::<bool>()) {
        let (batch, protos) = instance(seed, normalized);
        let (_, analytic) = ct_loss(&batch, &protos).unwrap();
        let numeric = numeric_gradient(batch.features(), 1e-6, |x| {
            let b = FeatureBatch::new(batch.batch(), batch.pixels(), batch.dim(), x.to_vec(), batch.temperature())
                .unwrap()
                .with_normalized_logits(normalized);
            ct_loss(&b, &protos).unwrap().0
        });
        prop_assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn ct_loss_is_bounded(seed in any::<u64>()) {
        let (batch, protos) = instance(seed, false);
        let (loss, _) = ct_loss(&batch, &protos).unwrap();
        prop_assert!((0.0..=4.0).contains(&loss));
        let post = ct_posteriors(&batch, &protos).unwrap();
        for n in 0..batch.total_pixels() {
            prop_assert!((post.pixel_row(n).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dice_gradient_matches_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.random_range(2..=5);
        let n = r.random_range(1..=30);
        let pred: Vec<f64> = (0..n * k).map(|_| r.random_range(0.0..1.0)).collect();
        let target: Vec<u8> = (0..n).map(|_| r.random_range(0..k) as u8).collect();
        let (loss, analytic) = soft_dice_loss(&pred, k, &target).unwrap();
        prop_assert!((0.0..=1.0).contains(&loss));
        let numeric = numeric_gradient(&pred, 1e-5, |x| soft_dice_loss(x, k, &target).unwrap().0);
        prop_assert!(relative_error(&analytic, &numeric) < 1e-4);
    }
}

#[test]
fn perfect_prediction_has_near_zero_dice_loss() {
    let target = [0u8, 1, 2, 2, 1, 0];
    let pred: Vec<f64> = target
        .iter()
        .flat_map(|&t| (0..3).map(move |k| if k == t as usize { 1.0 } else { 0.0 }))
        .collect();
    let (loss, _) = soft_dice_loss(&pred, 3, &target).unwrap();
    assert!(loss.abs() < 1e-9);
}
