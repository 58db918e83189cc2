//! Overlap and surface-distance metrics, plus the soft Dice training loss.

mod distance;

use std::fmt::Write as _;
use std::io::Write;

pub use distance::{distance_to_set, squared_distance_transform};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{LabelMask, ProbabilityMap};

/// Smoothing term of the soft Dice loss.
pub const DICE_EPS: f64 = 1e-5;

fn ratio(intersection: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / total as f64
    }
}

/// `2|a ∩ b| / (|a| + |b|)`, defined as 1.0 when both masks are empty.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    Ok(ratio(inter, a.count() + b.count()))
}

/// Dice over the pooled voxels of two equally sized stacks.
pub fn dice_3d(volume_a: &[BinaryMask], volume_b: &[BinaryMask]) -> Result<f64> {
    if volume_a.len() != volume_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} slices vs {} slices",
            volume_a.len(),
            volume_b.len()
        )));
    }
    let (mut inter, mut total) = (0, 0);
    for (a, b) in volume_a.iter().zip(volume_b) {
        inter += a.intersection_count(b)?;
        total += a.count() + b.count();
    }
    Ok(ratio(inter, total))
}

/// Set pixels with at least one 4-neighbour outside the mask; the image
/// border counts as outside.
pub fn surface(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |i| {
        if !mask.get_index(i) {
            return false;
        }
        let (r, c) = (i / w, i % w);
        r == 0
            || c == 0
            || r + 1 == h
            || c + 1 == w
            || !mask.get(r - 1, c)
            || !mask.get(r + 1, c)
            || !mask.get(r, c - 1)
            || !mask.get(r, c + 1)
    })
}

fn mean_surface_distance(from: &[usize], dist: &[f64]) -> f64 {
    from.iter().map(|&i| dist[i]).sum::<f64>() / from.len() as f64
}

/// Average symmetric surface distance in pixels.
pub fn assd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_shape(b)?;
    if !a.any() || !b.any() {
        return Err(Error::UndefinedMetric("ASSD needs two nonempty masks"));
    }
    let shape = [a.height(), a.width()];
    let (sa, sb) = (surface(a), surface(b));
    let to_b = distance_to_set(&shape, sb.data());
    let to_a = distance_to_set(&shape, sa.data());
    let pa: Vec<usize> = sa.ones().collect();
    let pb: Vec<usize> = sb.ones().collect();
    Ok(0.5 * (mean_surface_distance(&pa, &to_b) + mean_surface_distance(&pb, &to_a)))
}

/// Voxels with a 6-neighbour outside the stack; first and last slice faces
/// count as outside.
fn surface_3d(stack: &[BinaryMask]) -> Vec<bool> {
    let d = stack.len();
    let (h, w) = (stack[0].height(), stack[0].width());
    let mut out = vec![false; d * h * w];
    for z in 0..d {
        let s2 = surface(&stack[z]);
        for i in stack[z].ones() {
            let on_face =
                z == 0 || z + 1 == d || !stack[z - 1].get_index(i) || !stack[z + 1].get_index(i);
            out[z * h * w + i] = on_face || s2.get_index(i);
        }
    }
    out
}

/// ASSD on 3-D surfaces with unit voxel spacing.
pub fn assd_3d(volume_a: &[BinaryMask], volume_b: &[BinaryMask]) -> Result<f64> {
    if volume_a.len() != volume_b.len() || volume_a.is_empty() {
        return Err(Error::ShapeMismatch(
            "ASSD needs equal, nonempty stacks".into(),
        ));
    }
    for (a, b) in volume_a.iter().zip(volume_b) {
        a.same_shape(b)?;
        a.same_shape(&volume_a[0])?;
    }
    if !volume_a.iter().any(BinaryMask::any) || !volume_b.iter().any(BinaryMask::any) {
        return Err(Error::UndefinedMetric("ASSD needs two nonempty volumes"));
    }
    let shape = [volume_a.len(), volume_a[0].height(), volume_a[0].width()];
    let (sa, sb) = (surface_3d(volume_a), surface_3d(volume_b));
    let to_b = distance_to_set(&shape, &sb);
    let to_a = distance_to_set(&shape, &sa);
    let pa: Vec<usize> = (0..sa.len()).filter(|&i| sa[i]).collect();
    let pb: Vec<usize> = (0..sb.len()).filter(|&i| sb[i]).collect();
    Ok(0.5 * (mean_surface_distance(&pa, &to_b) + mean_surface_distance(&pb, &to_a)))
}

/// How ASSD is aggregated over a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssdMode {
    /// 2-D ASSD per slice, averaged over slices whose reference contains the class.
    #[default]
    PerSlice,
    /// ASSD of the 3-D surfaces of the whole stack.
    Volume,
}

impl std::str::FromStr for AssdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slice" | "per_slice" => Ok(AssdMode::PerSlice),
            "volume" => Ok(AssdMode::Volume),
            other => Err(Error::Config(format!("unknown assd mode {other:?}"))),
        }
    }
}

/// Per-class scores over the foreground classes `1..K`.
///
/// Undefined entries (class never present, or ASSD against an empty mask)
/// are `NaN` and excluded from the averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class_dice: Vec<f64>,
    pub per_class_assd: Vec<f64>,
    pub mean_dice: f64,
    pub mean_assd: f64,
}

fn nan_mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

impl MetricReport {
    pub fn new(per_class_dice: Vec<f64>, per_class_assd: Vec<f64>) -> Self {
        let mean_dice = nan_mean(&per_class_dice);
        let mean_assd = nan_mean(&per_class_assd);
        Self {
            per_class_dice,
            per_class_assd,
            mean_dice,
            mean_assd,
        }
    }

    /// Scores one slice. Dice is taken for classes present in either map;
    /// ASSD only where both maps contain the class.
    pub fn for_slice(pred: &LabelMask, reference: &LabelMask) -> Result<Self> {
        Self::for_volume(
            std::slice::from_ref(pred),
            std::slice::from_ref(reference),
            AssdMode::PerSlice,
            false,
        )
    }

    /// Scores a stack. With `pooled` set, Dice is pooled over all voxels;
    /// otherwise it is the mean 2-D Dice over slices whose reference contains
    /// the class.
    pub fn for_volume(
        pred: &[LabelMask],
        reference: &[LabelMask],
        mode: AssdMode,
        pooled: bool,
    ) -> Result<Self> {
        if pred.len() != reference.len() || pred.is_empty() {
            return Err(Error::ShapeMismatch(
                "prediction and reference stacks differ".into(),
            ));
        }
        let k = reference[0].num_classes();
        let mut dice = Vec::with_capacity(k - 1);
        let mut dist = Vec::with_capacity(k - 1);
        for class in 1..k {
            let p: Vec<BinaryMask> = pred.iter().map(|m| m.class_mask(class)).collect();
            let g: Vec<BinaryMask> = reference.iter().map(|m| m.class_mask(class)).collect();
            let anywhere = p.iter().chain(&g).any(BinaryMask::any);
            if !anywhere {
                dice.push(f64::NAN);
                dist.push(f64::NAN);
                continue;
            }
            let d = if pooled || pred.len() == 1 {
                dice_3d(&p, &g)?
            } else {
                let per: Vec<f64> = p
                    .iter()
                    .zip(&g)
                    .filter(|(_, g)| g.any())
                    .map(|(p, g)| dice_score(p, g))
                    .collect::<Result<_>>()?;
                if per.is_empty() {
                    // only false positives: pooled Dice is 0
                    dice_3d(&p, &g)?
                } else {
                    per.iter().sum::<f64>() / per.len() as f64
                }
            };
            dice.push(d);
            let a = match mode {
                AssdMode::PerSlice => {
                    let per: Vec<f64> = p
                        .iter()
                        .zip(&g)
                        .filter(|(p, g)| p.any() && g.any())
                        .map(|(p, g)| assd(p, g))
                        .collect::<Result<_>>()?;
                    nan_mean(&per)
                }
                AssdMode::Volume => match assd_3d(&p, &g) {
                    Ok(v) => v,
                    Err(Error::UndefinedMetric(_)) => f64::NAN,
                    Err(e) => return Err(e),
                },
            };
            dist.push(a);
        }
        Ok(Self::new(dice, dist))
    }

    /// CSV with header `class_id,dice,assd`, one row per foreground class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_id,dice,assd\n");
        for (i, (d, a)) in self
            .per_class_dice
            .iter()
            .zip(&self.per_class_assd)
            .enumerate()
        {
            let _ = writeln!(s, "{},{},{}", i + 1, fmt_metric(*d), fmt_metric(*a));
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Soft Dice loss over foreground classes and its gradient with respect to
/// `pred`, both laid out as `[N, K]` row-major.
pub fn soft_dice_loss(pred: &[f64], classes: usize, target: &[u8]) -> Result<(f64, Vec<f64>)> {
    if classes < 2 {
        return Err(Error::InvalidArgument("soft Dice needs K >= 2".into()));
    }
    if pred.len() != target.len() * classes {
        return Err(Error::ShapeMismatch(format!(
            "pred has {} values, target {} pixels x K = {classes}",
            pred.len(),
            target.len()
        )));
    }
    if let Some(&t) = target.iter().find(|&&t| t as usize >= classes) {
        return Err(Error::ShapeMismatch(format!(
            "target label {t} >= K = {classes}"
        )));
    }
    let fg = (classes - 1) as f64;
    let mut inter = vec![0.0; classes];
    let mut sum_p = vec![0.0; classes];
    let mut sum_y = vec![0.0; classes];
    for (px, &t) in pred.chunks_exact(classes).zip(target) {
        for k in 1..classes {
            sum_p[k] += px[k];
        }
        let t = t as usize;
        if t > 0 {
            inter[t] += px[t];
            sum_y[t] += 1.0;
        }
    }
    let mut loss = 1.0;
    let mut num = vec![0.0; classes];
    let mut den = vec![0.0; classes];
    for k in 1..classes {
        num[k] = 2.0 * inter[k] + DICE_EPS;
        den[k] = sum_p[k] + sum_y[k] + DICE_EPS;
        loss -= num[k] / den[k] / fg;
    }
    let mut grad = vec![0.0; pred.len()];
    for (g, &t) in grad.chunks_exact_mut(classes).zip(target) {
        for k in 1..classes {
            let y = if t as usize == k { 1.0 } else { 0.0 };
            g[k] = -(2.0 * y * den[k] - num[k]) / (den[k] * den[k]) / fg;
        }
    }
    Ok((loss, grad))
}

/// [`soft_dice_loss`] on typed maps.
pub fn dice_loss(pred: &ProbabilityMap, target: &LabelMask) -> Result<(f64, Vec<f64>)> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::ShapeMismatch(format!(
            "pred {}x{} vs target {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    if pred.classes() != target.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "pred K = {} vs target K = {}",
            pred.classes(),
            target.num_classes()
        )));
    }
    let p: Vec<f64> = pred.data().iter().map(|&x| x as f64).collect();
    soft_dice_loss(&p, pred.classes(), target.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(h: usize, w: usize, r0: usize, c0: usize, r1: usize, c1: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |i| {
            let (r, c) = (i / w, i % w);
            (r0..=r1).contains(&r) && (c0..=c1).contains(&c)
        })
    }

    #[test]
    fn dice_examples() {
        let a = rect(4, 4, 0, 0, 1, 1);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        let b = rect(4, 4, 2, 2, 3, 3);
        assert_eq!(dice_score(&a, &b).unwrap(), 0.0);
        // |a| = 4, |b| = 2, overlap 2
        let c = rect(4, 4, 0, 0, 0, 1);
        assert!((dice_score(&a, &c).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(dice_score(&e, &e).unwrap(), 1.0);
        assert_eq!(dice_score(&e, &a).unwrap(), 0.0);
        assert!(dice_score(&a, &BinaryMask::empty(3, 4)).is_err());
    }

    #[test]
    fn dice_3d_pools_voxels() {
        let s = rect(4, 4, 0, 0, 1, 1);
        let t = rect(4, 4, 2, 2, 3, 3);
        assert_eq!(
            dice_3d(&[s.clone(), s.clone()], &[s.clone(), s.clone()]).unwrap(),
            1.0
        );
        assert!((dice_3d(&[s.clone(), s.clone()], &[s.clone(), t]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(dice_3d(&[], &[]).unwrap(), 1.0);
        assert!(dice_3d(std::slice::from_ref(&s), &[]).is_err());
    }

    #[test]
    fn assd_examples() {
        let a = rect(5, 5, 1, 1, 3, 3);
        assert_eq!(assd(&a, &a).unwrap(), 0.0);
        let p = rect(1, 4, 0, 0, 0, 0);
        let q = rect(1, 4, 0, 3, 0, 3);
        assert!((assd(&p, &q).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            assd(&BinaryMask::empty(5, 5), &a),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn surface_uses_border_and_4_neighbours() {
        let m = rect(5, 5, 0, 0, 2, 2);
        let s = surface(&m);
        assert!(s.get(0, 0) && s.get(2, 2) && s.get(0, 1));
        assert!(!s.get(1, 1));
    }

    fn brute_assd(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let w = a.width();
        let sa: Vec<usize> = surface(a).ones().collect();
        let sb: Vec<usize> = surface(b).ones().collect();
        let d = |i: usize, j: usize| {
            let (dr, dc) = (
                (i / w) as f64 - (j / w) as f64,
                (i % w) as f64 - (j % w) as f64,
            );
            (dr * dr + dc * dc).sqrt()
        };
        let dir = |from: &[usize], to: &[usize]| {
            from.iter()
                .map(|&i| to.iter().map(|&j| d(i, j)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / from.len() as f64
        };
        0.5 * (dir(&sa, &sb) + dir(&sb, &sa))
    }

    proptest! {
        #[test]
        fn dice_and_assd_are_symmetric(
            a in prop::collection::vec(any::<bool>(), 64),
            b in prop::collection::vec(any::<bool>(), 64),
        ) {
            let a = BinaryMask::new(8, 8, a).unwrap();
            let b = BinaryMask::new(8, 8, b).unwrap();
            let d = dice_score(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, dice_score(&b, &a).unwrap());
            if a.any() && b.any() {
                let x = assd(&a, &b).unwrap();
                prop_assert!(x >= 0.0);
                prop_assert!((x - assd(&b, &a).unwrap()).abs() < 1e-12);
                prop_assert!((x - brute_assd(&a, &b)).abs() < 1e-9);
                prop_assert_eq!(assd(&a, &a).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn assd_3d_of_identical_volumes_is_zero() {
        let v = vec![rect(6, 6, 1, 1, 3, 4), rect(6, 6, 2, 1, 4, 4)];
        assert_eq!(assd_3d(&v, &v).unwrap(), 0.0);
        let shifted = vec![rect(6, 6, 1, 2, 3, 5), rect(6, 6, 2, 2, 4, 5)];
        assert!(assd_3d(&v, &shifted).unwrap() > 0.0);
    }

    #[test]
    fn report_csv_layout() {
        let gt = LabelMask::new(2, 2, 3, vec![1, 1, 0, 2]).unwrap();
        let pred = LabelMask::new(2, 2, 3, vec![1, 0, 0, 2]).unwrap();
        let r = MetricReport::for_slice(&pred, &gt).unwrap();
        assert_eq!(r.per_class_dice.len(), 2);
        assert!((r.per_class_dice[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class_dice[1], 1.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("class_id,dice,assd\n1,0.666667,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn dice_loss_of_one_hot_is_zero() {
        let target = [0u8, 1, 2, 1];
        let mut pred = vec![0.0; 12];
        for (i, &t) in target.iter().enumerate() {
            pred[i * 3 + t as usize] = 1.0;
        }
        let (loss, _) = soft_dice_loss(&pred, 3, &target).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn dice_loss_uniform_hand_value() {
        // 8x8, K = 2, class 1 covers half the pixels, p = 1/2 everywhere:
        // intersection 16, sum_p 32, sum_y 32.
        let target: Vec<u8> = (0..64).map(|i| (i < 32) as u8).collect();
        let pred = vec![0.5; 128];
        let (loss, _) = soft_dice_loss(&pred, 2, &target).unwrap();
        let expected = 1.0 - (2.0 * 16.0 + 1e-5) / (32.0 + 32.0 + 1e-5);
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.499999921875).abs() < 1e-12);
    }

    #[test]
    fn dice_loss_shape_errors() {
        assert!(soft_dice_loss(&[0.5; 6], 2, &[0, 1]).is_err());
        assert!(soft_dice_loss(&[0.5; 4], 2, &[0, 2]).is_err());
        let p = ProbabilityMap::new(1, 2, 2, vec![0.5; 4]).unwrap();
        let t = LabelMask::new(1, 2, 3, vec![0, 1]).unwrap();
        assert!(dice_loss(&p, &t).is_err());
    }
}
