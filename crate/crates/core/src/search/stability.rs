use crate::error::Result;
use crate::mask::BinaryMask;

/// Spans tested by [`check_stable`], longest first.
pub const STABLE_SPANS: [usize; 3] = [3, 2, 1];

/// Number of pixels where two segmenter outputs disagree.
pub fn delta_m(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    a.same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| x != y)
        .count())
}

/// Looks for a stable interval ending at the newest mask.
///
/// Span `L` qualifies when the newest mask differs from the one `L` steps
/// earlier in at most `L * tau_delta` pixels. Spans 3, 2, 1 are tried in that
/// order and the first qualifying `(j, j')` is returned.
pub fn check_stable(history: &[BinaryMask], tau_delta: f64) -> Option<(usize, usize)> {
    let last = history.len().checked_sub(1)?;
    for span in STABLE_SPANS {
        if span > last {
            continue;
        }
        let start = last - span;
        let delta = delta_m(&history[start], &history[last]).ok()?;
        if delta as f64 <= span as f64 * tau_delta {
            return Some((start, last));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1 x 200 masks where mask j has its first `sizes[j]` pixels set.
    fn prefix_masks(sizes: &[usize]) -> Vec<BinaryMask> {
        sizes
            .iter()
            .map(|&n| BinaryMask::from_fn(1, 200, |i| i < n))
            .collect()
    }

    #[test]
    fn delta_examples() {
        let a = BinaryMask::from_rows(&["##..", "....", "....", "...."]);
        assert_eq!(delta_m(&a, &a).unwrap(), 0);
        let b = BinaryMask::from_rows(&["#...", ".#..", "....", "...#"]);
        assert_eq!(delta_m(&a, &b).unwrap(), 3);
        let inv = BinaryMask::from_fn(4, 4, |i| !a.get_index(i));
        assert_eq!(delta_m(&a, &inv).unwrap(), 16);
        assert!(delta_m(&a, &BinaryMask::empty(2, 2)).is_err());
    }

    #[test]
    fn identical_history_prefers_span_three() {
        let h = prefix_masks(&[10, 10, 10, 10]);
        assert_eq!(check_stable(&h, 15.0), Some((0, 3)));
        assert_eq!(check_stable(&h[..3], 15.0), Some((0, 2)));
        assert_eq!(check_stable(&h[..1], 15.0), None);
    }

    #[test]
    fn only_last_step_is_stable() {
        let h = prefix_masks(&[0, 100, 200, 195]);
        assert_eq!(check_stable(&h, 15.0), Some((2, 3)));
    }

    #[test]
    fn span_three_beats_failing_shorter_spans() {
        // Δ(0,3) = 40 <= 45, Δ(1,3) = 35 > 30, Δ(2,3) = 20 > 15
        let h = prefix_masks(&[0, 5, 20, 40]);
        assert_eq!(check_stable(&h, 15.0), Some((0, 3)));
    }

    #[test]
    fn thresholds_are_inclusive() {
        assert_eq!(check_stable(&prefix_masks(&[0, 15]), 15.0), Some((0, 1)));
        assert_eq!(check_stable(&prefix_masks(&[0, 16]), 15.0), None);
        assert_eq!(check_stable(&prefix_masks(&[100, 0, 30]), 15.0), None);
        assert_eq!(
            check_stable(&prefix_masks(&[0, 100, 30]), 15.0),
            Some((0, 2))
        );
    }
}
