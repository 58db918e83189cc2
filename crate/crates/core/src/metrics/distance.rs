//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher), separable
//! over any number of axes.

const INF: f64 = 1e20;

/// 1-D squared distance transform of the sampled function `f` (lower envelope
/// of parabolas). `v` and `z` are scratch buffers of length n and n+1.
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = meet(q, v[k]);
        // z[0] is -inf, so this stops at k = 0
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every cell to the nearest `true` cell of
/// `set`, laid out row-major over `shape`. Cells are at `INF` (1e20) when the
/// set is empty.
pub fn squared_distance_transform(shape: &[usize], set: &[bool]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    assert_eq!(n, set.len(), "shape/set length mismatch");
    let mut grid: Vec<f64> = set.iter().map(|&s| if s { 0.0 } else { INF }).collect();
    let max_len = shape.iter().copied().max().unwrap_or(0);
    let (mut f, mut out) = (vec![0.0; max_len], vec![0.0; max_len]);
    let (mut v, mut z) = (vec![0usize; max_len], vec![0.0; max_len + 1]);
    for axis in 0..shape.len() {
        let len = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * len * stride + inner;
                for i in 0..len {
                    f[i] = grid[base + i * stride];
                }
                dt_1d(&f[..len], &mut out[..len], &mut v[..len], &mut z[..len + 1]);
                for i in 0..len {
                    grid[base + i * stride] = out[i];
                }
            }
        }
    }
    grid
}

/// Euclidean distance to the nearest `true` cell of `set`.
pub fn distance_to_set(shape: &[usize], set: &[bool]) -> Vec<f64> {
    squared_distance_transform(shape, set)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(shape: &[usize], set: &[bool]) -> Vec<f64> {
        let coords = |mut i: usize| {
            let mut c = vec![0usize; shape.len()];
            for a in (0..shape.len()).rev() {
                c[a] = i % shape[a];
                i /= shape[a];
            }
            c
        };
        (0..set.len())
            .map(|i| {
                let ci = coords(i);
                (0..set.len())
                    .filter(|&j| set[j])
                    .map(|j| {
                        coords(j)
                            .iter()
                            .zip(&ci)
                            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                            .sum::<f64>()
                    })
                    .fold(INF, f64::min)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force_2d(set in prop::collection::vec(prop::bool::weighted(0.15), 7 * 9)) {
            prop_assert_eq!(squared_distance_transform(&[7, 9], &set), brute(&[7, 9], &set));
        }

        #[test]
        fn matches_brute_force_3d(set in prop::collection::vec(prop::bool::weighted(0.1), 3 * 5 * 4)) {
            prop_assert_eq!(squared_distance_transform(&[3, 5, 4], &set), brute(&[3, 5, 4], &set));
        }
    }
}
