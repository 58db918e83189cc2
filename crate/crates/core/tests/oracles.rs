mod common;

use common::*;
use promptrefine::postprocess::{
    connected_components, keep_largest, keep_largest_3d, Connectivity,
};
use promptrefine::search::{mbs_step, tbs_step};
use promptrefine::BinaryMask;
use proptest::prelude::*;
use rand::Rng;

fn conn(eight: bool) -> Connectivity {
    if eight {
        Connectivity::Eight
    } else {
        Connectivity::Four
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn tbs_matches_brute_force(seed in any::<u64>(), h in 1usize..14, w in 1usize..14, radius in 1usize..5) {
        let mut r = rng(seed);
        let feats = random_features(&mut r, h, w, 4);
        let set = random_set(&mut r, h, w);
        let next = tbs_step(&set, &feats, 0.6211, radius).unwrap();
        prop_assert_eq!(sorted(next.members().to_vec()), tbs_oracle(&set, &feats, 0.6211, radius));
        prop_assert!(set.is_subset_of(&next));
    }

    #[test]
    fn mbs_matches_brute_force(seed in any::<u64>(), h in 1usize..14, w in 1usize..14, radius in 1usize..5) {
        let mut r = rng(seed);
        let feats = random_features(&mut r, h, w, 4);
        let set = random_set(&mut r, h, w);
        let c_m: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let (div, tau_div, tau_max): (f64, f64, f64) = (r.random_range(0.01..0.5), 2.0, 0.4003);
        let tau_d = (tau_div * div).min(tau_max);
        let next = mbs_step(&set, &feats, &c_m, div, tau_div, tau_max, radius).unwrap();
        prop_assert_eq!(sorted(next.members().to_vec()), mbs_oracle(&set, &feats, &c_m, tau_d, radius));
    }

    #[test]
    fn components_match_flood_fill(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, eight in any::<bool>()) {
        let mask = random_mask(&mut rng(seed), h, w);
        let cc = connected_components(&mask, conn(eight));
        let (labels, sizes) = components_oracle(&mask, conn(eight));
        prop_assert_eq!(&cc.labels, &labels);
        prop_assert_eq!(&cc.sizes, &sizes);
        prop_assert_eq!(cc.sizes.iter().sum::<usize>(), mask.count());
    }

    #[test]
    fn keep_largest_matches_and_is_idempotent(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, eight in any::<bool>()) {
        let mask = random_mask(&mut rng(seed), h, w);
        let kept = keep_largest(&mask, conn(eight));
        prop_assert_eq!(&kept, &keep_largest_oracle(&mask, conn(eight)));
        prop_assert!(kept.is_subset_of(&mask));
        prop_assert_eq!(keep_largest(&kept, conn(eight)), kept);
    }

    #[test]
    fn single_slice_volume_agrees_with_2d(seed in any::<u64>(), eight in any::<bool>()) {
        let mask = random_mask(&mut rng(seed), 12, 12);
        let kept = keep_largest_3d(std::slice::from_ref(&mask), conn(eight)).unwrap();
        prop_assert_eq!(&kept[0], &keep_largest(&mask, conn(eight)));
    }
}

#[test]
fn volume_filter_links_slices() {
    let a = BinaryMask::from_rows(&["##..", "....", "...#"]);
    let b = BinaryMask::from_rows(&["#...", "#...", "...."]);
    let kept = keep_largest_3d(&[a, b.clone()], Connectivity::Four).unwrap();
    assert_eq!(kept[0], BinaryMask::from_rows(&["##..", "....", "...."]));
    assert_eq!(kept[1], b);
}
