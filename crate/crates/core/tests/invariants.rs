use std::f64::consts::PI;

use cactus::classify::{argmax_lowest, expand_pairs, softmax};
use cactus::eval::{munkres, overlap, FrameCounts};
use cactus::pipeline::{downscale_point, upscale_box};
use cactus::pmf::{normalize, ConvPolicy, Field, Grid2D, OrientedBox};
use proptest::prelude::*;

fn any_box() -> impl Strategy<Value = OrientedBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..20.0f64, 0.5..20.0f64, 0.0..PI).prop_map(|(cx, cy, a, b, t)| {
        OrientedBox::new(cx, cy, a.max(b), a.min(b), t)
    })
}

fn grid(max: usize) -> impl Strategy<Value = Grid2D> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0..1.0f64, r * c).prop_map(move |v| Grid2D::from_vec(r, c, v).unwrap())
    })
}

fn moved(b: &OrientedBox, theta: f64, dx: f64, dy: f64) -> OrientedBox {
    let (s, c) = theta.sin_cos();
    let angle = (b.angle + theta).rem_euclid(PI);
    OrientedBox::new(c * b.cx - s * b.cy + dx, s * b.cx + c * b.cy + dy, b.half_len, b.half_wid, angle)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn overlap_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let ab = overlap(&a, &b);
        prop_assert!((ab - overlap(&b, &a)).abs() < 1e-9);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!((overlap(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_ignores_rigid_motion(a in any_box(), b in any_box(), t in 0.0..2.0 * PI, dx in -30.0..30.0f64, dy in -30.0..30.0f64) {
        let before = overlap(&a, &b);
        let after = overlap(&moved(&a, t, dx, dy), &moved(&b, t, dx, dy));
        prop_assert!((before - after).abs() < 1e-7, "{before} vs {after}");
    }

    #[test]
    fn spectral_and_direct_agree(a in grid(12), b in grid(7)) {
        let d = ConvPolicy::direct().convolve(&a, &b);
        let s = ConvPolicy::spectral().convolve(&a, &b);
        prop_assert_eq!(d.dims(), a.dims());
        for (x, y) in d.values().iter().zip(s.values()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn normalized_mass_is_one(g in grid(16)) {
        prop_assume!(g.sum() > 1e-6);
        let p = normalize(&g).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0..50.0f64, 1..12)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x > 0.0));
        prop_assert_eq!(argmax_lowest(&p), argmax_lowest(&v));
    }

    #[test]
    fn expansion_length(d in 1usize..16) {
        prop_assert_eq!(expand_pairs(&vec![1.0; d]).len(), d * (d + 1) / 2 + d);
    }

    #[test]
    fn munkres_is_optimal(cost in (1usize..=6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0..10.0f64, n), n))) {
        let assign = munkres(&cost);
        let mut seen = assign.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..cost.len()).collect::<Vec<_>>());
        let total: f64 = assign.iter().enumerate().map(|(r, c)| cost[r][*c]).sum();
        prop_assert!((total - brute_force(&cost)).abs() < 1e-9);
    }

    #[test]
    fn nmotda_matches_counts(gt in 1usize..5000, f in 0usize..5000, p in 0usize..5000) {
        let fn_ = f.min(gt);
        let v = FrameCounts { gt, fn_, fp: p }.nmotda().unwrap();
        prop_assert!((v - (1.0 - (fn_ + p) as f64 / gt as f64)).abs() < 1e-12);
        prop_assert!(v <= 1.0);
    }

    #[test]
    fn downscale_inverts_upscale(b in any_box(), f in 1usize..5) {
        let up = upscale_box(&b, f);
        let (x, y) = downscale_point(up.cx, up.cy, f);
        prop_assert!((x - b.cx).abs() < 1e-9 && (y - b.cy).abs() < 1e-9);
        prop_assert!((up.half_len - b.half_len * f as f64).abs() < 1e-9);
    }

    #[test]
    fn window_of_window(rows in 1usize..10, cols in 1usize..10, r in -3isize..12, c in -3isize..12) {
        let f = Field::from_fn(rows, cols, |i, j| (i * 31 + j) as f64);
        let w = f.window(r, c, 3, 3);
        prop_assert_eq!(w.get(1, 1), f.get_or_zero(r, c));
    }
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], r: usize, used: &mut [bool]) -> f64 {
        if r == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[r][c] + go(cost, r + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.len()])
}
