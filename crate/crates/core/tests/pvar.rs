use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gladyshev_core::pvar::{pvar_1d, pvar_2d, row_sum_bound, vp_rect, SearchMode, SurfaceGrid};
use gladyshev_core::{Execution, Kernel, Partition, Rectangle};

// subsets of 0..n containing both ends, as sorted index lists
fn chains(n: usize) -> Vec<Vec<usize>> {
    (0..1u32 << (n - 2))
        .map(|mask| {
            let mut idx = vec![0];
            idx.extend((1..n - 1).filter(|i| mask >> (i - 1) & 1 == 1));
            idx.push(n - 1);
            idx
        })
        .collect()
}

fn brute_1d(values: &[f64], p: f64) -> f64 {
    chains(values.len())
        .iter()
        .map(|c| {
            c.windows(2)
                .rev()
                .fold(0.0, |acc, w| (values[w[1]] - values[w[0]]).abs().powf(p) + acc)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn brute_2d(grid: &SurfaceGrid, p: f64) -> f64 {
    let mut best = 0.0f64;
    for rows in chains(grid.rows()) {
        for cols in chains(grid.cols()) {
            let mut s = 0.0;
            for r in rows.windows(2) {
                for c in cols.windows(2) {
                    let d = grid.at(r[1], c[1]) - grid.at(r[0], c[1]) - grid.at(r[1], c[0]) + grid.at(r[0], c[0]);
                    s += d.abs().powf(p);
                }
            }
            best = best.max(s);
        }
    }
    best.powf(1.0 / p)
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn one_dimensional_dp_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let n = rng.random_range(2..=10);
        let p = [1.0, 1.5, 2.0, 3.3][rng.random_range(0..4)];
        let samples: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, rng.random_range(-1.0..1.0))).collect();
        let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let dp = pvar_1d(&samples, p).unwrap();
        assert_eq!(dp.sum, brute_1d(&values, p));
    }
}

#[test]
fn one_dimensional_examples() {
    let v = pvar_1d(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)], 2.0).unwrap();
    assert_relative_eq!(v.value, 2f64.sqrt(), max_relative = 1e-15);
    assert_eq!(v.witness, vec![0, 1, 2]);
    let mono: Vec<(f64, f64)> = (0..9).map(|i| (i as f64, (i as f64).sqrt())).collect();
    assert_relative_eq!(pvar_1d(&mono, 1.0).unwrap().value, 8f64.sqrt(), max_relative = 1e-15);
    assert!(pvar_1d(&mono, 0.5).is_err());
}

#[test]
fn exhaustive_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..40 {
        let (n, m) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let values: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = SurfaceGrid::new(axis(0.0, 1.0, n), axis(0.0, 1.0, m), values).unwrap();
        let p = rng.random_range(1.0..3.0);
        let ex = pvar_2d(&grid, p, SearchMode::Exhaustive, Execution::Sequential).unwrap();
        assert_relative_eq!(ex.lower, brute_2d(&grid, p), max_relative = 1e-12);
        assert!(ex.exact);
        let greedy = pvar_2d(&grid, p, SearchMode::Greedy, Execution::Sequential).unwrap();
        assert!(greedy.lower <= ex.lower * (1.0 + 1e-12));
    }
}

#[test]
fn separable_and_brownian_surfaces() {
    let st = SurfaceGrid::from_fn(axis(0.0, 1.0, 7), axis(0.0, 1.0, 7), |s, t| s * t).unwrap();
    let v = pvar_2d(&st, 1.0, SearchMode::Exhaustive, Execution::Parallel).unwrap();
    assert_relative_eq!(v.lower, 1.0, max_relative = 1e-12);
    assert_eq!(v.witness.s, axis(0.0, 1.0, 7));
    let min = SurfaceGrid::from_fn(axis(0.0, 1.0, 8), axis(0.0, 1.0, 8), f64::min).unwrap();
    let v = pvar_2d(&min, 1.0, SearchMode::Exhaustive, Execution::Parallel).unwrap();
    assert_relative_eq!(v.lower, 1.0, max_relative = 1e-12);
}

#[test]
fn sign_structured_rectangles_have_closed_form_variation() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for k in [
        Kernel::fbm(0.25, 1.0).unwrap(),
        Kernel::fbm(0.75, 1.0).unwrap(),
        Kernel::sub_fbm(0.3, 1.0).unwrap(),
        Kernel::sub_fbm(0.7, 1.0).unwrap(),
    ] {
        for _ in 0..20 {
            let mut x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            x.sort_by(f64::total_cmp);
            let (a, b, c, d) = if rng.random::<bool>() {
                (x[0], x[1], x[2], x[3])
            } else {
                (x[2], x[3], x[0], x[1])
            };
            let n = rng.random_range(2..=8);
            let grid = SurfaceGrid::from_kernel(&k, axis(a, b, n), axis(c, d, n)).unwrap();
            let ex = pvar_2d(&grid, 1.0, SearchMode::Exhaustive, Execution::Parallel).unwrap();
            let closed = k.increment(a, b, c, d).unwrap().abs();
            assert!(
                (ex.lower - closed).abs() < 1e-12,
                "{}: {} vs {closed}",
                k.name(),
                ex.lower
            );
            let q = Rectangle::new(a, b, c, d).unwrap();
            let vp = vp_rect(&k, &q, 1.0, Execution::Parallel).unwrap();
            assert!(vp.exact);
            assert_eq!(vp.lower, closed);
        }
    }
    let f = Kernel::fbm(0.25, 1.0).unwrap();
    let v = vp_rect(
        &f,
        &Rectangle::new(0.0, 0.4, 0.6, 1.0).unwrap(),
        1.0,
        Execution::Parallel,
    )
    .unwrap();
    // -(1/2)(0.6^{1/2} + 0.6^{1/2} - 1 - 0.2^{1/2}), sign flipped
    let closed = 0.5 * (2.0 * 0.6f64.sqrt() - 1.0 - 0.2f64.sqrt());
    assert_relative_eq!(v.lower, closed.abs(), max_relative = 1e-13);
}

#[test]
fn negative_family_diagonal_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for &h in &[0.2, 0.25, 0.4] {
        let k = Kernel::fbm(h, 1.0).unwrap();
        let p = 1.0 / (2.0 * h);
        for _ in 0..15 {
            let a = rng.random_range(0.0..0.8);
            let b = rng.random_range(a + 0.05..1.0);
            let n = rng.random_range(3..=8);
            let grid = SurfaceGrid::from_kernel(&k, axis(a, b, n), axis(a, b, n)).unwrap();
            let ex = pvar_2d(&grid, p, SearchMode::Exhaustive, Execution::Parallel).unwrap();
            assert!(ex.lower <= 2.0 * (b - a).powf(1.0 / p) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn diagonal_brackets() {
    let sq = Rectangle::square(0.0, 1.0).unwrap();
    let pos = vp_rect(&Kernel::fbm(0.75, 1.0).unwrap(), &sq, 1.0, Execution::Parallel).unwrap();
    assert!(pos.exact);
    assert_relative_eq!(pos.lower, 1.0, max_relative = 1e-14);
    let neg = vp_rect(&Kernel::fbm(0.25, 1.0).unwrap(), &sq, 2.0, Execution::Parallel).unwrap();
    assert!(!neg.exact);
    assert_eq!(neg.upper, 2.0);
    assert!(neg.lower <= neg.upper && neg.lower >= 1.0);
    let (h, k) = (0.6, 0.5);
    let bi = Kernel::bi_fbm(h, k, 1.0).unwrap();
    let q = Rectangle::square(0.2, 0.7).unwrap();
    let br = vp_rect(&bi, &q, 1.0 / (2.0 * h * k), Execution::Parallel).unwrap();
    assert_relative_eq!(
        br.upper,
        5.0 * 2f64.powf(-k) * 0.5f64.powf(2.0 * h * k),
        max_relative = 1e-14
    );
    assert!(br.lower <= br.upper);
}

#[test]
fn row_sums() {
    let bm = Kernel::fbm(0.5, 1.0).unwrap();
    let kappa = Partition::uniform(0.0, 1.0, 16).unwrap();
    for i in 0..16 {
        let r = row_sum_bound(&bm, &kappa, i).unwrap();
        assert_relative_eq!(r.value, 1.0 / 16.0, max_relative = 1e-12);
        assert!(r.holds);
    }
    let single = Partition::uniform(0.0, 1.0, 1).unwrap();
    let f = Kernel::fbm(0.25, 1.0).unwrap();
    let r = row_sum_bound(&f, &single, 0).unwrap();
    assert_eq!(r.value, f.incremental_variance(0.0, 1.0).unwrap());
    assert!(r.holds);
    assert!(row_sum_bound(&f, &single, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn higher_exponents_give_smaller_variation(values in prop::collection::vec(-1.0..1.0f64, 2..12), p in 1.0..4.0f64) {
        let samples: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
        let v1 = pvar_1d(&samples, 1.0).unwrap().value;
        let vp = pvar_1d(&samples, p).unwrap().value;
        prop_assert!(vp <= v1 * (1.0 + 1e-12));
    }

    #[test]
    fn surface_variation_decreases_in_p(values in prop::collection::vec(-1.0..1.0f64, 16), p in 1.0..4.0f64) {
        let grid = SurfaceGrid::new(axis(0.0, 1.0, 4), axis(0.0, 1.0, 4), values).unwrap();
        let v1 = pvar_2d(&grid, 1.0, SearchMode::Exhaustive, Execution::Sequential).unwrap().lower;
        let vp = pvar_2d(&grid, p, SearchMode::Exhaustive, Execution::Sequential).unwrap().lower;
        prop_assert!(vp <= v1 * (1.0 + 1e-12));
    }

    #[test]
    fn exact_variation_is_monotone_under_inclusion(mut x in prop::collection::vec(0.0..1.0f64, 6)) {
        x.sort_by(f64::total_cmp);
        prop_assume!(x.windows(2).all(|w| w[1] - w[0] > 1e-6));
        let k = Kernel::fbm(0.75, 1.0).unwrap();
        let inner = vp_rect(&k, &Rectangle::new(x[1], x[2], x[3], x[4]).unwrap(), 1.0, Execution::Sequential).unwrap();
        let outer = vp_rect(&k, &Rectangle::new(x[0], x[2], x[3], x[5]).unwrap(), 1.0, Execution::Sequential).unwrap();
        prop_assert!(inner.lower <= outer.lower * (1.0 + 1e-12));
    }

    #[test]
    fn row_sum_bounds_hold(seed in 0u64..1000, m in 1usize..40, idx in 0usize..8) {
        let kernels = [
            Kernel::fbm(0.25, 1.0).unwrap(),
            Kernel::fbm(0.5, 1.0).unwrap(),
            Kernel::fbm(0.75, 1.0).unwrap(),
            Kernel::sub_fbm(0.25, 1.0).unwrap(),
            Kernel::sub_fbm(0.75, 1.0).unwrap(),
            Kernel::bi_fbm(0.5, 0.5, 1.0).unwrap(),
            Kernel::bi_fbm(0.75, 1.0, 1.0).unwrap(),
            Kernel::bi_fbm(0.9, 0.6, 1.0).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kappa = Partition::random(1.0, m, &mut rng).unwrap();
        for i in 0..m {
            let r = row_sum_bound(&kernels[idx], &kappa, i).unwrap();
            prop_assert!(r.holds, "{} cell {}: {} > {}", kernels[idx].name(), i, r.value, r.bound);
        }
    }
}
