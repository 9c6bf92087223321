use driftback::geometry::{keep_count, scd, scd_grad, ScdSide};
use driftback::seeding::rng;
use driftback::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn uniform(n: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Textbook symmetric Chamfer: two nested loops per direction.
fn double_loop_chamfer(a: &Tensor, b: &Tensor) -> f64 {
    let one_way = |p: &Tensor, q: &Tensor| {
        let mut total = 0.0;
        for i in 0..p.rows() {
            let mut best = f64::INFINITY;
            for j in 0..q.rows() {
                let mut s = 0.0;
                for k in 0..p.cols() {
                    let d = p.get(i, k) - q.get(j, k);
                    s += d * d;
                }
                best = best.min(s);
            }
            total += best;
        }
        total / p.rows() as f64
    };
    one_way(a, b) + one_way(b, a)
}

#[test]
fn full_fraction_equals_double_loop_chamfer() {
    let mut r = rng(2024);
    for case in 0..100u64 {
        let n = r.random_range(1..=256);
        let m = r.random_range(1..=256);
        let d = if case % 2 == 0 { 3 } else { 4 };
        let a = uniform(n, d, 10 * case);
        let b = uniform(m, d, 10 * case + 1);
        let got = scd(&a, &b, 1.0).unwrap().value;
        let want = double_loop_chamfer(&a, &b);
        assert!((got - want).abs() <= 1e-9, "case {case}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn monotone_in_lambda(seed in 0u64..100_000, n in 1usize..60, m in 1usize..60, l1 in 0.01f64..1.0, l2 in 0.01f64..1.0) {
        let a = uniform(n, 3, seed);
        let b = uniform(m, 3, seed + 1);
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        prop_assert!(scd(&a, &b, lo).unwrap().value <= scd(&a, &b, hi).unwrap().value);
    }

    #[test]
    fn symmetric(seed in 0u64..100_000, n in 1usize..60, m in 1usize..60, lambda in 0.01f64..1.0) {
        let a = uniform(n, 4, seed);
        let b = uniform(m, 4, seed + 1);
        let ab = scd(&a, &b, lambda).unwrap().value;
        let ba = scd(&b, &a, lambda).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn kept_count_never_exceeds_fraction(lambda in 0.001f64..=1.0, n in 1usize..5000) {
        let k = keep_count(lambda, n);
        prop_assert!(k >= 1 && k <= n);
        prop_assert!(k as f64 <= (lambda * n as f64).max(1.0));
    }
}

#[test]
fn distant_outlier_stops_mattering() {
    let n = 50;
    let lambda = 0.9;
    assert!(lambda < 1.0 - 1.0 / n as f64);
    let a = uniform(n, 3, 1);
    let b = uniform(n, 3, 2);
    let with_outlier = |r: f64| {
        let mut moved = a.clone();
        moved.data_mut()[..3].copy_from_slice(&[r, r, r]);
        scd(&moved, &b, lambda).unwrap().value
    };
    let base = with_outlier(10.0);
    for r in [1e2, 1e4, 1e8] {
        assert!((with_outlier(r) - base).abs() <= 1e-12, "R = {r}");
    }
    assert!(base < 1.0);
    let mut moved = a.clone();
    moved.data_mut()[..3].copy_from_slice(&[1e4, 1e4, 1e4]);
    assert!(scd(&moved, &b, 1.0).unwrap().value > 1e6);
}

#[test]
fn gradients_match_central_differences() {
    for case in 0..24u64 {
        let d = if case % 2 == 0 { 3 } else { 4 };
        let lambda = [1.0, 0.96, 0.75][case as usize % 3];
        let a = uniform(9, d, 100 + case);
        let b = uniform(11, d, 200 + case);
        for side in [ScdSide::First, ScdSide::Second] {
            let g = scd_grad(&a, &b, lambda, side).unwrap();
            let base = if matches!(side, ScdSide::First) { &a } else { &b };
            for i in 0..base.len() {
                let h = 1e-7;
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p.data_mut()[i] += delta;
                    match side {
                        ScdSide::First => scd(&p, &b, lambda).unwrap().value,
                        ScdSide::Second => scd(&a, &p, lambda).unwrap().value,
                    }
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.data()[i];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-4),
                    "case {case} entry {i}: fd {fd} vs {an}"
                );
            }
        }
    }
}

#[test]
fn identical_sets_are_a_minimum() {
    let a = uniform(30, 4, 9);
    let r = scd(&a, &a, 0.96).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(scd_grad(&a, &a, 0.96, ScdSide::Second).unwrap().norm(), 0.0);
}

#[test]
fn rejects_bad_inputs() {
    let a = uniform(5, 3, 1);
    assert!(scd(&a, &uniform(5, 4, 2), 1.0).is_err());
    assert!(scd(&a, &a, 0.0).is_err());
    assert!(scd(&a, &a, 1.5).is_err());
    assert!(scd(&a, &Tensor::zeros(&[0, 3]), 1.0).is_err());
}
