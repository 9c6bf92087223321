use driftback::models::oracle_gaussian_eps;
use driftback::schedule::{build_schedule, ddim_step, estimate_x0, forward_diffuse, posterior_mean};
use driftback::seeding::rng;
use driftback::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Cumulative products of `1 - beta` for a linear beta ramp, with index 0 = 1.
fn alpha_bars(steps: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = vec![1.0];
    for t in 1..=steps {
        let beta = lo + (hi - lo) * (t - 1) as f64 / (steps - 1) as f64;
        out.push(out[t - 1] * (1.0 - beta));
    }
    out
}

/// For data `N(mu, var)` with the Bayes-optimal noise prediction, a DDIM step
/// maps the offset `x - sqrt(ab) mu` through a scalar gain; the endpoint is
/// the product of those gains.
fn analytic_endpoint(x_t: f64, mu: f64, var: f64, path: &[usize], ab: &[f64]) -> f64 {
    let mut d = x_t - ab[path[0]].sqrt() * mu;
    for w in path.windows(2) {
        let (a, p) = (ab[w[0]], ab[w[1]]);
        let den = a * var + 1.0 - a;
        d *= ((a * p).sqrt() * var + ((1.0 - a) * (1.0 - p)).sqrt()) / den;
    }
    d + ab[*path.last().unwrap()].sqrt() * mu
}

#[test]
fn deterministic_loop_matches_analytic_trajectory() {
    let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
    let ab = alpha_bars(1000, 1e-4, 0.02);
    let mu = Tensor::from_rows(&[[0.3, -1.2, 2.0, 0.0], [-0.7, 0.1, 0.5, 1.5]]).unwrap();
    for (case, var) in [0.04, 0.25, 1.0, 2.5].into_iter().enumerate() {
        let x_t = normal(&[2, 4], case as u64);
        let mut x = x_t.clone();
        let mut path: Vec<usize> = sched.ddim_steps().iter().rev().copied().collect();
        path.push(0);
        for w in path.windows(2) {
            let eps = oracle_gaussian_eps(&mu, var, &x, w[0], &sched).unwrap();
            x = ddim_step(&x, &eps, w[0], w[1], &sched).unwrap();
        }
        for i in 0..x.len() {
            let want = analytic_endpoint(x_t.data()[i], mu.data()[i], var, &path, &ab);
            assert!((x.data()[i] - want).abs() <= 1e-5, "var {var} entry {i}: {} vs {want}", x.data()[i]);
        }
    }
}

#[test]
fn point_mass_is_a_fixed_point_of_every_step() {
    let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
    let x0 = normal(&[5, 4], 3);
    let mut x = forward_diffuse(&x0, 1000, &normal(&[5, 4], 4), &sched).unwrap();
    let mut path: Vec<usize> = sched.ddim_steps().iter().rev().copied().collect();
    path.push(0);
    for w in path.windows(2) {
        let eps = oracle_gaussian_eps(&x0, 0.0, &x, w[0], &sched).unwrap();
        assert!(estimate_x0(&x, &eps, w[0], &sched).unwrap().max_abs_diff(&x0) < 1e-9);
        x = ddim_step(&x, &eps, w[0], w[1], &sched).unwrap();
    }
    assert!(x.max_abs_diff(&x0) < 1e-9);
}

#[test]
fn schedule_matches_independent_products() {
    let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
    let ab = alpha_bars(1000, 1e-4, 0.02);
    for t in 0..=1000 {
        assert!((sched.alpha_bar(t) - ab[t]).abs() <= 1e-12);
    }
    assert!(sched.alpha_bar(1000) < 1e-4);
    let want: Vec<usize> = (1..=100).map(|k| 10 * k).collect();
    assert_eq!(sched.ddim_steps(), &want[..]);
    let flat = build_schedule(50, 0.01, 0.01, 10).unwrap();
    for t in 0..=50 {
        assert!((flat.alpha_bar(t) - 0.99f64.powi(t as i32)).abs() <= 1e-12);
    }
}

#[test]
fn hand_computed_values() {
    let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
    let pm = posterior_mean(&Tensor::scalar(1.0), &Tensor::scalar(1.0), 1, &sched).unwrap();
    assert!((pm.data()[0] - 0.99005).abs() < 1e-5);
    assert!(build_schedule(1000, 0.02, 1e-4, 100).is_err());
    assert!(build_schedule(1000, 0.0, 0.02, 100).is_err());
}

#[test]
fn forward_variance_matches_closed_form() {
    let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
    let n = 100_000;
    let x0 = normal(&[n, 1], 1).scale(2.0);
    let var0 = x0.data().iter().map(|v| v * v).sum::<f64>() / n as f64 - (x0.sum() / n as f64).powi(2);
    for t in [1, 50, 300, 1000] {
        let xt = forward_diffuse(&x0, t, &normal(&[n, 1], 7 + t as u64), &sched).unwrap();
        let mean = xt.sum() / n as f64;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let want = sched.alpha_bar(t) * var0 + 1.0 - sched.alpha_bar(t);
        assert!((var - want).abs() <= 0.02 * want, "t {t}: {var} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimate_inverts_forward_at_every_t(t in 1usize..=1000, seed in 0u64..1000) {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        let x0 = normal(&[7, 4], seed);
        let eps = normal(&[7, 4], seed + 1);
        let xt = forward_diffuse(&x0, t, &eps, &sched).unwrap();
        let back = estimate_x0(&xt, &eps, t, &sched).unwrap();
        prop_assert!(back.max_abs_diff(&x0) <= 1e-12);
    }
}

#[test]
fn estimate_inverts_forward_exhaustively() {
    let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
    let x0 = normal(&[4, 4], 10);
    let eps = normal(&[4, 4], 11);
    for t in 1..=1000 {
        let xt = forward_diffuse(&x0, t, &eps, &sched).unwrap();
        let back = estimate_x0(&xt, &eps, t, &sched).unwrap();
        assert!(back.max_abs_diff(&x0) <= 1e-12, "t {t}");
    }
}
