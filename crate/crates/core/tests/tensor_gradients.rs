use driftback::seeding::rng;
use driftback::tensor::{Activation, Mlp, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Scalar loss `sum(w * exp(0.1 * mlp(x))^2)` recorded on a fresh tape.
fn record(mlp: &Mlp, x: &Tensor, w: &Tensor) -> (Tape, driftback::tensor::NodeId, driftback::tensor::NodeId) {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone(), true);
    let params = mlp.bind(&mut tape, false);
    let y = mlp.record(&mut tape, xi, &params).unwrap();
    let s = tape.scale(y, 0.1).unwrap();
    let e = tape.exp(s).unwrap();
    let sq = tape.square(e).unwrap();
    let wn = tape.constant(w.clone());
    let m = tape.mul(sq, wn).unwrap();
    let pooled = tape.max_rows(m).unwrap();
    let avg = tape.mean_rows(m).unwrap();
    let both = tape.concat_cols(&[pooled, avg]).unwrap();
    let out = tape.sum_all(both).unwrap();
    (tape, xi, out)
}

fn loss(mlp: &Mlp, x: &Tensor, w: &Tensor) -> f64 {
    let (tape, _, out) = record(mlp, x, w);
    tape.value(out).data()[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_gradient_matches_central_differences(
        seed in 0u64..10_000,
        rows in 2usize..6,
        width in 1usize..5,
        depth in 1usize..4,
        tanh_out in any::<bool>(),
    ) {
        let din = 3;
        let mut dims = vec![din];
        dims.extend(std::iter::repeat_n(width + 2, depth));
        dims.push(2);
        let act = if tanh_out { Activation::Tanh } else { Activation::Identity };
        let mlp = Mlp::new(&dims, act, &mut rng(seed));
        let x = normal(&[rows, din], seed + 1);
        let w = normal(&[rows, 2], seed + 2);
        let (tape, xi, out) = record(&mlp, &x, &w);
        let g = tape.vjp(out, &Tensor::scalar(1.0), xi).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&mlp, &p, &w) - loss(&mlp, &m, &w)) / (2.0 * h);
            let a = g.data()[i];
            prop_assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-3), "entry {}: fd {} vs tape {}", i, fd, a);
        }
    }

    #[test]
    fn vjp_is_linear_in_the_cotangent(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mlp = Mlp::new(&[3, 6, 4], Activation::Tanh, &mut rng(seed));
        let x = normal(&[5, 3], seed + 7);
        let mut tape = Tape::new();
        let xi = tape.leaf(x, true);
        let params = mlp.bind(&mut tape, false);
        let y = mlp.record(&mut tape, xi, &params).unwrap();
        let u = normal(&[5, 4], seed + 8);
        let v = normal(&[5, 4], seed + 9);
        let mix = u.scale(a).add(&v.scale(b)).unwrap();
        let gu = tape.vjp(y, &u, xi).unwrap();
        let gv = tape.vjp(y, &v, xi).unwrap();
        let gm = tape.vjp(y, &mix, xi).unwrap();
        let want = gu.scale(a).add(&gv.scale(b)).unwrap();
        prop_assert!(gm.max_abs_diff(&want) <= 1e-10 * (1.0 + want.norm()));
    }

    #[test]
    fn replay_reproduces_forward_values(seed in 0u64..10_000) {
        let mlp = Mlp::new(&[3, 5, 5, 2], Activation::Identity, &mut rng(seed));
        let x = normal(&[4, 3], seed + 3);
        let w = normal(&[4, 2], seed + 4);
        let (tape, _, out) = record(&mlp, &x, &w);
        let values = tape.replay().unwrap();
        prop_assert_eq!(&values[out.index()], tape.value(out));
    }
}

#[test]
fn parameter_gradients_match_central_differences() {
    let mlp = Mlp::new(&[3, 4, 2], Activation::Tanh, &mut rng(5));
    let x = normal(&[6, 3], 6);
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone(), false);
    let params = mlp.bind(&mut tape, true);
    let y = mlp.record(&mut tape, xi, &params).unwrap();
    let sq = tape.square(y).unwrap();
    let out = tape.sum_all(sq).unwrap();
    let grads = tape.backward(out, &Tensor::scalar(1.0)).unwrap();
    let f = |m: &Mlp| m.forward(&x).unwrap().map(|v| v * v).sum();
    for (k, p) in params.iter().enumerate() {
        let g = grads.get(*p).unwrap();
        for i in 0..g.len() {
            let mut plus = mlp.clone();
            plus.tensors_mut()[k].data_mut()[i] += 1e-6;
            let mut minus = mlp.clone();
            minus.tensors_mut()[k].data_mut()[i] -= 1e-6;
            let fd = (f(&plus) - f(&minus)) / 2e-6;
            assert!((fd - g.data()[i]).abs() <= 1e-5 * fd.abs().max(1.0), "param {k}[{i}]");
        }
    }
}

#[test]
fn gather_mean_gradient_spreads_evenly() {
    let mut tape = Tape::new();
    let a = tape.leaf(normal(&[4, 2], 1), true);
    let g = tape.gather_mean(a, vec![vec![1, 2], vec![0, 1, 3], vec![2, 2], vec![3]]).unwrap();
    let out = tape.sum_all(g).unwrap();
    let grad = tape.vjp(out, &Tensor::scalar(1.0), a).unwrap();
    let want = [1.0 / 3.0, 0.5 + 1.0 / 3.0, 0.5 + 1.0, 1.0 / 3.0 + 1.0];
    for (r, w) in want.iter().enumerate() {
        assert!((grad.get(r, 0) - w).abs() < 1e-15);
        assert!((grad.get(r, 1) - w).abs() < 1e-15);
    }
}
