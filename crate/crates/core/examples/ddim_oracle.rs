//! Runs the deterministic sampler with the closed-form noise predictor for
//! Gaussian data and compares coarser step grids against the full
//! 1000-step path.
//!
//!     cargo run --example ddim_oracle

use driftback::models::oracle_gaussian_eps;
use driftback::schedule::{build_schedule, ddim_step, NoiseSchedule};
use driftback::tensor::Tensor;

fn sample(sched: &NoiseSchedule, x_t: &Tensor, mu: &Tensor, var: f64) -> driftback::Result<Tensor> {
    let mut path: Vec<usize> = sched.ddim_steps().iter().rev().copied().collect();
    path.push(0);
    let mut x = x_t.clone();
    for w in path.windows(2) {
        let eps = oracle_gaussian_eps(mu, var, &x, w[0], sched)?;
        x = ddim_step(&x, &eps, w[0], w[1], sched)?;
    }
    Ok(x)
}

fn main() -> driftback::Result<()> {
    let mu = Tensor::row(&[1.0, -0.5, 0.25]);
    let var = 0.2;
    let x_t = Tensor::row(&[0.3, 1.7, -0.9]);
    let fine = build_schedule(1000, 1e-4, 0.02, 1000)?;
    let reference = sample(&fine, &x_t, &mu, var)?;
    println!("1000 steps -> {:?}", reference.data());
    for s in [500, 100, 20, 5] {
        let sched = build_schedule(1000, 1e-4, 0.02, s)?;
        let x = sample(&sched, &x_t, &mu, var)?;
        println!(
            "{s:>4} steps (stride {:>3}) -> {:?}  max diff {:.2e}",
            sched.stride(),
            x.data().iter().map(|v| (v * 1e6).round() / 1e6).collect::<Vec<_>>(),
            x.max_abs_diff(&reference)
        );
    }
    Ok(())
}
