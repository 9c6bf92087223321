//! Variance schedule and the closed-form diffusion identities built on it.
//!
//! Timesteps are training-time indices `0..=T`, with `alpha_bar(0) == 1` so
//! that stepping to `t_prev = 0` needs no special case. The DDIM
//! sub-sequence picks `S` of them, evenly spaced and ending at `T`.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, num_err, Result};
use crate::tensor::Tensor;

/// The four numbers that fully determine a [`NoiseSchedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(rename = "S")]
    pub ddim_steps: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            ddim_steps: 100,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_start, self.beta_end, self.ddim_steps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    ddim_steps: Vec<usize>,
}

/// Linear beta schedule over `steps` training timesteps with an
/// `ddim_steps`-long DDIM sub-sequence.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64, ddim_steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(arg_err!("schedule needs at least one timestep"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(arg_err!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        ));
    }
    if ddim_steps == 0 || ddim_steps > steps {
        return Err(arg_err!("DDIM step count {ddim_steps} outside 1..={steps}"));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    for b in &beta {
        let prev = *alpha_bar.last().unwrap();
        alpha_bar.push(prev * (1.0 - b));
    }
    let sigma = (1..=steps)
        .map(|t| {
            let var = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t - 1];
            var.sqrt()
        })
        .collect();
    let sub = (1..=ddim_steps)
        .map(|k| ((k * steps) as f64 / ddim_steps as f64).round() as usize)
        .collect();
    Ok(NoiseSchedule {
        spec: ScheduleSpec {
            steps,
            beta_start,
            beta_end,
            ddim_steps,
        },
        beta,
        alpha_bar,
        sigma,
        ddim_steps: sub,
    })
}

impl NoiseSchedule {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    /// Number of training timesteps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// Nominal DDIM stride, `round(T / S)`.
    pub fn stride(&self) -> usize {
        (self.steps() as f64 / self.ddim_steps.len() as f64).round() as usize
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Posterior standard deviation of the ancestral sampler at `t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn ddim_steps(&self) -> &[usize] {
        &self.ddim_steps
    }

    /// Training timestep of DDIM index `k` (index 0 is timestep 0).
    pub fn timestep_of_index(&self, k: usize) -> Result<usize> {
        match k {
            0 => Ok(0),
            k if k <= self.ddim_steps.len() => Ok(self.ddim_steps[k - 1]),
            k => Err(arg_err!(
                "DDIM index {k} outside 0..={}",
                self.ddim_steps.len()
            )),
        }
    }

    fn check_t(&self, t: usize, allow_zero: bool) -> Result<()> {
        if t > self.steps() || (!allow_zero && t == 0) {
            return Err(arg_err!("timestep {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(crate::error::Error::Dimension(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, false)?;
    same_shape(x0, eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, "forward_diffuse", |x, e| a * x + b * e)
}

/// Inverts the forward map given a noise prediction.
pub fn estimate_x0(xt: &Tensor, eps_pred: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, true)?;
    same_shape(xt, eps_pred)?;
    let ab = sched.alpha_bar(t);
    if ab < 1e-12 {
        return Err(num_err!("alpha_bar({t}) = {ab:e} underflows"));
    }
    let (s, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    xt.zip_map(eps_pred, "estimate_x0", |x, e| (x - b * e) / s)
}

/// Deterministic DDIM update from `t` to `t_prev`.
pub fn ddim_step(xt: &Tensor, eps_pred: &Tensor, t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    if t_prev >= t {
        return Err(arg_err!("DDIM step needs t_prev < t, got {t_prev} >= {t}"));
    }
    let x0 = estimate_x0(xt, eps_pred, t, sched)?;
    let ab = sched.alpha_bar(t_prev);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps_pred, "ddim_step", |x, e| a * x + b * e)
}

/// Mean of the ancestral (DDPM) reverse transition at `t`.
pub fn posterior_mean(xt: &Tensor, eps_pred: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, false)?;
    same_shape(xt, eps_pred)?;
    let alpha = 1.0 - sched.beta(t);
    let coef = (1.0 - alpha) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / alpha.sqrt();
    xt.zip_map(eps_pred, "posterior_mean", |x, e| inv * (x - coef * e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor {
        Tensor::row(&[v])
    }

    #[test]
    fn stride_and_subsequence() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        assert_eq!(sched.stride(), 10);
        let expect: Vec<usize> = (1..=100).map(|k| 10 * k).collect();
        assert_eq!(sched.ddim_steps(), expect.as_slice());
        assert_eq!(sched.timestep_of_index(5).unwrap(), 50);
        assert!(sched.timestep_of_index(101).is_err());
    }

    #[test]
    fn constant_beta_closed_form() {
        let c = 0.01;
        let sched = build_schedule(50, c, c, 5).unwrap();
        for t in 0..=50 {
            let want = (1.0 - c).powi(t as i32);
            assert!((sched.alpha_bar(t) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_schedule_reaches_noise() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        assert!(sched.alpha_bar(1000) < 1e-4);
        for t in 1..=1000 {
            assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(build_schedule(1000, 0.0, 0.02, 100).is_err());
        assert!(build_schedule(1000, 0.03, 0.02, 100).is_err());
        assert!(build_schedule(1000, 1e-4, 1.0, 100).is_err());
        assert!(build_schedule(10, 1e-4, 0.02, 11).is_err());
    }

    /// A schedule whose alpha_bar at t = 1 is exactly `ab`.
    fn single_step(ab: f64) -> NoiseSchedule {
        build_schedule(1, 1.0 - ab, 1.0 - ab, 1).unwrap()
    }

    #[test]
    fn forward_and_inverse_hand_values() {
        let sched = single_step(0.25);
        let xt = forward_diffuse(&s(2.0), 1, &s(1.0), &sched).unwrap();
        assert!((xt.data()[0] - (1.0 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((xt.data()[0] - 1.8660).abs() < 1e-4);
        let x0 = estimate_x0(&s(1.8660), &s(1.0), 1, &sched).unwrap();
        assert!((x0.data()[0] - 2.0).abs() < 1e-3);
        let x0 = estimate_x0(&xt, &s(1.0), 1, &sched).unwrap();
        assert!((x0.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn forward_degenerate_inputs() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        let x0 = Tensor::row(&[1.0, -2.0]);
        let zero = Tensor::zeros(&[1, 2]);
        let ab = sched.alpha_bar(300);
        let y = forward_diffuse(&x0, 300, &zero, &sched).unwrap();
        assert_eq!(y, x0.scale(ab.sqrt()));
        let y = forward_diffuse(&zero, 300, &x0, &sched).unwrap();
        assert_eq!(y, x0.scale((1.0 - ab).sqrt()));
        assert!(forward_diffuse(&x0, 0, &zero, &sched).is_err());
        assert!(forward_diffuse(&x0, 1001, &zero, &sched).is_err());
        let e = estimate_x0(&x0, &zero, 300, &sched).unwrap();
        assert!(e.max_abs_diff(&x0.scale(1.0 / ab.sqrt())) < 1e-15);
    }

    #[test]
    fn ddim_terminal_and_rescaling() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        let xt = Tensor::row(&[0.3, -1.2, 2.0]);
        let eps = Tensor::row(&[0.1, 0.5, -0.7]);
        assert_eq!(
            ddim_step(&xt, &eps, 40, 0, &sched).unwrap(),
            estimate_x0(&xt, &eps, 40, &sched).unwrap()
        );
        let zero = Tensor::zeros(&[1, 3]);
        let y = ddim_step(&xt, &zero, 40, 30, &sched).unwrap();
        let r = (sched.alpha_bar(30) / sched.alpha_bar(40)).sqrt();
        assert!(y.max_abs_diff(&xt.scale(r)) < 1e-14);
        assert!(ddim_step(&xt, &eps, 30, 30, &sched).is_err());
    }

    #[test]
    fn tiny_alpha_bar_is_a_numeric_error() {
        let sched = build_schedule(2000, 0.5, 0.9, 10).unwrap();
        assert!(sched.alpha_bar(2000) < 1e-12);
        let x = Tensor::row(&[1.0]);
        assert!(matches!(
            estimate_x0(&x, &x, 2000, &sched),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn posterior_mean_examples() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        let y = posterior_mean(&s(1.0), &s(1.0), 1, &sched).unwrap();
        let want = (1.0 - 1e-4 / 1e-4f64.sqrt()) / (1.0 - 1e-4f64).sqrt();
        assert!((y.data()[0] - want).abs() < 1e-15);
        assert!((y.data()[0] - 0.99005).abs() < 1e-5);

        let xt = Tensor::row(&[0.4, -0.9]);
        let y = posterior_mean(&xt, &Tensor::zeros(&[1, 2]), 7, &sched).unwrap();
        assert!(y.max_abs_diff(&xt.scale(1.0 / (1.0 - sched.beta(7)).sqrt())) < 1e-15);

        // one-step inversion: at t = 1, alpha_bar equals alpha
        let x0 = Tensor::row(&[0.7, -0.2]);
        let eps = Tensor::row(&[1.3, 0.4]);
        let x1 = forward_diffuse(&x0, 1, &eps, &sched).unwrap();
        let back = posterior_mean(&x1, &eps, 1, &sched).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-10);
        assert!(posterior_mean(&xt, &xt, 0, &sched).is_err());
    }
}
