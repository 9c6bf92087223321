use crate::error::{num_err, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Bayes-optimal noise prediction `E[eps | x_t]` when the clean data is
/// `N(mu, var I)`: the posterior mean of `x0` is a precision-weighted blend
/// of `x_t` and `mu`, and the noise follows from the forward relation.
pub fn oracle_gaussian_eps(mu: &Tensor, var: f64, x_t: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    if var < 0.0 {
        return Err(crate::error::arg_err!("variance must be nonnegative, got {var}"));
    }
    if t == 0 || t > sched.steps() {
        return Err(crate::error::arg_err!("timestep {t} outside 1..={}", sched.steps()));
    }
    let ab = sched.alpha_bar(t);
    let denom = ab * var + 1.0 - ab;
    let noise_sd = (1.0 - ab).sqrt();
    if denom < 1e-300 || noise_sd == 0.0 {
        return Err(num_err!("degenerate oracle denominator at t = {t}"));
    }
    let s = ab.sqrt();
    let x0 = x_t.zip_map(mu, "oracle", |x, m| (s * var * x + (1.0 - ab) * m) / denom)?;
    x_t.zip_map(&x0, "oracle", |x, x0| (x - s * x0) / noise_sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, estimate_x0};

    #[test]
    fn point_mass_recovers_mean() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        let mu = Tensor::row(&[0.3, -0.7]);
        let xt = Tensor::row(&[5.0, 2.0]);
        let eps = oracle_gaussian_eps(&mu, 0.0, &xt, 400, &sched).unwrap();
        let x0 = estimate_x0(&xt, &eps, 400, &sched).unwrap();
        assert!(x0.max_abs_diff(&mu) < 1e-12);
    }

    #[test]
    fn standard_normal_data() {
        let sched = build_schedule(1000, 1e-4, 0.02, 100).unwrap();
        let xt = Tensor::row(&[1.2, -0.4]);
        let eps = oracle_gaussian_eps(&Tensor::zeros(&[1, 2]), 1.0, &xt, 250, &sched).unwrap();
        let ab = sched.alpha_bar(250);
        assert!(eps.max_abs_diff(&xt.scale((1.0 - ab).sqrt())) < 1e-14);
    }

    #[test]
    fn hand_example_half_alpha_bar() {
        // beta = 0.5 on a one-step schedule gives alpha_bar(1) = 0.5
        let sched = build_schedule(1, 0.5, 0.5, 1).unwrap();
        let eps = oracle_gaussian_eps(&Tensor::row(&[2.0]), 1.0, &Tensor::row(&[1.0]), 1, &sched).unwrap();
        let x0 = estimate_x0(&Tensor::row(&[1.0]), &eps, 1, &sched).unwrap();
        assert!((x0.data()[0] - (0.5f64.sqrt() + 1.0)).abs() < 1e-12);
        assert!((x0.data()[0] - 1.7071).abs() < 1e-4);
    }
}
