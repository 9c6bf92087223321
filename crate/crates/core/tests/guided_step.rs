use driftback::adapt::{guided_step, AdaptationConfig, ScdChannels};
use driftback::geometry::{scd, LatentPoints};
use driftback::models::{DenoiserArch, DenoiserModel, ShapeLatent};
use driftback::schedule::{build_schedule, ddim_step, estimate_x0, NoiseSchedule};
use driftback::seeding::rng;
use driftback::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

struct Instance {
    den: DenoiserModel,
    h_t: LatentPoints,
    h0: LatentPoints,
    z0: ShapeLatent,
    t: usize,
    t_prev: usize,
}

fn instance(seed: u64) -> Instance {
    let arch = DenoiserArch {
        dz: 6,
        hidden: 12,
        context: 6,
        time_dim: 8,
        prior_hidden: 8,
        neighbors: 2 + seed as usize % 3,
        ..DenoiserArch::default()
    };
    let n = 9 + seed as usize % 5;
    let t = [50, 120, 300, 600][seed as usize % 4];
    Instance {
        den: DenoiserModel::new(arch, &mut rng(seed)),
        h_t: LatentPoints::new(normal(&[n, 4], 1000 + seed)).unwrap(),
        h0: LatentPoints::new(normal(&[n + 2, 4], 2000 + seed).scale(0.8)).unwrap(),
        z0: ShapeLatent::new(normal(&[1, 6], 3000 + seed)).unwrap(),
        t,
        t_prev: t - 10,
    }
}

fn schedule() -> NoiseSchedule {
    build_schedule(1000, 1e-4, 0.02, 100).unwrap()
}

fn l_cd(inst: &Instance, h_t: &Tensor, z0: &Tensor, lambda: f64, sched: &NoiseSchedule) -> f64 {
    let h = LatentPoints::new(h_t.clone()).unwrap();
    let z = ShapeLatent::new(z0.clone()).unwrap();
    let eps = inst.den.denoise_eps_h(&h, &z, inst.t, false).unwrap().0;
    let bar = estimate_x0(h_t, &eps.values, inst.t, sched).unwrap();
    scd(&inst.h0.values, &bar, lambda).unwrap().value
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6)
}

#[test]
fn latent_point_gradient_matches_central_differences() {
    let sched = schedule();
    for seed in 0..24u64 {
        let inst = instance(seed);
        let lambda = if seed % 2 == 0 { 1.0 } else { 0.96 };
        let cfg = AdaptationConfig {
            gamma: 0.0,
            eta: 1.0,
            lambda,
            full_h_backprop: true,
            ..AdaptationConfig::default()
        };
        let step = guided_step(&inst.h_t, &inst.z0, &inst.h0, inst.t, inst.t_prev, &cfg, &inst.den, &sched).unwrap();
        let eps = inst.den.denoise_eps_h(&inst.h_t, &inst.z0, inst.t, false).unwrap().0;
        let plain = ddim_step(&inst.h_t.values, &eps.values, inst.t, inst.t_prev, &sched).unwrap();
        let grad = plain.sub(&step.h_prev.values).unwrap();
        for i in 0..grad.len() {
            let d = 1e-6;
            let mut plus = inst.h_t.values.clone();
            plus.data_mut()[i] += d;
            let mut minus = inst.h_t.values.clone();
            minus.data_mut()[i] -= d;
            let fd = (l_cd(&inst, &plus, &inst.z0.z, lambda, &sched) - l_cd(&inst, &minus, &inst.z0.z, lambda, &sched)) / (2.0 * d);
            assert!(close(fd, grad.data()[i]), "seed {seed} entry {i}: fd {fd} vs {}", grad.data()[i]);
        }
    }
}

#[test]
fn shape_latent_gradient_matches_central_differences() {
    let sched = schedule();
    for seed in 0..24u64 {
        let inst = instance(100 + seed);
        let lambda = if seed % 2 == 0 { 1.0 } else { 0.96 };
        let cfg = AdaptationConfig {
            gamma: 1.0,
            eta: 0.0,
            lambda,
            ..AdaptationConfig::default()
        };
        let step = guided_step(&inst.h_t, &inst.z0, &inst.h0, inst.t, inst.t_prev, &cfg, &inst.den, &sched).unwrap();
        let grad = inst.z0.z.sub(&step.z0.z).unwrap();
        for i in 0..grad.len() {
            let d = 1e-6;
            let mut plus = inst.z0.z.clone();
            plus.data_mut()[i] += d;
            let mut minus = inst.z0.z.clone();
            minus.data_mut()[i] -= d;
            let fd = (l_cd(&inst, &inst.h_t.values, &plus, lambda, &sched) - l_cd(&inst, &inst.h_t.values, &minus, lambda, &sched)) / (2.0 * d);
            assert!(close(fd, grad.data()[i]), "seed {seed} entry {i}: fd {fd} vs {}", grad.data()[i]);
        }
    }
}

#[test]
fn guidance_descends_for_small_weights() {
    let sched = schedule();
    for seed in 0..10u64 {
        let inst = instance(500 + seed);
        for eta in [1e-3, 1e-4] {
            let cfg = AdaptationConfig {
                gamma: 0.0,
                eta,
                lambda: 0.96,
                full_h_backprop: true,
                ..AdaptationConfig::default()
            };
            let step = guided_step(&inst.h_t, &inst.z0, &inst.h0, inst.t, inst.t_prev, &cfg, &inst.den, &sched).unwrap();
            let eps = inst.den.denoise_eps_h(&inst.h_t, &inst.z0, inst.t, false).unwrap().0;
            let plain = ddim_step(&inst.h_t.values, &eps.values, inst.t, inst.t_prev, &sched).unwrap();
            let correction = plain.sub(&step.h_prev.values).unwrap();
            let moved = inst.h_t.values.sub(&correction).unwrap();
            let before = l_cd(&inst, &inst.h_t.values, &inst.z0.z, 0.96, &sched);
            let after = l_cd(&inst, &moved, &inst.z0.z, 0.96, &sched);
            assert!(after <= before, "seed {seed} eta {eta}: {after} > {before}");
        }
    }
}

#[test]
fn identical_estimate_gives_a_pure_ddim_step() {
    let sched = schedule();
    let inst = instance(7);
    let eps = inst.den.denoise_eps_h(&inst.h_t, &inst.z0, inst.t, false).unwrap().0;
    let h0 = LatentPoints::new(estimate_x0(&inst.h_t.values, &eps.values, inst.t, &sched).unwrap()).unwrap();
    let cfg = AdaptationConfig {
        full_h_backprop: true,
        ..AdaptationConfig::default()
    };
    let step = guided_step(&inst.h_t, &inst.z0, &h0, inst.t, inst.t_prev, &cfg, &inst.den, &sched).unwrap();
    assert_eq!(step.record.l_cd, 0.0);
    assert_eq!(step.record.grad_z_norm, 0.0);
    assert_eq!(step.record.guidance_norm, 0.0);
    assert_eq!(step.z0, inst.z0);
    let plain = ddim_step(&inst.h_t.values, &eps.values, inst.t, inst.t_prev, &sched).unwrap();
    assert!(step.h_prev.values.max_abs_diff(&plain) < 1e-15);
}

#[test]
fn xyz_channels_leave_the_feature_untouched() {
    let sched = schedule();
    let inst = instance(3);
    let cfg = AdaptationConfig {
        gamma: 0.0,
        eta: 1.0,
        scd_channels: ScdChannels::Xyz,
        ..AdaptationConfig::default()
    };
    let step = guided_step(&inst.h_t, &inst.z0, &inst.h0, inst.t, inst.t_prev, &cfg, &inst.den, &sched).unwrap();
    let eps = inst.den.denoise_eps_h(&inst.h_t, &inst.z0, inst.t, false).unwrap().0;
    let plain = ddim_step(&inst.h_t.values, &eps.values, inst.t, inst.t_prev, &sched).unwrap();
    let diff = plain.sub(&step.h_prev.values).unwrap();
    for r in 0..diff.rows() {
        assert_eq!(diff.get(r, 3), 0.0);
    }
    assert!(diff.norm() > 0.0);
}

#[test]
fn default_latent_gradient_holds_the_noise_estimate_fixed() {
    let sched = schedule();
    for seed in 0..20u64 {
        let inst = instance(900 + seed);
        let lambda = if seed % 2 == 0 { 1.0 } else { 0.96 };
        let cfg = AdaptationConfig {
            gamma: 0.0,
            eta: 1.0,
            lambda,
            ..AdaptationConfig::default()
        };
        let step = guided_step(&inst.h_t, &inst.z0, &inst.h0, inst.t, inst.t_prev, &cfg, &inst.den, &sched).unwrap();
        let eps = inst.den.denoise_eps_h(&inst.h_t, &inst.z0, inst.t, false).unwrap().0;
        let plain = ddim_step(&inst.h_t.values, &eps.values, inst.t, inst.t_prev, &sched).unwrap();
        let grad = plain.sub(&step.h_prev.values).unwrap();
        let frozen = |h: &Tensor| scd(&inst.h0.values, &estimate_x0(h, &eps.values, inst.t, &sched).unwrap(), lambda).unwrap().value;
        for i in 0..grad.len() {
            let d = 1e-6;
            let mut plus = inst.h_t.values.clone();
            plus.data_mut()[i] += d;
            let mut minus = inst.h_t.values.clone();
            minus.data_mut()[i] -= d;
            let fd = (frozen(&plus) - frozen(&minus)) / (2.0 * d);
            assert!(close(fd, grad.data()[i]), "seed {seed} entry {i}: fd {fd} vs {}", grad.data()[i]);
        }
    }
}
