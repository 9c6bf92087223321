//! Training loops for the VAE (negative ELBO), the noise predictors
//! (noise-regression objective) and the classifier (cross-entropy).
//!
//! Gradients are computed per sample, possibly in parallel, and summed in
//! batch order, so results do not depend on the worker count.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCloud;
use crate::error::{arg_err, Error, Result};
use crate::geometry::PointCloud;
use crate::models::{
    ClassifierArch, ClassifierModel, DenoiserArch, DenoiserModel, ParamSet, VaeArch, VaeModel,
};
use crate::schedule::{forward_diffuse, NoiseSchedule};
use crate::seeding::{derive_seed, rng};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Momentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub gamma_z: f64,
    pub gamma_h: f64,
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    /// Points drawn (without replacement) from each cloud per step; `None`
    /// uses every point.
    #[serde(default)]
    pub points: Option<usize>,
    /// Upper end of the timestep range sampled by the denoiser objective;
    /// `None` means the full schedule.
    #[serde(default)]
    pub max_timestep: Option<usize>,
    /// Whether the denoiser objective draws latents from the encoder
    /// posterior (`true`) or uses the posterior means.
    #[serde(default = "default_true")]
    pub sample_latents: bool,
}

fn default_true() -> bool {
    true
}

fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch: 16,
            lr: 1e-3,
            gamma_z: 1e-3,
            gamma_h: 1e-3,
            seed: 0,
            optimizer: Optimizer::Adam,
            points: None,
            max_timestep: None,
            sample_latents: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(arg_err!("epochs and batch must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(arg_err!("learning rate must be positive"));
        }
        if self.gamma_z < 0.0 || self.gamma_h < 0.0 {
            return Err(arg_err!("KL weights must be nonnegative"));
        }
        if self.points == Some(0) {
            return Err(arg_err!("points per sample must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch.
    pub loss: f64,
    /// Objective-specific breakdown (named terms averaged over the epoch).
    pub terms: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

struct OptState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

impl OptState {
    fn new(params: &[&Tensor]) -> Self {
        OptState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    fn apply(&mut self, kind: Optimizer, lr: f64, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let pd = p.data_mut();
            match kind {
                Optimizer::Momentum => {
                    for i in 0..pd.len() {
                        m[i] = B1 * m[i] + g.data()[i];
                        pd[i] -= lr * m[i];
                    }
                }
                Optimizer::Adam => {
                    let v = self.v[k].data_mut();
                    for i in 0..pd.len() {
                        let gi = g.data()[i];
                        m[i] = B1 * m[i] + (1.0 - B1) * gi;
                        v[i] = B2 * v[i] + (1.0 - B2) * gi * gi;
                        pd[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// One sample's objective value, named terms, and parameter gradients.
type SampleOut = (f64, Vec<f64>, Vec<Tensor>);

/// Shared minibatch loop. `sample(model, item, seed)` returns the loss and
/// gradients for one item.
fn fit<M, F>(model: &mut M, items: usize, cfg: &TrainConfig, term_names: &[&str], sample: F) -> Result<TrainLog>
where
    M: ParamSet + Sync,
    F: Fn(&M, usize, u64) -> Result<SampleOut> + Sync,
{
    cfg.validate()?;
    if items == 0 {
        return Err(arg_err!("training set is empty"));
    }
    let mut opt = OptState::new(&model.params());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..items).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng(derive_seed(cfg.seed, &[0x5eed, epoch as u64])));
        let mut total = 0.0;
        let mut terms = vec![0.0; term_names.len()];
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let m: &M = model;
            let outs: Vec<Result<SampleOut>> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &item)| sample(m, item, derive_seed(cfg.seed, &[epoch as u64, b as u64, j as u64])))
                .collect();
            let mut grads: Option<Vec<Tensor>> = None;
            for out in outs {
                let (loss, t, g) = out.map_err(|e| match e {
                    Error::Training { message, .. } => Error::Training { epoch, message },
                    e => e,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        message: format!("loss became {loss}"),
                    });
                }
                total += loss;
                for (acc, v) in terms.iter_mut().zip(t) {
                    *acc += v;
                }
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            a.add_assign(gi);
                        }
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            let grads: Vec<Tensor> = grads.unwrap().into_iter().map(|g| g.scale(scale)).collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite gradient".into(),
                });
            }
            opt.apply(cfg.optimizer, cfg.lr, model.params_mut(), &grads);
        }
        let n = items as f64;
        log.epochs.push(EpochRecord {
            epoch,
            loss: total / n,
            terms: term_names
                .iter()
                .zip(&terms)
                .map(|(k, v)| (k.to_string(), v / n))
                .collect(),
        });
    }
    Ok(log)
}

/// Gradients of a scalar `loss` node with respect to the bound parameters,
/// zeros where a parameter does not reach the loss.
fn param_grads(tape: &Tape, loss: crate::tensor::NodeId, params: &[crate::tensor::NodeId]) -> Result<Vec<Tensor>> {
    let mut g = tape.backward(loss, &Tensor::scalar(1.0))?;
    Ok(params
        .iter()
        .map(|&p| g.take(p).unwrap_or_else(|| Tensor::zeros(tape.value(p).shape())))
        .collect())
}

/// Random subset of rows (sorted), or all rows when `k >= n`.
pub(crate) fn subsample(n: usize, k: Option<usize>, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    match k {
        Some(k) if k < n => {
            let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    }
}

fn rows_of(t: &Tensor, idx: &Option<Vec<usize>>) -> Tensor {
    match idx {
        Some(i) => t.select_rows(i),
        None => t.clone(),
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

pub fn train_vae(corpus: &[PointCloud], arch: VaeArch, cfg: &TrainConfig) -> Result<(VaeModel, TrainLog)> {
    let mut model = VaeModel::new(arch, &mut rng(derive_seed(cfg.seed, &[0x1a7e])));
    let data: Vec<Tensor> = corpus.iter().map(PointCloud::to_tensor).collect();
    let log = fit(&mut model, data.len(), cfg, &["recon", "kl_z", "kl_h"], |m, item, seed| {
        let mut r = rng(seed);
        let idx = subsample(data[item].rows(), cfg.points, &mut r);
        let x = rows_of(&data[item], &idx);
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, true);
        let (loss, parts) = m.record_loss(&mut tape, &p, &x, cfg.gamma_z, cfg.gamma_h, &mut r)?;
        if parts.kl_z < -1e-9 || parts.kl_h < -1e-9 {
            return Err(Error::Training {
                epoch: 0,
                message: format!("negative KL ({}, {})", parts.kl_z, parts.kl_h),
            });
        }
        let grads = param_grads(&tape, loss, &p)?;
        let n = x.rows() as f64;
        Ok((tape.value(loss).data()[0], vec![parts.recon / n, parts.kl_z, parts.kl_h / n], grads))
    })?;
    Ok((model, log))
}

/// Posterior statistics of one training cloud, computed once.
struct EncodedCloud {
    z_mu: Tensor,
    z_ls: Tensor,
    h_mu: Tensor,
    h_ls: Tensor,
}

fn encode_for_training(vae: &VaeModel, x: &PointCloud) -> Result<EncodedCloud> {
    let (z_mu, z_ls) = vae.shape_posterior(x)?;
    let z0 = crate::models::ShapeLatent::new(z_mu.clone())?;
    let mut tape = Tape::new();
    let p = vae.bind(&mut tape, false);
    let xn = tape.constant(x.to_tensor());
    let z = tape.constant(z0.z);
    let (mu, ls) = vae.record_point_posterior(&mut tape, &p, xn, z)?;
    Ok(EncodedCloud {
        z_mu,
        z_ls,
        h_mu: tape.value(mu).clone(),
        h_ls: tape.value(ls).clone(),
    })
}

/// Fits both noise predictors on latents of `corpus` drawn from the frozen
/// encoder. The objective is reported per latent point (the zero predictor
/// scores 4) plus the per-cloud shape-latent term.
pub fn train_diffusion(
    vae: &VaeModel,
    corpus: &[PointCloud],
    arch: DenoiserArch,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(DenoiserModel, TrainLog)> {
    if arch.dz != vae.arch.dz {
        return Err(arg_err!("denoiser dz {} does not match VAE dz {}", arch.dz, vae.arch.dz));
    }
    let arch = DenoiserArch {
        schedule: sched.spec(),
        ..arch
    };
    let t_max = cfg.max_timestep.unwrap_or(sched.steps()).clamp(1, sched.steps());
    let encoded: Vec<EncodedCloud> = corpus
        .par_iter()
        .map(|x| encode_for_training(vae, x))
        .collect::<Result<_>>()?;
    let mut model = DenoiserModel::new(arch, &mut rng(derive_seed(cfg.seed, &[0xd1ff])));
    let log = fit(&mut model, encoded.len(), cfg, &["eps_h", "eps_z"], |m, item, seed| {
        let mut r = rng(seed);
        let e = &encoded[item];
        let idx = subsample(e.h_mu.rows(), cfg.points, &mut r);
        let (mu, ls) = (rows_of(&e.h_mu, &idx), rows_of(&e.h_ls, &idx));
        let (z0, h0) = if cfg.sample_latents {
            (
                e.z_mu.add(&e.z_ls.map(f64::exp).mul(&gaussian(1, arch.dz, &mut r))?)?,
                mu.add(&ls.map(f64::exp).mul(&gaussian(mu.rows(), 4, &mut r))?)?,
            )
        } else {
            (e.z_mu.clone(), mu)
        };
        let t = r.random_range(1..=t_max);
        let eps = gaussian(h0.rows(), 4, &mut r);
        let h_t = forward_diffuse(&h0, t, &eps, sched)?;
        let tz = r.random_range(1..=t_max);
        let eps_z = gaussian(1, arch.dz, &mut r);
        let z_t = forward_diffuse(&z0, tz, &eps_z, sched)?;

        let mut tape = Tape::new();
        let p = m.bind(&mut tape, true);
        let hn = tape.constant(h_t);
        let zn = tape.constant(z0);
        let pred = m.record_eps_h(&mut tape, &p, hn, zn, t)?;
        let target = tape.constant(eps);
        let d = tape.sub(pred, target)?;
        let d = tape.square(d)?;
        let lh = tape.sum_all(d)?;
        let lh = tape.scale(lh, 1.0 / h0.rows() as f64)?;

        let ztn = tape.constant(z_t);
        let pz = m.record_eps_z(&mut tape, &p, ztn, tz)?;
        let tz_node = tape.constant(eps_z);
        let dz = tape.sub(pz, tz_node)?;
        let dz = tape.square(dz)?;
        let lz = tape.sum_all(dz)?;
        let loss = tape.add(lh, lz)?;
        let grads = param_grads(&tape, loss, &p)?;
        let (vh, vz) = (tape.value(lh).data()[0], tape.value(lz).data()[0]);
        Ok((vh + vz, vec![vh, vz], grads))
    })?;
    Ok((model, log))
}

/// Mean per-point noise-regression error of `eps_h` over `corpus`, with
/// timesteps and noise drawn from `seed`; the zero predictor scores about 4.
pub fn denoiser_loss(
    vae: &VaeModel,
    model: &DenoiserModel,
    corpus: &[PointCloud],
    sched: &NoiseSchedule,
    t_max: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64)> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng(derive_seed(seed, &[i as u64]));
            let (z0, h0) = vae.encode(x)?;
            let t = r.random_range(1..=t_max.clamp(1, sched.steps()));
            let eps = gaussian(h0.len(), 4, &mut r);
            let h_t = crate::geometry::LatentPoints::new(forward_diffuse(&h0.values, t, &eps, sched)?)?;
            let (pred, _) = model.denoise_eps_h(&h_t, &z0, t, false)?;
            let n = h0.len() as f64;
            let err = pred.values.sub(&eps)?.data().iter().map(|v| v * v).sum::<f64>() / n;
            let base = eps.data().iter().map(|v| v * v).sum::<f64>() / n;
            Ok((err, base))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

pub fn train_classifier(
    corpus: &[LabeledCloud],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainLog)> {
    if classes < 2 {
        return Err(arg_err!("need at least two classes"));
    }
    if let Some(c) = corpus.iter().find(|c| c.label >= classes) {
        return Err(arg_err!("label {} of {} outside {classes} classes", c.label, c.id));
    }
    let mut model = ClassifierModel::new(ClassifierArch::with_classes(classes), &mut rng(derive_seed(cfg.seed, &[0xc1a5])));
    let data: Vec<Tensor> = corpus.iter().map(|c| c.cloud.to_tensor()).collect();
    let log = fit(&mut model, data.len(), cfg, &["accuracy"], |m, item, seed| {
        let mut r = rng(seed);
        let idx = subsample(data[item].rows(), cfg.points, &mut r);
        let x = rows_of(&data[item], &idx);
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, true);
        let xn = tape.constant(x);
        let logits = m.record_logits(&mut tape, &p, xn)?;
        let label = corpus[item].label;
        let hit = crate::models::argmax(tape.value(logits).data()) == label;
        let loss = tape.softmax_xent(logits, &[label])?;
        let grads = param_grads(&tape, loss, &p)?;
        Ok((tape.value(loss).data()[0], vec![if hit { 1.0 } else { 0.0 }], grads))
    })?;
    Ok((model, log))
}

/// Percentage of `corpus` whose predicted label matches.
pub fn accuracy(clf: &ClassifierModel, corpus: &[LabeledCloud]) -> Result<f64> {
    let hits: Vec<bool> = corpus
        .par_iter()
        .map(|c| Ok(clf.classify(&c.cloud)?.0 == c.label))
        .collect::<Result<_>>()?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / corpus.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch: 4,
            lr: 3e-3,
            points: Some(64),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn vae_training_is_reproducible_and_improves() {
        let corpus: Vec<PointCloud> = generate_corpus(&CorpusSpec { families: 2, per_class: 4, points: 128, seed: 0 })
            .unwrap()
            .into_iter()
            .map(|c| c.cloud)
            .collect();
        let arch = VaeArch { dz: 8, hidden: 16 };
        let (a, log_a) = train_vae(&corpus, arch, &small_cfg(6)).unwrap();
        let (b, log_b) = train_vae(&corpus, arch, &small_cfg(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert!(log_a.epochs.last().unwrap().loss < log_a.epochs[0].loss);
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let c = vec![PointCloud::new(vec![[0.0; 3]]).unwrap()];
        assert!(train_vae(&c, VaeArch::default(), &cfg).is_err());
        assert!(train_vae(&[], VaeArch::default(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn adam_and_momentum_descend_a_quadratic() {
        for kind in [Optimizer::Adam, Optimizer::Momentum] {
            let mut x = Tensor::row(&[3.0, -2.0]);
            let mut st = OptState::new(&[&x]);
            for _ in 0..3000 {
                let g = x.scale(2.0);
                st.apply(kind, 0.01, vec![&mut x], &[g]);
            }
            assert!(x.norm() < 0.05, "{kind:?}: {}", x.norm());
        }
    }
}
