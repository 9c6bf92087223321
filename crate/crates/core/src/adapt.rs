//! Test-time adaptation of a single input: encode, noise the latent points
//! to depth `t_w`, run guided deterministic denoising back to zero while
//! nudging the shape latent, decode.
//!
//! Each guided step predicts noise, forms the clean estimate `h̄0`, scores it
//! against the encoded input `h0` with the selective Chamfer distance, and
//! uses that score's gradient twice: through the noise predictor to update
//! `z0`, and through the clean estimate to correct the DDIM update of `h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, num_err, Error, Result};
use crate::geometry::{chamfer_clouds, scd_with_grads, LatentPoints, PointCloud};
use crate::models::{ClassifierModel, DenoiserModel, ShapeLatent, VaeModel};
use crate::schedule::{estimate_x0, forward_diffuse, NoiseSchedule};
use crate::seeding::{hash_str, rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScdChannels {
    #[default]
    All4,
    Xyz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Perturbation depth as a DDIM index.
    pub t_w: usize,
    /// Number of DDIM steps spanning the full schedule.
    #[serde(rename = "S")]
    pub steps: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub eta: f64,
    pub seed: u64,
    #[serde(default)]
    pub scd_channels: ScdChannels,
    /// Also backpropagate the latent-point correction through the noise
    /// predictor instead of through the clean estimate alone.
    #[serde(default)]
    pub full_h_backprop: bool,
    /// Keep the latent points of every iteration in the trace.
    #[serde(default)]
    pub snapshots: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            t_w: 5,
            steps: 100,
            lambda: 0.96,
            gamma: 0.01,
            eta: 0.01,
            seed: 0,
            scd_channels: ScdChannels::All4,
            full_h_backprop: false,
            snapshots: false,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_w > self.steps {
            return Err(arg_err!("t_w = {} exceeds S = {}", self.t_w, self.steps));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(arg_err!("lambda must lie in (0, 1], got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.eta >= 0.0) {
            return Err(arg_err!("gamma and eta must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub t_prev: usize,
    /// Selective Chamfer distance between `h0` and the clean estimate.
    pub l_cd: f64,
    pub grad_z_norm: f64,
    /// Norm of the correction subtracted from the DDIM update.
    pub guidance_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snapshot: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    pub records: Vec<TraceRecord>,
}

/// Frozen models used during adaptation.
#[derive(Clone, Copy)]
pub struct AdaptModels<'a> {
    pub vae: &'a VaeModel,
    pub denoiser: &'a DenoiserModel,
}

fn check_schedule(cfg: &AdaptationConfig, models: AdaptModels<'_>, sched: &NoiseSchedule) -> Result<()> {
    let (own, used) = (models.denoiser.arch.schedule, sched.spec());
    if (own.steps, own.beta_start, own.beta_end) != (used.steps, used.beta_start, used.beta_end) {
        return Err(arg_err!(
            "denoiser was trained for T = {}, beta in [{}, {}] but the schedule has T = {}, beta in [{}, {}]",
            own.steps,
            own.beta_start,
            own.beta_end,
            used.steps,
            used.beta_start,
            used.beta_end
        ));
    }
    if sched.ddim_steps().len() != cfg.steps {
        return Err(arg_err!(
            "schedule has {} DDIM steps but the config asks for {}",
            sched.ddim_steps().len(),
            cfg.steps
        ));
    }
    Ok(())
}

fn gaussian_like(t: &Tensor, seed: u64) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let data = (0..t.len()).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Noises `h0` to the training timestep of DDIM index `t_w` with the given
/// noise; index 0 returns `h0` unchanged.
pub fn perturb_latent_with(h0: &LatentPoints, t_w: usize, sched: &NoiseSchedule, eps: &Tensor) -> Result<LatentPoints> {
    let t = sched.timestep_of_index(t_w)?;
    if t == 0 {
        return Ok(h0.clone());
    }
    LatentPoints::new(forward_diffuse(&h0.values, t, eps, sched)?)
}

/// Noises `h0` to DDIM index `t_w` with standard normal noise drawn from
/// `seed`.
pub fn perturb_latent(h0: &LatentPoints, t_w: usize, sched: &NoiseSchedule, seed: u64) -> Result<LatentPoints> {
    perturb_latent_with(h0, t_w, sched, &gaussian_like(&h0.values, seed))
}

pub struct GuidedStep {
    pub h_prev: LatentPoints,
    pub z0: ShapeLatent,
    pub record: TraceRecord,
}

/// The selective Chamfer distance between the reference and a clean
/// estimate, and its gradient with respect to the estimate.
fn scd_and_grad(h0: &Tensor, h_bar: &Tensor, cfg: &AdaptationConfig) -> Result<(f64, Tensor)> {
    match cfg.scd_channels {
        ScdChannels::All4 => {
            let (res, _, g) = scd_with_grads(h0, h_bar, cfg.lambda)?;
            Ok((res.value, g))
        }
        ScdChannels::Xyz => {
            let (res, _, g) = scd_with_grads(&h0.slice_cols(0, 3)?, &h_bar.slice_cols(0, 3)?, cfg.lambda)?;
            let pad = Tensor::zeros(&[g.rows(), 1]);
            Ok((res.value, Tensor::concat_cols(&[&g, &pad])?))
        }
    }
}

/// One guided DDIM step from `t` to `t_prev`, with `h0` the encoded input
/// that the clean estimate is compared against. Returns the new latent
/// points, the updated shape latent, and a trace record.
#[allow(clippy::too_many_arguments)]
pub fn guided_step(
    h_t: &LatentPoints,
    z0: &ShapeLatent,
    h0: &LatentPoints,
    t: usize,
    t_prev: usize,
    cfg: &AdaptationConfig,
    denoiser: &DenoiserModel,
    sched: &NoiseSchedule,
) -> Result<GuidedStep> {
    if t_prev >= t {
        return Err(arg_err!("guided step needs t_prev < t, got {t_prev} >= {t}"));
    }
    let want_z = cfg.gamma > 0.0;
    let want_h_net = cfg.full_h_backprop && cfg.eta > 0.0;
    let (eps, rec) = denoiser.eps_h_with(h_t, z0, t, want_h_net, want_z)?;
    let h_bar = estimate_x0(&h_t.values, &eps.values, t, sched)?;
    let (l_cd, g_bar) = scd_and_grad(&h0.values, &h_bar, cfg)?;

    let ab = sched.alpha_bar(t);
    // d h̄0 / d h_t = 1/sqrt(ab) directly, and d h̄0 / d eps = -sqrt(1-ab)/sqrt(ab)
    let through_eps = g_bar.scale(-(1.0 - ab).sqrt() / ab.sqrt());
    let mut grad_h = g_bar.scale(1.0 / ab.sqrt());
    let mut grad_z = Tensor::zeros(z0.z.shape());
    if let Some(rec) = rec {
        let mut grads = rec.tape.backward(rec.eps, &through_eps)?;
        if want_z {
            if let Some(g) = grads.take(rec.z0) {
                grad_z = g;
            }
        }
        if want_h_net {
            if let Some(g) = grads.take(rec.h_t) {
                grad_h = grad_h.add(&g)?;
            }
        }
    }
    if !grad_h.is_finite() || !grad_z.is_finite() {
        return Err(num_err!("non-finite guidance gradient at t = {t}"));
    }

    let ab_prev = sched.alpha_bar(t_prev);
    let correction = grad_h.scale(cfg.eta);
    let h_prev = h_bar
        .scale(ab_prev.sqrt())
        .axpy((1.0 - ab_prev).sqrt(), &eps.values)?
        .sub(&correction)?;
    let z_new = z0.z.axpy(-cfg.gamma, &grad_z)?;
    Ok(GuidedStep {
        h_prev: LatentPoints::new(h_prev)?,
        z0: ShapeLatent::new(z_new)?,
        record: TraceRecord {
            t,
            t_prev,
            l_cd,
            grad_z_norm: grad_z.norm(),
            guidance_norm: correction.norm(),
            snapshot: None,
        },
    })
}

/// Adapts one normalised cloud. `t_w = 0` reduces to a posterior-mean VAE
/// round trip.
pub fn adapt_cloud(
    x_tilde: &PointCloud,
    cfg: &AdaptationConfig,
    models: AdaptModels<'_>,
    sched: &NoiseSchedule,
) -> Result<(PointCloud, AdaptationTrace)> {
    cfg.validate()?;
    check_schedule(cfg, models, sched)?;
    if x_tilde.len() < 8 {
        return Err(arg_err!("adaptation needs at least 8 points, got {}", x_tilde.len()));
    }
    let (mut z0, h0) = models.vae.encode(x_tilde)?;
    let mut h = perturb_latent(&h0, cfg.t_w, sched, cfg.seed)?;
    let mut trace = AdaptationTrace::default();
    for k in (1..=cfg.t_w).rev() {
        let t = sched.timestep_of_index(k)?;
        let t_prev = sched.timestep_of_index(k - 1)?;
        let step = guided_step(&h, &z0, &h0, t, t_prev, cfg, models.denoiser, sched).map_err(|e| match e {
            Error::Numeric(m) => num_err!("iteration {}: {m}", cfg.t_w - k),
            e => e,
        })?;
        let mut record = step.record;
        if cfg.snapshots {
            record.snapshot = Some(step.h_prev.values.data().to_vec());
        }
        trace.records.push(record);
        h = step.h_prev;
        z0 = step.z0;
    }
    Ok((models.vae.decode(&z0, &h)?, trace))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: String,
    pub cloud: PointCloud,
    pub label: Option<usize>,
    /// Clean counterpart, when known, for Chamfer scoring.
    pub reference: Option<PointCloud>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItemResult {
    pub id: String,
    #[serde(skip)]
    pub adapted: Option<PointCloud>,
    pub trace: Option<AdaptationTrace>,
    pub predicted: Option<usize>,
    pub label: Option<usize>,
    pub chamfer: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub count: usize,
    pub failures: usize,
    /// Percentage over labelled items that adapted successfully.
    pub accuracy: Option<f64>,
    pub mean_chamfer: Option<f64>,
}

/// Seed used for the item with identifier `id`.
pub fn item_seed(seed: u64, id: &str) -> u64 {
    seed ^ hash_str(id)
}

/// Adapts every item independently (in parallel), each normalised first and
/// seeded from its identifier so results do not depend on batch order.
/// Failures are recorded per item.
pub fn adapt_batch(
    items: &[BatchItem],
    cfg: &AdaptationConfig,
    models: AdaptModels<'_>,
    sched: &NoiseSchedule,
    classifier: Option<&ClassifierModel>,
) -> Result<(Vec<ItemResult>, BatchSummary)> {
    if items.is_empty() {
        return Err(arg_err!("batch is empty"));
    }
    cfg.validate()?;
    check_schedule(cfg, models, sched)?;
    let results: Vec<ItemResult> = items
        .par_iter()
        .map(|item| {
            let mut c = cfg.clone();
            c.seed = item_seed(cfg.seed, &item.id);
            let run = || -> Result<(PointCloud, AdaptationTrace, Option<usize>, Option<f64>)> {
                let (out, trace) = adapt_cloud(&item.cloud.normalize(), &c, models, sched)?;
                let predicted = match classifier {
                    Some(clf) => Some(clf.classify(&out.normalize())?.0),
                    None => None,
                };
                let chamfer = match &item.reference {
                    Some(r) => Some(chamfer_clouds(&out, r)?),
                    None => None,
                };
                Ok((out, trace, predicted, chamfer))
            };
            match run() {
                Ok((out, trace, predicted, chamfer)) => ItemResult {
                    id: item.id.clone(),
                    adapted: Some(out),
                    trace: Some(trace),
                    predicted,
                    label: item.label,
                    chamfer,
                    error: None,
                },
                Err(e) => ItemResult {
                    id: item.id.clone(),
                    adapted: None,
                    trace: None,
                    predicted: None,
                    label: item.label,
                    chamfer: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let summary = summarize(&results);
    Ok((results, summary))
}

fn summarize(results: &[ItemResult]) -> BatchSummary {
    let scored: Vec<bool> = results
        .iter()
        .filter_map(|r| Some(r.predicted? == r.label?))
        .collect();
    let chamfers: Vec<f64> = results.iter().filter_map(|r| r.chamfer).collect();
    BatchSummary {
        count: results.len(),
        failures: results.iter().filter(|r| r.error.is_some()).count(),
        accuracy: (!scored.is_empty())
            .then(|| 100.0 * scored.iter().filter(|&&h| h).count() as f64 / scored.len() as f64),
        mean_chamfer: (!chamfers.is_empty()).then(|| chamfers.iter().sum::<f64>() / chamfers.len() as f64),
    }
}
