//! Experiment harness: accuracy tables over corruptions, the corruption
//! independence analysis, parameter sweeps and step-count timing.
//!
//! Every loop fans out over (corruption, cloud) pairs and collects in input
//! order; sums use a fixed pairwise reduction so reports do not depend on
//! the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_cloud, perturb_latent, AdaptationConfig};
use crate::corpus::LabeledCloud;
use crate::corruptions::{apply_corruption, CorruptionKind, CorruptionSpec};
use crate::error::{arg_err, Error, Result};
use crate::geometry::{chamfer, chamfer_clouds, LatentPoints, PointCloud};
use crate::models::VaeModel;
use crate::recipe::TrainedModels;
use crate::schedule::NoiseSchedule;
use crate::seeding::{derive_seed, hash_str};
use crate::svg::{render, Panel, Series};

/// Sum with a fixed balanced reduction tree.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(v) / v.len() as f64
}

fn percent(hits: &[bool]) -> f64 {
    100.0 * hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// An input shift applied before classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalCorruption {
    Identity,
    Kind(CorruptionKind),
}

impl EvalCorruption {
    pub fn name(self) -> &'static str {
        match self {
            EvalCorruption::Identity => "none",
            EvalCorruption::Kind(k) => k.name(),
        }
    }

    /// The fifteen corruption kinds in report order.
    pub fn all() -> Vec<EvalCorruption> {
        CorruptionKind::ALL.iter().map(|&k| EvalCorruption::Kind(k)).collect()
    }

    pub fn apply(self, cloud: &PointCloud, severity: u8, seed: u64) -> Result<PointCloud> {
        match self {
            EvalCorruption::Identity => Ok(cloud.clone()),
            EvalCorruption::Kind(k) => apply_corruption(CorruptionSpec::new(k, severity, seed)?, cloud),
        }
    }
}

impl FromStr for EvalCorruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            Ok(EvalCorruption::Identity)
        } else {
            Ok(EvalCorruption::Kind(s.parse()?))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub corruption: String,
    pub clean: f64,
    pub corrupted: f64,
    pub adapted: f64,
    /// Mean Chamfer distance from the normalised corrupted input to the clean
    /// cloud.
    pub chamfer_corrupted: f64,
    /// Mean Chamfer distance from the adapted output to the clean cloud.
    pub chamfer_adapted: f64,
}

impl EvalRow {
    pub fn gain(&self) -> f64 {
        self.adapted - self.corrupted
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub severity: u8,
    pub seed: u64,
    pub clouds: usize,
    pub adapt: AdaptationConfig,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointDigest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
    pub meta: EvalMeta,
}

pub const REPORT_HEADER: &str = "corruption,clean,corrupted,adapted,chamfer_corrupted,chamfer_adapted";

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>, meta: EvalMeta) -> Self {
        let col = |f: fn(&EvalRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        let mean = EvalRow {
            corruption: "mean".into(),
            clean: col(|r| r.clean),
            corrupted: col(|r| r.corrupted),
            adapted: col(|r| r.adapted),
            chamfer_corrupted: col(|r| r.chamfer_corrupted),
            chamfer_adapted: col(|r| r.chamfer_adapted),
        };
        EvalReport { rows, mean, meta }
    }

    pub fn row(&self, corruption: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.corruption == corruption)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in self.rows.iter().chain([&self.mean]) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.corruption, r.clean, r.corrupted, r.adapted, r.chamfer_corrupted, r.chamfer_adapted
            );
        }
        out
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("report.csv"), &self.to_csv())?;
        write_file(&dir.join("report.json"), &serde_json::to_string_pretty(self)?)
    }
}

fn item_seed(seed: u64, name: &str, i: usize) -> u64 {
    derive_seed(seed, &[hash_str(name), i as u64])
}

struct ItemOutcome {
    corrupted_hit: bool,
    adapted_hit: bool,
    chamfer_corrupted: f64,
    chamfer_adapted: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_item(
    c: &LabeledCloud,
    i: usize,
    corruption: EvalCorruption,
    severity: u8,
    cfg: &AdaptationConfig,
    models: &TrainedModels,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<ItemOutcome> {
    let name = corruption.name();
    let x = corruption.apply(&c.cloud, severity, item_seed(seed, name, i))?.normalize();
    let corrupted_hit = models.classifier.classify(&x)?.0 == c.label;
    let run_cfg = AdaptationConfig {
        seed: item_seed(cfg.seed, name, i),
        ..cfg.clone()
    };
    let (y, _) = adapt_cloud(&x, &run_cfg, models.adapt_models(), sched)?;
    let adapted_hit = models.classifier.classify(&y.normalize())?.0 == c.label;
    Ok(ItemOutcome {
        corrupted_hit,
        adapted_hit,
        chamfer_corrupted: chamfer_clouds(&x, &c.cloud)?,
        chamfer_adapted: chamfer_clouds(&y, &c.cloud)?,
    })
}

fn run_grid(
    corpus: &[LabeledCloud],
    corruptions: &[EvalCorruption],
    severity: u8,
    cfg: &AdaptationConfig,
    models: &TrainedModels,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Vec<ItemOutcome>>> {
    let pairs: Vec<(usize, usize)> = (0..corruptions.len())
        .flat_map(|k| (0..corpus.len()).map(move |i| (k, i)))
        .collect();
    let flat: Vec<ItemOutcome> = pairs
        .par_iter()
        .map(|&(k, i)| run_item(&corpus[i], i, corruptions[k], severity, cfg, models, sched, seed))
        .collect::<Result<_>>()?;
    let mut it = flat.into_iter();
    Ok(corruptions
        .iter()
        .map(|_| it.by_ref().take(corpus.len()).collect())
        .collect())
}

/// Clean, corrupted and adapted accuracy (percent) for every corruption.
/// Inputs are normalised after corruption; the adapted output is
/// normalised again before classification.
pub fn eval_accuracy(
    corpus: &[LabeledCloud],
    corruptions: &[EvalCorruption],
    severity: u8,
    cfg: &AdaptationConfig,
    models: &TrainedModels,
    seed: u64,
) -> Result<EvalReport> {
    if corpus.is_empty() || corruptions.is_empty() {
        return Err(arg_err!("evaluation needs clouds and corruptions"));
    }
    let sched = &models.schedule;
    let clean_hits: Vec<bool> = corpus
        .par_iter()
        .map(|c| Ok(models.classifier.classify(&c.cloud.normalize())?.0 == c.label))
        .collect::<Result<_>>()?;
    let clean = percent(&clean_hits);
    let grid = run_grid(corpus, corruptions, severity, cfg, models, sched, seed)?;
    let rows = corruptions
        .iter()
        .zip(grid)
        .map(|(c, items)| EvalRow {
            corruption: c.name().to_string(),
            clean,
            corrupted: percent(&items.iter().map(|o| o.corrupted_hit).collect::<Vec<_>>()),
            adapted: percent(&items.iter().map(|o| o.adapted_hit).collect::<Vec<_>>()),
            chamfer_corrupted: mean(&items.iter().map(|o| o.chamfer_corrupted).collect::<Vec<_>>()),
            chamfer_adapted: mean(&items.iter().map(|o| o.chamfer_adapted).collect::<Vec<_>>()),
        })
        .collect();
    Ok(EvalReport::new(
        rows,
        EvalMeta {
            severity,
            seed,
            clouds: corpus.len(),
            adapt: cfg.clone(),
            checkpoints: Vec::new(),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BeforePerturb,
    AfterPerturb,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceSpace {
    /// xyz channels of the latent points.
    #[default]
    Latent,
    /// Decoded clouds.
    Decoded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdDistribution {
    pub kind: String,
    pub stage: Stage,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub a: String,
    pub b: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub t_w: usize,
    pub severity: u8,
    pub space: DistanceSpace,
    pub distributions: Vec<CdDistribution>,
    pub pairs: Vec<PairDistance>,
}

/// Exact 1-Wasserstein distance between two empirical distributions:
/// the integral of the absolute difference of their CDFs.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(arg_err!("Wasserstein distance of an empty sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut parts = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        parts.push((i as f64 / na - j as f64 / nb).abs() * (next - prev));
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        prev = next;
    }
    Ok(pairwise_sum(&parts))
}

/// Counts over `bins` equal-width bins spanning `[lo, hi]`.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins.max(1)];
    let width = (hi - lo) / bins.max(1) as f64;
    for &s in samples {
        let k = if width > 0.0 { ((s - lo) / width).floor() as isize } else { 0 };
        counts[k.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

pub const HISTOGRAM_BINS: usize = 64;

fn encoded(vae: &VaeModel, x: &PointCloud) -> Result<(crate::models::ShapeLatent, LatentPoints)> {
    vae.encode(&x.normalize())
}

/// Chamfer distances between clean and corrupted clouds before and after
/// latent perturbation at DDIM index `t_w`, and pairwise 1-Wasserstein
/// distances between the per-kind distributions at each stage.
///
/// Both stages compare the clean and corrupted encodings in the same space;
/// after perturbation each side gets its own noise, shared across kinds so
/// that differences between kinds come from the corruptions alone.
#[allow(clippy::too_many_arguments)]
pub fn cd_independence(
    clouds: &[PointCloud],
    kinds: &[CorruptionKind],
    severity: u8,
    t_w: usize,
    vae: &VaeModel,
    sched: &NoiseSchedule,
    seed: u64,
    space: DistanceSpace,
) -> Result<IndependenceReport> {
    if clouds.len() < 100 {
        return Err(arg_err!("need at least 100 clouds, got {}", clouds.len()));
    }
    if kinds.len() < 2 {
        return Err(arg_err!("need at least two corruption kinds"));
    }
    sched.timestep_of_index(t_w)?;
    let clean: Vec<(crate::models::ShapeLatent, LatentPoints, LatentPoints)> = clouds
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let (z, h) = encoded(vae, x)?;
            let p = perturb_latent(&h, t_w, sched, derive_seed(seed, &[0xc1ea, i as u64]))?;
            Ok((z, h, p))
        })
        .collect::<Result<_>>()?;
    let distance = |za: &crate::models::ShapeLatent,
                    ha: &LatentPoints,
                    zb: &crate::models::ShapeLatent,
                    hb: &LatentPoints|
     -> Result<f64> {
        match space {
            DistanceSpace::Latent => chamfer(&ha.xyz(), &hb.xyz()),
            DistanceSpace::Decoded => chamfer_clouds(&vae.decode(za, ha)?, &vae.decode(zb, hb)?),
        }
    };
    let pairs: Vec<(usize, usize)> = (0..kinds.len())
        .flat_map(|k| (0..clouds.len()).map(move |i| (k, i)))
        .collect();
    let flat: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(k, i)| {
            let kind = kinds[k];
            let spec = CorruptionSpec::new(kind, severity, item_seed(seed, kind.name(), i))?;
            let x = apply_corruption(spec, &clouds[i])?;
            let (z, h) = encoded(vae, &x)?;
            let p = perturb_latent(&h, t_w, sched, derive_seed(seed, &[0xc0bb, i as u64]))?;
            let (cz, ch, cp) = &clean[i];
            Ok((distance(cz, ch, &z, &h)?, distance(cz, cp, &z, &p)?))
        })
        .collect::<Result<_>>()?;
    let mut distributions = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        let chunk = &flat[k * clouds.len()..(k + 1) * clouds.len()];
        distributions.push(CdDistribution {
            kind: kind.name().into(),
            stage: Stage::BeforePerturb,
            samples: chunk.iter().map(|p| p.0).collect(),
        });
        distributions.push(CdDistribution {
            kind: kind.name().into(),
            stage: Stage::AfterPerturb,
            samples: chunk.iter().map(|p| p.1).collect(),
        });
    }
    let mut out_pairs = Vec::new();
    for a in 0..kinds.len() {
        for b in a + 1..kinds.len() {
            out_pairs.push(PairDistance {
                a: kinds[a].name().into(),
                b: kinds[b].name().into(),
                before: wasserstein_1d(&distributions[2 * a].samples, &distributions[2 * b].samples)?,
                after: wasserstein_1d(&distributions[2 * a + 1].samples, &distributions[2 * b + 1].samples)?,
            });
        }
    }
    Ok(IndependenceReport {
        t_w,
        severity,
        space,
        distributions,
        pairs: out_pairs,
    })
}

impl IndependenceReport {
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &CdDistribution> {
        self.distributions.iter().filter(move |d| d.stage == stage)
    }

    /// Histograms (64 bins over the pooled range of each stage) drawn as
    /// polylines, one panel per stage.
    pub fn to_svg(&self) -> String {
        let panels: Vec<Panel> = [(Stage::BeforePerturb, "before perturbation"), (Stage::AfterPerturb, "after perturbation")]
            .into_iter()
            .map(|(stage, title)| {
                let pooled: Vec<f64> = self.stage(stage).flat_map(|d| d.samples.iter().copied()).collect();
                let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let width = (hi - lo) / HISTOGRAM_BINS as f64;
                Panel {
                    title: title.into(),
                    x_label: "Chamfer distance".into(),
                    y_label: "count".into(),
                    series: self
                        .stage(stage)
                        .map(|d| Series {
                            label: d.kind.clone(),
                            points: histogram(&d.samples, HISTOGRAM_BINS, lo, hi)
                                .into_iter()
                                .enumerate()
                                .map(|(k, c)| (lo + (k as f64 + 0.5) * width, c as f64))
                                .collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        render(&panels)
    }

    /// Writes `fig2_overlap.svg` and `overlap.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("fig2_overlap.svg"), &self.to_svg())?;
        write_file(&dir.join("overlap.json"), &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "t_w")]
    Depth,
    #[serde(rename = "S")]
    Steps,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "eta")]
    Eta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Depth => "t_w",
            SweepParam::Steps => "S",
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
            SweepParam::Eta => "eta",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::Depth, SweepParam::Steps, SweepParam::Lambda, SweepParam::Gamma, SweepParam::Eta]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| arg_err!("cannot sweep {s:?}; expected one of t_w, S, lambda, gamma, eta"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub corruption: String,
    pub accuracy: f64,
    pub mean_chamfer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub param: SweepParam,
    pub base: AdaptationConfig,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "param,value,corruption,accuracy,mean_chamfer";

fn as_count(param: SweepParam, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(arg_err!("{} takes whole numbers, got {v}", param.name()));
    }
    Ok(v as usize)
}

/// The configuration (and DDIM step count) for one swept value. Sweeping
/// `S` scales `t_w` proportionally so the starting noise level is kept.
pub fn swept_config(param: SweepParam, value: f64, base: &AdaptationConfig) -> Result<AdaptationConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Depth => cfg.t_w = as_count(param, value)?,
        SweepParam::Steps => {
            let s = as_count(param, value)?;
            cfg.t_w = ((base.t_w * s) as f64 / base.steps as f64).round().max(1.0) as usize;
            cfg.steps = s;
        }
        SweepParam::Lambda => cfg.lambda = value,
        SweepParam::Gamma => cfg.gamma = value,
        SweepParam::Eta => cfg.eta = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Adapted accuracy and mean Chamfer distance to the clean cloud for every
/// (value, corruption) pair.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    param: SweepParam,
    values: &[f64],
    base: &AdaptationConfig,
    corpus: &[LabeledCloud],
    corruptions: &[EvalCorruption],
    severity: u8,
    models: &TrainedModels,
    seed: u64,
) -> Result<Ablation> {
    if values.is_empty() {
        return Err(arg_err!("empty sweep"));
    }
    if corpus.is_empty() || corruptions.is_empty() {
        return Err(arg_err!("sweep needs clouds and corruptions"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let cfg = swept_config(param, v, base)?;
        let sched = if cfg.steps == models.schedule.ddim_steps().len() {
            models.schedule.clone()
        } else {
            crate::schedule::ScheduleSpec {
                ddim_steps: cfg.steps,
                ..models.schedule.spec()
            }
            .build()?
        };
        let grid = run_grid(corpus, corruptions, severity, &cfg, models, &sched, seed)?;
        for (c, items) in corruptions.iter().zip(grid) {
            rows.push(AblationRow {
                value: v,
                corruption: c.name().into(),
                accuracy: percent(&items.iter().map(|o| o.adapted_hit).collect::<Vec<_>>()),
                mean_chamfer: mean(&items.iter().map(|o| o.chamfer_adapted).collect::<Vec<_>>()),
            });
        }
    }
    Ok(Ablation {
        param,
        base: base.clone(),
        rows,
    })
}

impl Ablation {
    pub fn corruptions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.corruption) {
                out.push(r.corruption.clone());
            }
        }
        out
    }

    /// The swept value with the highest accuracy for `corruption` (first in
    /// sweep order on ties).
    pub fn best_value(&self, corruption: &str) -> Option<f64> {
        let mut best: Option<&AblationRow> = None;
        for r in self.rows.iter().filter(|r| r.corruption == corruption) {
            if best.is_none_or(|b| r.accuracy > b.accuracy) {
                best = Some(r);
            }
        }
        best.map(|r| r.value)
    }

    /// Mean accuracy over corruptions at one swept value.
    pub fn mean_accuracy(&self, value: f64) -> Option<f64> {
        let acc: Vec<f64> = self.rows.iter().filter(|r| r.value == value).map(|r| r.accuracy).collect();
        (!acc.is_empty()).then(|| mean(&acc))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.param.name(),
                r.value,
                r.corruption,
                r.accuracy,
                r.mean_chamfer
            );
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let series = self
            .corruptions()
            .into_iter()
            .map(|c| Series {
                points: self
                    .rows
                    .iter()
                    .filter(|r| r.corruption == c)
                    .map(|r| (r.value, r.accuracy))
                    .collect(),
                label: c,
            })
            .collect();
        render(&[Panel {
            title: format!("accuracy vs {}", self.param.name()),
            x_label: self.param.name().into(),
            y_label: "accuracy (%)".into(),
            series,
        }])
    }

    /// Writes `ablation_<param>.csv` and `ablation_<param>.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let stem = format!("ablation_{}", self.param.name());
        write_file(&dir.join(format!("{stem}.csv")), &self.to_csv())?;
        write_file(&dir.join(format!("{stem}.svg")), &self.to_svg())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub steps: usize,
    pub millis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(arg_err!("linear fit needs at least two paired points"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx = pairwise_sum(&x.iter().map(|a| (a - mx) * (a - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(&x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<Vec<_>>());
    let syy = pairwise_sum(&y.iter().map(|b| (b - my) * (b - my)).collect::<Vec<_>>());
    if sxx == 0.0 {
        return Err(arg_err!("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// Median adaptation latency over `repeats` runs for each denoising step
/// count (used as `t_w`), after one warm-up run of each.
pub fn bench_timing(
    steps: &[usize],
    cloud: &PointCloud,
    cfg: &AdaptationConfig,
    models: &TrainedModels,
    repeats: usize,
) -> Result<TimingReport> {
    if steps.is_empty() || repeats == 0 {
        return Err(arg_err!("timing needs step counts and at least one repeat"));
    }
    let x = cloud.normalize();
    let m = models.adapt_models();
    let cfgs: Vec<AdaptationConfig> = steps.iter().map(|&s| AdaptationConfig { t_w: s, ..cfg.clone() }).collect();
    for c in &cfgs {
        adapt_cloud(&x, c, m, &models.schedule)?;
    }
    // Rounds visit every step count once, so slow drift in machine speed
    // lands on all of them alike.
    let mut times = vec![Vec::with_capacity(repeats); steps.len()];
    for _ in 0..repeats {
        for (c, t) in cfgs.iter().zip(&mut times) {
            let start = Instant::now();
            adapt_cloud(&x, c, m, &models.schedule)?;
            t.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    let rows: Vec<TimingRow> = steps
        .iter()
        .zip(&mut times)
        .map(|(&s, t)| {
            t.sort_by(f64::total_cmp);
            let millis = if repeats % 2 == 1 {
                t[repeats / 2]
            } else {
                0.5 * (t[repeats / 2 - 1] + t[repeats / 2])
            };
            TimingRow { steps: s, millis }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.millis).collect();
    let (slope, intercept, r_squared) = if rows.len() >= 2 {
        linear_fit(&xs, &ys)?
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(TimingReport {
        rows,
        slope,
        intercept,
        r_squared,
    })
}
