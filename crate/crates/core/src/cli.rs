//! The `driftback` command line: one subcommand per pipeline stage, each
//! writing its outputs plus a run manifest into an output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_batch, AdaptationConfig, BatchItem};
use crate::corpus::{generate_corpus, load_corpus, save_corpus, CorpusIndex, CorpusSpec, LabeledCloud, INDEX_FILE};
use crate::corruptions::{apply_corruption, CorruptionKind, CorruptionSpec};
use crate::error::{Error, Result};
use crate::eval::{ablate, bench_timing, cd_independence, eval_accuracy, CheckpointDigest, DistanceSpace, EvalCorruption, SweepParam};
use crate::geometry::{load_cloud, save_cloud, PointCloud};
use crate::models::{
    digest_file, load_checkpoint, save_checkpoint, ClassifierModel, DenoiserArch, DenoiserModel, VaeArch, VaeModel,
};
use crate::recipe::{ToyRecipe, TrainedModels, CLASSIFIER_FILE, DENOISER_FILE, VAE_FILE};
use crate::schedule::ScheduleSpec;
use crate::seeding::derive_seed;
use crate::training::{train_classifier, train_diffusion, train_vae, TrainConfig};

pub const THREADS_ENV: &str = "DRIFTBACK_THREADS";

#[derive(Parser, Debug)]
#[command(name = "driftback", version, about = "Test-time adaptation of corrupted point clouds by latent diffusion")]
pub struct Cli {
    /// Worker threads (falls back to DRIFTBACK_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic shape corpus.
    Gen(GenArgs),
    /// Write corrupted copies of a corpus as <kind>/<severity>/<id>.dpc.
    Corrupt(CorruptArgs),
    /// Train the point-cloud VAE.
    TrainVae(TrainArgs),
    /// Train the latent noise predictors on a trained VAE.
    TrainDiffusion(TrainDiffusionArgs),
    /// Train the point classifier.
    TrainClassifier(TrainArgs),
    /// Adapt every cloud of a directory.
    Adapt(AdaptArgs),
    /// Accuracy table over corruptions.
    Eval(EvalArgs),
    /// Chamfer-distance distributions before and after latent perturbation.
    Analyze(AnalyzeArgs),
    /// Sweep one adaptation parameter.
    Ablate(AblateArgs),
    /// Adaptation latency against denoising steps.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 8)]
    pub families: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated kinds, or `all`.
    #[arg(long, default_value = "all")]
    pub kinds: String,
    /// Comma-separated severities in 1..=5.
    #[arg(long, default_value = "3")]
    pub severities: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration JSON; defaults to the built-in recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Architecture JSON; defaults to the built-in recipe.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainDiffusionArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// VAE checkpoint; defaults to `<out>/vae.dbt`.
    #[arg(long)]
    pub vae: Option<PathBuf>,
    /// Schedule JSON (`T`, `beta_start`, `beta_end`, `S`).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Adaptation configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Corpus directory, or a directory of .dpc / .xyz clouds.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-cloud trace JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value = "ckpt")]
    pub ckpt: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Held-out corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ckpt")]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Adaptation configuration JSON; defaults to the standard settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub kinds: String,
    #[arg(long, default_value_t = 3)]
    pub severity: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ckpt")]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "uni,gauss,rbf")]
    pub kinds: String,
    #[arg(long, default_value_t = 5)]
    pub t_w: usize,
    #[arg(long, default_value_t = 3)]
    pub severity: u8,
    #[arg(long, value_enum, default_value_t = SpaceArg::Latent)]
    pub space: SpaceArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SpaceArg {
    Latent,
    Decoded,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// One of t_w, S, lambda, gamma, eta.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long)]
    pub values: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ckpt")]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "uni,back")]
    pub kinds: String,
    #[arg(long, default_value_t = 3)]
    pub severity: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "ckpt")]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Cloud to adapt; defaults to a generated 1024-point sphere.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long, default_value = "1,5,10,20,30,40")]
    pub steps: String,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Everything needed to re-run a command, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoints: Vec<CheckpointDigest>,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            command: command.into(),
            args: args.to_vec(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    /// Writes `<dir>/<command>.manifest.json` through a temporary file and a
    /// rename.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::file_name(&self.command));
        let tmp = dir.join(format!(".{}.tmp", Self::file_name(&self.command)));
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn digest(&mut self, path: &Path) -> Result<()> {
        self.checkpoints.push(CheckpointDigest {
            path: path.display().to_string(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("missing file {}", path.display())),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| crate::error::arg_err!("bad {what} {t:?}")))
        .collect()
}

fn parse_kinds(s: &str) -> Result<Vec<CorruptionKind>> {
    if s == "all" {
        return Ok(CorruptionKind::ALL.to_vec());
    }
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn parse_eval_kinds(s: &str) -> Result<Vec<EvalCorruption>> {
    if s == "all" {
        return Ok(EvalCorruption::all());
    }
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn load_models(dir: &Path, steps: usize, manifest: &mut RunManifest, classifier: bool) -> Result<TrainedModels> {
    let vp = dir.join(VAE_FILE);
    let dp = dir.join(DENOISER_FILE);
    let cp = dir.join(CLASSIFIER_FILE);
    let (vae, _) = load_checkpoint::<VaeModel>(&vp)?;
    let (denoiser, _) = load_checkpoint::<DenoiserModel>(&dp)?;
    manifest.digest(&vp)?;
    manifest.digest(&dp)?;
    let classifier = if classifier {
        let (c, _) = load_checkpoint::<ClassifierModel>(&cp)?;
        manifest.digest(&cp)?;
        c
    } else {
        match load_checkpoint::<ClassifierModel>(&cp) {
            Ok((c, _)) => {
                manifest.digest(&cp)?;
                c
            }
            Err(_) => ClassifierModel::new(crate::models::ClassifierArch::with_classes(2), &mut crate::seeding::rng(0)),
        }
    };
    let schedule = ScheduleSpec {
        ddim_steps: steps,
        ..denoiser.arch.schedule
    }
    .build()?;
    Ok(TrainedModels {
        vae,
        denoiser,
        classifier,
        schedule,
    })
}

fn adapt_config(path: Option<&Path>) -> Result<AdaptationConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => AdaptationConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a corpus directory, or any `.dpc` / `.xyz` files in it (sorted by
/// name, unlabelled) when there is no index.
fn read_inputs(dir: &Path) -> Result<Vec<(String, Option<usize>, PointCloud)>> {
    if dir.join(INDEX_FILE).exists() {
        let (_, items) = load_corpus(dir)?;
        return Ok(items.into_iter().map(|c| (c.id, Some(c.label), c.cloud)).collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("dpc" | "xyz")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no clouds found in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string();
            Ok((id, None, load_cloud(&p)?))
        })
        .collect()
}

fn train_config(args: &TrainArgs, default: &TrainConfig) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json(p)?,
        None => default.clone(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_command(cmd: &Command, argv: &[String]) -> Result<()> {
    let recipe = ToyRecipe::default();
    match cmd {
        Command::Gen(a) => {
            let mut m = RunManifest::new("gen", argv);
            let spec = CorpusSpec {
                families: a.families,
                per_class: a.per_class,
                points: a.n,
                seed: a.seed,
            };
            let items = generate_corpus(&spec)?;
            save_corpus(&items, a.families, &a.out)?;
            m.config = serde_json::to_value(spec)?;
            m.seeds.insert("corpus".into(), a.seed);
            m.output(&a.out.join(INDEX_FILE));
            m.write(&a.out)?;
            println!("wrote {} clouds to {}", items.len(), a.out.display());
        }
        Command::Corrupt(a) => {
            let mut m = RunManifest::new("corrupt", argv);
            let (index, items) = load_corpus(&a.input)?;
            let kinds = parse_kinds(&a.kinds)?;
            let severities: Vec<u8> = parse_list(&a.severities, "severity")?;
            let mut count = 0;
            for &kind in &kinds {
                for &sev in &severities {
                    let dir = a.out.join(kind.name()).join(sev.to_string());
                    for (i, c) in items.iter().enumerate() {
                        let seed = derive_seed(a.seed, &[crate::seeding::hash_str(kind.name()), sev as u64, i as u64]);
                        let x = apply_corruption(CorruptionSpec::new(kind, sev, seed)?, &c.cloud)?;
                        save_cloud(&x, &dir.join(format!("{}.dpc", c.id)))?;
                        count += 1;
                    }
                    index.save(&dir)?;
                    m.output(&dir);
                }
            }
            m.config = serde_json::json!({ "kinds": kinds, "severities": severities });
            m.seeds.insert("corruption".into(), a.seed);
            m.write(&a.out)?;
            println!("wrote {count} corrupted clouds to {}", a.out.display());
        }
        Command::TrainVae(a) => {
            let mut m = RunManifest::new("train-vae", argv);
            let cfg = train_config(a, &recipe.vae_training)?;
            let arch: VaeArch = match &a.arch {
                Some(p) => read_json(p)?,
                None => recipe.vae,
            };
            let (_, items) = load_corpus(&a.data)?;
            let clouds: Vec<PointCloud> = items.into_iter().map(|c| c.cloud).collect();
            let (vae, log) = train_vae(&clouds, arch, &cfg)?;
            let path = a.out.join(VAE_FILE);
            save_checkpoint(&vae, &path, cfg.seed, serde_json::to_value(&cfg)?)?;
            write_json(&a.out.join("vae_log.json"), &log)?;
            m.config = serde_json::json!({ "train": cfg, "arch": arch });
            m.seeds.insert("train".into(), cfg.seed);
            m.digest(&path)?;
            m.output(&path);
            m.write(&a.out)?;
        }
        Command::TrainDiffusion(a) => {
            let mut m = RunManifest::new("train-diffusion", argv);
            let cfg = train_config(&a.train, &recipe.diffusion_training)?;
            let arch: DenoiserArch = match &a.train.arch {
                Some(p) => read_json(p)?,
                None => recipe.denoiser,
            };
            let spec: ScheduleSpec = match &a.schedule {
                Some(p) => read_json(p)?,
                None => recipe.schedule,
            };
            let sched = spec.build()?;
            let vp = a.vae.clone().unwrap_or_else(|| a.train.out.join(VAE_FILE));
            let (vae, _) = load_checkpoint::<VaeModel>(&vp)?;
            m.digest(&vp)?;
            let (_, items) = load_corpus(&a.train.data)?;
            let clouds: Vec<PointCloud> = items.into_iter().map(|c| c.cloud).collect();
            let (den, log) = train_diffusion(&vae, &clouds, arch, &sched, &cfg)?;
            let path = a.train.out.join(DENOISER_FILE);
            save_checkpoint(&den, &path, cfg.seed, serde_json::to_value(&cfg)?)?;
            write_json(&a.train.out.join("denoiser_log.json"), &log)?;
            m.config = serde_json::json!({ "train": cfg, "arch": den.arch, "schedule": spec });
            m.seeds.insert("train".into(), cfg.seed);
            m.digest(&path)?;
            m.output(&path);
            m.write(&a.train.out)?;
        }
        Command::TrainClassifier(a) => {
            let mut m = RunManifest::new("train-classifier", argv);
            let cfg = train_config(a, &recipe.classifier_training)?;
            let (index, items) = load_corpus(&a.data)?;
            let (clf, log) = train_classifier(&items, index.classes.len(), &cfg)?;
            let path = a.out.join(CLASSIFIER_FILE);
            save_checkpoint(&clf, &path, cfg.seed, serde_json::to_value(&cfg)?)?;
            write_json(&a.out.join("classifier_log.json"), &log)?;
            m.config = serde_json::json!({ "train": cfg, "classes": index.classes });
            m.seeds.insert("train".into(), cfg.seed);
            m.digest(&path)?;
            m.output(&path);
            m.write(&a.out)?;
        }
        Command::Adapt(a) => {
            let mut m = RunManifest::new("adapt", argv);
            let cfg = adapt_config(Some(&a.config))?;
            let models = load_models(&a.ckpt, cfg.steps, &mut m, false)?;
            let have_classifier = a.ckpt.join(CLASSIFIER_FILE).exists();
            let items: Vec<BatchItem> = read_inputs(&a.input)?
                .into_iter()
                .map(|(id, label, cloud)| BatchItem {
                    id,
                    cloud,
                    label,
                    reference: None,
                })
                .collect();
            let clf = have_classifier.then_some(&models.classifier);
            let (results, summary) = adapt_batch(&items, &cfg, models.adapt_models(), &models.schedule, clf)?;
            for r in &results {
                if let Some(y) = &r.adapted {
                    let p = a.out.join(format!("{}.dpc", r.id));
                    save_cloud(y, &p)?;
                }
                if let (Some(dir), Some(t)) = (&a.trace, &r.trace) {
                    write_json(&dir.join(format!("{}.json", r.id)), t)?;
                }
                if let Some(e) = &r.error {
                    eprintln!("{}: {e}", r.id);
                }
            }
            write_json(&a.out.join("results.json"), &results)?;
            write_json(&a.out.join("summary.json"), &summary)?;
            m.config = serde_json::to_value(&cfg)?;
            m.seeds.insert("adapt".into(), cfg.seed);
            m.output(&a.out);
            if let Some(t) = &a.trace {
                m.output(t);
            }
            m.write(&a.out)?;
            println!(
                "adapted {} of {} clouds{}",
                summary.count - summary.failures,
                summary.count,
                summary.accuracy.map(|v| format!(", accuracy {v:.2}%")).unwrap_or_default()
            );
        }
        Command::Eval(a) => {
            let mut m = RunManifest::new("eval", argv);
            let cfg = adapt_config(a.config.as_deref())?;
            let models = load_models(&a.ckpt, cfg.steps, &mut m, true)?;
            let (_, items) = load_corpus(&a.data)?;
            let kinds = parse_eval_kinds(&a.kinds)?;
            let mut report = eval_accuracy(&items, &kinds, a.severity, &cfg, &models, a.seed)?;
            report.meta.checkpoints = m
                .checkpoints
                .iter()
                .map(|c| CheckpointDigest {
                    path: Path::new(&c.path)
                        .file_name()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    sha256: c.sha256.clone(),
                })
                .collect();
            report.write(&a.out)?;
            m.config = serde_json::json!({ "adapt": cfg, "kinds": a.kinds, "severity": a.severity });
            m.seeds.insert("corruption".into(), a.seed);
            m.seeds.insert("adapt".into(), cfg.seed);
            m.output(&a.out.join("report.csv"));
            m.output(&a.out.join("report.json"));
            m.write(&a.out)?;
            print!("{}", report.to_csv());
        }
        Command::Analyze(a) => {
            let mut m = RunManifest::new("analyze", argv);
            let models = load_models(&a.ckpt, recipe.schedule.ddim_steps, &mut m, false)?;
            let (_, items) = load_corpus(&a.data)?;
            let clouds: Vec<PointCloud> = items.into_iter().map(|c| c.cloud).collect();
            let space = match a.space {
                SpaceArg::Latent => DistanceSpace::Latent,
                SpaceArg::Decoded => DistanceSpace::Decoded,
            };
            let kinds = parse_kinds(&a.kinds)?;
            let report = cd_independence(&clouds, &kinds, a.severity, a.t_w, &models.vae, &models.schedule, a.seed, space)?;
            report.write(&a.out)?;
            m.config = serde_json::json!({ "kinds": kinds, "t_w": a.t_w, "severity": a.severity, "space": space });
            m.seeds.insert("analysis".into(), a.seed);
            m.output(&a.out.join("fig2_overlap.svg"));
            m.output(&a.out.join("overlap.json"));
            m.write(&a.out)?;
            for p in &report.pairs {
                println!("{} vs {}: before {:.6} after {:.6}", p.a, p.b, p.before, p.after);
            }
        }
        Command::Ablate(a) => {
            let mut m = RunManifest::new("ablate", argv);
            let param: SweepParam = a.param.parse()?;
            let values: Vec<f64> = parse_list(&a.values, "value")?;
            let base = adapt_config(a.config.as_deref())?;
            let models = load_models(&a.ckpt, base.steps, &mut m, true)?;
            let (_, items) = load_corpus(&a.data)?;
            let kinds = parse_eval_kinds(&a.kinds)?;
            let ab = ablate(param, &values, &base, &items, &kinds, a.severity, &models, a.seed)?;
            ab.write(&a.out)?;
            m.config = serde_json::json!({ "param": param, "values": values, "base": base, "kinds": a.kinds });
            m.seeds.insert("corruption".into(), a.seed);
            m.seeds.insert("adapt".into(), base.seed);
            m.output(&a.out.join(format!("ablation_{}.csv", param.name())));
            m.output(&a.out.join(format!("ablation_{}.svg", param.name())));
            m.write(&a.out)?;
            print!("{}", ab.to_csv());
        }
        Command::Bench(a) => {
            let mut m = RunManifest::new("bench", argv);
            let cfg = adapt_config(a.config.as_deref())?;
            let steps: Vec<usize> = parse_list(&a.steps, "step count")?;
            let models = load_models(&a.ckpt, cfg.steps, &mut m, false)?;
            let cloud = match &a.cloud {
                Some(p) => load_cloud(p)?,
                None => {
                    let spec = CorpusSpec {
                        families: 2,
                        per_class: 1,
                        points: 1024,
                        seed: 0,
                    };
                    generate_corpus(&spec)?.remove(0).cloud
                }
            };
            let report = bench_timing(&steps, &cloud, &cfg, &models, a.repeats)?;
            write_json(&a.out.join("timing.json"), &report)?;
            m.config = serde_json::json!({ "adapt": cfg, "steps": steps, "repeats": a.repeats });
            m.output(&a.out.join("timing.json"));
            m.write(&a.out)?;
            for r in &report.rows {
                println!("{:>4} steps {:>10.3} ms", r.steps, r.millis);
            }
            println!("slope {:.4} ms/step, R^2 {:.4}", report.slope, report.r_squared);
        }
    }
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var(THREADS_ENV).ok()?.parse().ok()).filter(|&n| n > 0)
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit status: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads) {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run_command(&cli.command, &args)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Keeps only entries of `index` that exist as `.dpc` files under `dir`.
pub fn present_items(index: &CorpusIndex, dir: &Path) -> Vec<String> {
    index
        .items
        .iter()
        .filter(|e| crate::corpus::cloud_path(dir, &e.id).exists())
        .map(|e| e.id.clone())
        .collect()
}

/// Labelled clouds of a corrupted split written by `corrupt`.
pub fn load_corrupted(root: &Path, kind: CorruptionKind, severity: u8) -> Result<Vec<LabeledCloud>> {
    Ok(load_corpus(&root.join(kind.name()).join(severity.to_string()))?.1)
}
