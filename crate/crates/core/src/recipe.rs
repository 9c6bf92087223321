//! The fixed small-scale training recipe shared by the evaluation harness,
//! the examples and the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptModels;
use crate::corpus::{generate_corpus, CorpusSpec, LabeledCloud};
use crate::error::Result;
use crate::geometry::PointCloud;
use crate::models::{load_checkpoint, save_checkpoint, ClassifierModel, DenoiserArch, DenoiserModel, VaeArch, VaeModel};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::training::{train_classifier, train_diffusion, train_vae, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRecipe {
    pub train: CorpusSpec,
    pub held_out: CorpusSpec,
    pub schedule: ScheduleSpec,
    pub vae: VaeArch,
    pub vae_training: TrainConfig,
    pub denoiser: DenoiserArch,
    pub diffusion_training: TrainConfig,
    pub classifier_training: TrainConfig,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        let base = TrainConfig {
            epochs: 60,
            batch: 16,
            lr: 2e-3,
            points: Some(256),
            ..TrainConfig::default()
        };
        ToyRecipe {
            train: CorpusSpec {
                families: 8,
                per_class: 64,
                points: 1024,
                seed: 0,
            },
            held_out: CorpusSpec {
                families: 8,
                per_class: 16,
                points: 1024,
                seed: 99,
            },
            schedule: ScheduleSpec::default(),
            vae: VaeArch::default(),
            vae_training: base.clone(),
            denoiser: DenoiserArch {
                neighbors: 8,
                ..DenoiserArch::default()
            },
            diffusion_training: TrainConfig {
                epochs: 120,
                max_timestep: Some(400),
                sample_latents: false,
                ..base.clone()
            },
            classifier_training: base,
        }
    }
}

impl ToyRecipe {
    /// A much smaller variant for smoke tests: two families, few epochs.
    pub fn tiny() -> Self {
        let r = ToyRecipe::default();
        let shrink = |c: &TrainConfig| TrainConfig {
            epochs: 3,
            points: Some(64),
            ..c.clone()
        };
        ToyRecipe {
            train: CorpusSpec {
                families: 2,
                per_class: 6,
                points: 128,
                seed: 0,
            },
            held_out: CorpusSpec {
                families: 2,
                per_class: 3,
                points: 128,
                seed: 99,
            },
            vae: VaeArch { dz: 8, hidden: 16 },
            vae_training: shrink(&r.vae_training),
            denoiser: DenoiserArch {
                dz: 8,
                hidden: 16,
                context: 8,
                time_dim: 8,
                prior_hidden: 16,
                neighbors: 4,
                schedule: r.schedule,
            },
            diffusion_training: shrink(&r.diffusion_training),
            classifier_training: shrink(&r.classifier_training),
            ..r
        }
    }

    pub fn train_corpus(&self) -> Result<Vec<LabeledCloud>> {
        generate_corpus(&self.train)
    }

    pub fn held_out_corpus(&self) -> Result<Vec<LabeledCloud>> {
        generate_corpus(&self.held_out)
    }
}

pub struct TrainedModels {
    pub vae: VaeModel,
    pub denoiser: DenoiserModel,
    pub classifier: ClassifierModel,
    pub schedule: NoiseSchedule,
}

pub const VAE_FILE: &str = "vae.dbt";
pub const DENOISER_FILE: &str = "denoiser.dbt";
pub const CLASSIFIER_FILE: &str = "classifier.dbt";

impl TrainedModels {
    pub fn adapt_models(&self) -> AdaptModels<'_> {
        AdaptModels {
            vae: &self.vae,
            denoiser: &self.denoiser,
        }
    }

    /// Writes the three checkpoints (plus sidecars) under `dir`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        let none = serde_json::Value::Null;
        save_checkpoint(&self.vae, &dir.join(VAE_FILE), seed, none.clone())?;
        save_checkpoint(&self.denoiser, &dir.join(DENOISER_FILE), seed, none.clone())?;
        save_checkpoint(&self.classifier, &dir.join(CLASSIFIER_FILE), seed, none)?;
        Ok(())
    }

    /// Reads checkpoints written by [`TrainedModels::save`] or the training
    /// commands. The schedule is the one the denoiser was trained with.
    pub fn load(dir: &Path) -> Result<Self> {
        let (vae, _) = load_checkpoint::<VaeModel>(&dir.join(VAE_FILE))?;
        let (denoiser, _) = load_checkpoint::<DenoiserModel>(&dir.join(DENOISER_FILE))?;
        let (classifier, _) = load_checkpoint::<ClassifierModel>(&dir.join(CLASSIFIER_FILE))?;
        let schedule = denoiser.arch.schedule.build()?;
        Ok(TrainedModels {
            vae,
            denoiser,
            classifier,
            schedule,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyLogs {
    pub vae: TrainLog,
    pub diffusion: TrainLog,
    pub classifier: TrainLog,
}

/// Trains all three models on `corpus` (VAE, then the noise predictors on
/// its latents, then the classifier).
pub fn train_toy_models(recipe: &ToyRecipe, corpus: &[LabeledCloud]) -> Result<(TrainedModels, ToyLogs)> {
    let clouds: Vec<PointCloud> = corpus.iter().map(|c| c.cloud.clone()).collect();
    let schedule = recipe.schedule.build()?;
    let (vae, vae_log) = train_vae(&clouds, recipe.vae, &recipe.vae_training)?;
    let (denoiser, diffusion_log) = train_diffusion(&vae, &clouds, recipe.denoiser, &schedule, &recipe.diffusion_training)?;
    let (classifier, classifier_log) = train_classifier(corpus, recipe.train.families, &recipe.classifier_training)?;
    Ok((
        TrainedModels {
            vae,
            denoiser,
            classifier,
            schedule,
        },
        ToyLogs {
            vae: vae_log,
            diffusion: diffusion_log,
            classifier: classifier_log,
        },
    ))
}
