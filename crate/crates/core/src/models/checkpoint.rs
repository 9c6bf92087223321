//! Checkpoints: the model's tensors as consecutive `DBT1` records, plus a
//! JSON sidecar (same stem, `.json`) holding the architecture and the
//! settings that produced the weights.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassifierArch, ClassifierModel, DenoiserArch, DenoiserModel, ParamSet, VaeArch, VaeModel};
use crate::error::{Error, Result};
use crate::seeding::rng;
use crate::tensor::{read_tensors, write_tensors};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub arch: serde_json::Value,
    pub seed: u64,
    /// Training configuration and any other provenance.
    pub config: serde_json::Value,
    pub tensors: usize,
    pub parameters: usize,
}

pub trait Checkpoint: ParamSet + Sized {
    const KIND: &'static str;
    type Arch: Serialize + DeserializeOwned;

    fn arch(&self) -> Self::Arch;
    /// A model of the right shape whose values will be overwritten.
    fn blank(arch: Self::Arch) -> Self;
}

impl Checkpoint for VaeModel {
    const KIND: &'static str = "vae";
    type Arch = VaeArch;

    fn arch(&self) -> VaeArch {
        self.arch
    }

    fn blank(arch: VaeArch) -> Self {
        VaeModel::zeros(arch)
    }
}

impl Checkpoint for DenoiserModel {
    const KIND: &'static str = "denoiser";
    type Arch = DenoiserArch;

    fn arch(&self) -> DenoiserArch {
        self.arch
    }

    fn blank(arch: DenoiserArch) -> Self {
        DenoiserModel::zeros(arch)
    }
}

impl Checkpoint for ClassifierModel {
    const KIND: &'static str = "classifier";
    type Arch = ClassifierArch;

    fn arch(&self) -> ClassifierArch {
        self.arch
    }

    fn blank(arch: ClassifierArch) -> Self {
        ClassifierModel::new(arch, &mut rng(0))
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint<M: Checkpoint>(model: &M, path: &Path, seed: u64, config: serde_json::Value) -> Result<CheckpointMeta> {
    let meta = CheckpointMeta {
        kind: M::KIND.to_string(),
        arch: serde_json::to_value(model.arch())?,
        seed,
        config,
        tensors: model.params().len(),
        parameters: model.param_count(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_tensors(&mut w, &model.params()).map_err(|e| Error::io(path, e))?;
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(meta)
}

pub fn load_checkpoint<M: Checkpoint>(path: &Path) -> Result<(M, CheckpointMeta)> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("missing checkpoint sidecar {}", side.display())),
        _ => Error::io(&side, e),
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.kind != M::KIND {
        return Err(Error::Config(format!(
            "{} holds a {} checkpoint, expected {}",
            path.display(),
            meta.kind,
            M::KIND
        )));
    }
    let arch: M::Arch = serde_json::from_value(meta.arch.clone())?;
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("missing checkpoint {}", path.display())),
        _ => Error::io(path, e),
    })?;
    let tensors = read_tensors(&mut bytes.as_slice())?;
    let mut model = M::blank(arch);
    model.load_params(tensors)?;
    Ok((model, meta))
}

/// Hex SHA-256 of a file's bytes.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
