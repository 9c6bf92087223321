//! Toy networks: a hierarchical VAE (shape latent plus latent points), the
//! latent-point and shape-latent noise predictors, a point classifier, and a
//! closed-form Gaussian noise predictor used as a test oracle.
//!
//! Every forward pass is built on a [`Tape`]; the plain evaluation path is the
//! same recording with constant leaves, so recorded and unrecorded outputs
//! agree bit for bit.

mod checkpoint;
mod classifier;
mod denoiser;
mod oracle;
mod vae;

pub use checkpoint::{digest_file, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub(crate) use classifier::argmax;
pub use classifier::{ClassifierArch, ClassifierModel};
pub use denoiser::{DenoiserArch, DenoiserModel, EpsRecording};
pub use oracle::oracle_gaussian_eps;
pub use vae::{KlParts, VaeArch, VaeModel};

use crate::error::{dim_err, Result};
use crate::tensor::{Linear, Mlp, NodeId, Tape, Tensor};

/// Global shape code `z0`, stored as a `1 x dz` row.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeLatent {
    pub z: Tensor,
}

impl ShapeLatent {
    pub fn new(z: Tensor) -> Result<Self> {
        if z.rows() != 1 {
            return Err(dim_err!("shape latent must be a single row, got {:?}", z.shape()));
        }
        z.ensure_finite("shape latent")?;
        Ok(ShapeLatent { z })
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }
}

/// Whether encoders return their posterior mean or a seeded sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    Mean,
    Sample(u64),
}

/// Flat access to every trainable tensor, in a fixed order shared by
/// optimisers, checkpoints and tape binding.
pub trait ParamSet {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<NodeId> {
        self.params()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Replaces every tensor; shapes must match the current ones.
    fn load_params(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != tensors.len() {
            return Err(dim_err!("expected {} tensors, got {}", slots.len(), tensors.len()));
        }
        for (i, (slot, t)) in slots.iter_mut().zip(tensors).enumerate() {
            if slot.shape() != t.shape() {
                return Err(dim_err!("tensor {i}: expected {:?}, got {:?}", slot.shape(), t.shape()));
            }
            **slot = t;
        }
        Ok(())
    }
}

fn mlp_len(m: &Mlp) -> usize {
    2 * m.layers.len()
}

fn linear_params(l: &Linear) -> [&Tensor; 2] {
    [&l.weight, &l.bias]
}

fn linear_params_mut(l: &mut Linear) -> [&mut Tensor; 2] {
    [&mut l.weight, &mut l.bias]
}

/// Sinusoidal embedding of a timestep: `dim / 2` sines then `dim / 2` cosines
/// over geometrically spaced frequencies.
pub fn time_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    Tensor::matrix(1, dim, out)
}

/// KL divergence of `N(mu, exp(log_sigma)^2)` from `N(0, I)`, summed over
/// all entries, recorded on the tape.
pub(crate) fn record_kl(tape: &mut Tape, mu: NodeId, log_sigma: NodeId) -> Result<NodeId> {
    let count = tape.value(mu).len() as f64;
    let m2 = tape.square(mu)?;
    let m2 = tape.sum_all(m2)?;
    let two_ls = tape.scale(log_sigma, 2.0)?;
    let var = tape.exp(two_ls)?;
    let var = tape.sum_all(var)?;
    let ls = tape.sum_all(log_sigma)?;
    let quad = tape.add(m2, var)?;
    let quad = tape.scale(quad, 0.5)?;
    let kl = tape.sub(quad, ls)?;
    let offset = tape.constant(Tensor::scalar(0.5 * count));
    tape.sub(kl, offset)
}

/// `mu + exp(log_sigma) * eps` with `eps` a constant.
pub(crate) fn record_reparam(tape: &mut Tape, mu: NodeId, log_sigma: NodeId, eps: Tensor) -> Result<NodeId> {
    let sigma = tape.exp(log_sigma)?;
    let e = tape.constant(eps);
    let noise = tape.mul(sigma, e)?;
    tape.add(mu, noise)
}
