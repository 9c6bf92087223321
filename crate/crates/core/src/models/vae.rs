use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mlp_len, record_kl, record_reparam, EncodeMode, ParamSet, ShapeLatent};
use crate::error::{dim_err, Result};
use crate::geometry::{LatentPoints, PointCloud};
use crate::seeding::rng;
use crate::tensor::{Activation, Mlp, NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub dz: usize,
    pub hidden: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch { dz: 32, hidden: 64 }
    }
}

/// Shape encoder `q_z` (per-point features, mean pool, head), latent-point
/// encoder `q_h` (per point, conditioned on `z0`, residual on xyz) and
/// decoder `p_d` (per point, residual on the latent xyz).
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub arch: VaeArch,
    pub qz_point: Mlp,
    pub qz_head: Mlp,
    pub qh: Mlp,
    pub pd: Mlp,
}

/// Value of each term of the training objective for one cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KlParts {
    pub recon: f64,
    pub kl_z: f64,
    pub kl_h: f64,
}

const LOG_SIGMA_INIT: f64 = -4.0;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

impl VaeModel {
    pub fn new(arch: VaeArch, rng: &mut ChaCha8Rng) -> Self {
        let (h, dz) = (arch.hidden, arch.dz);
        let mut m = VaeModel {
            arch,
            qz_point: Mlp::new(&[3, h, h], Activation::Tanh, rng),
            qz_head: Mlp::new(&[h, 2 * dz], Activation::Identity, rng),
            qh: Mlp::new(&[3 + dz, h, h, 8], Activation::Identity, rng),
            pd: Mlp::new(&[4 + dz, h, 3], Activation::Identity, rng),
        };
        let b = &mut m.qz_head.layers[0].bias;
        for v in &mut b.data_mut()[dz..] {
            *v = LOG_SIGMA_INIT;
        }
        let b = &mut m.qh.layers.last_mut().unwrap().bias;
        for v in &mut b.data_mut()[4..] {
            *v = LOG_SIGMA_INIT;
        }
        m
    }

    pub fn zeros(arch: VaeArch) -> Self {
        let (h, dz) = (arch.hidden, arch.dz);
        VaeModel {
            arch,
            qz_point: Mlp::zeros(&[3, h, h], Activation::Tanh),
            qz_head: Mlp::zeros(&[h, 2 * dz], Activation::Identity),
            qh: Mlp::zeros(&[3 + dz, h, h, 8], Activation::Identity),
            pd: Mlp::zeros(&[4 + dz, h, 3], Activation::Identity),
        }
    }

    fn split<'a>(&self, p: &'a [NodeId]) -> [&'a [NodeId]; 4] {
        let a = mlp_len(&self.qz_point);
        let b = a + mlp_len(&self.qz_head);
        let c = b + mlp_len(&self.qh);
        [&p[..a], &p[a..b], &p[b..c], &p[c..]]
    }

    /// `(mu, log_sigma)` of `q_z`, each `1 x dz`.
    pub(crate) fn record_shape_posterior(&self, tape: &mut Tape, p: &[NodeId], x: NodeId) -> Result<(NodeId, NodeId)> {
        let [pz, ph, _, _] = self.split(p);
        let f = self.qz_point.record(tape, x, pz)?;
        let pooled = tape.mean_rows(f)?;
        let out = self.qz_head.record(tape, pooled, ph)?;
        let dz = self.arch.dz;
        Ok((tape.slice_cols(out, 0, dz)?, tape.slice_cols(out, dz, dz)?))
    }

    /// `(mu, log_sigma)` of `q_h`, each `n x 4`.
    pub(crate) fn record_point_posterior(
        &self,
        tape: &mut Tape,
        p: &[NodeId],
        x: NodeId,
        z: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let [_, _, qh, _] = self.split(p);
        let n = tape.value(x).rows();
        let zr = tape.repeat_rows(z, n)?;
        let input = tape.concat_cols(&[x, zr])?;
        let out = self.qh.record(tape, input, qh)?;
        let delta = tape.slice_cols(out, 0, 4)?;
        let log_sigma = tape.slice_cols(out, 4, 4)?;
        let pad = tape.constant(Tensor::zeros(&[n, 1]));
        let base = tape.concat_cols(&[x, pad])?;
        Ok((tape.add(delta, base)?, log_sigma))
    }

    pub(crate) fn record_decode(&self, tape: &mut Tape, p: &[NodeId], z: NodeId, h: NodeId) -> Result<NodeId> {
        let [_, _, _, pd] = self.split(p);
        let n = tape.value(h).rows();
        let zr = tape.repeat_rows(z, n)?;
        let input = tape.concat_cols(&[h, zr])?;
        let out = self.pd.record(tape, input, pd)?;
        let xyz = tape.slice_cols(h, 0, 3)?;
        tape.add(out, xyz)
    }

    /// Negative ELBO per point for one cloud, with reparameterised samples
    /// of both latents drawn from `rng`.
    pub(crate) fn record_loss(
        &self,
        tape: &mut Tape,
        p: &[NodeId],
        x: &Tensor,
        gamma_z: f64,
        gamma_h: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(NodeId, KlParts)> {
        let n = x.rows();
        let xn = tape.constant(x.clone());
        let (mz, lz) = self.record_shape_posterior(tape, p, xn)?;
        let z = record_reparam(tape, mz, lz, gaussian(1, self.arch.dz, rng))?;
        let (mh, lh) = self.record_point_posterior(tape, p, xn, z)?;
        let h = record_reparam(tape, mh, lh, gaussian(n, 4, rng))?;
        let xhat = self.record_decode(tape, p, z, h)?;
        let diff = tape.sub(xhat, xn)?;
        let sq = tape.square(diff)?;
        let recon = tape.sum_all(sq)?;
        let kl_z = record_kl(tape, mz, lz)?;
        let kl_h = record_kl(tape, mh, lh)?;
        let wz = tape.scale(kl_z, gamma_z)?;
        let wh = tape.scale(kl_h, gamma_h)?;
        let total = tape.add(recon, wz)?;
        let total = tape.add(total, wh)?;
        let loss = tape.scale(total, 1.0 / n as f64)?;
        let parts = KlParts {
            recon: tape.value(recon).data()[0],
            kl_z: tape.value(kl_z).data()[0],
            kl_h: tape.value(kl_h).data()[0],
        };
        Ok((loss, parts))
    }

    pub fn shape_posterior(&self, x: &PointCloud) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xn = tape.constant(x.to_tensor());
        let (mu, ls) = self.record_shape_posterior(&mut tape, &p, xn)?;
        let (mu, ls) = (tape.value(mu).clone(), tape.value(ls).clone());
        mu.ensure_finite("shape posterior")?;
        ls.ensure_finite("shape posterior")?;
        Ok((mu, ls))
    }

    pub fn encode_shape(&self, x: &PointCloud, mode: EncodeMode) -> Result<ShapeLatent> {
        let (mu, ls) = self.shape_posterior(x)?;
        ShapeLatent::new(sample_or_mean(mu, &ls, mode)?)
    }

    pub fn encode_points(&self, z0: &ShapeLatent, x: &PointCloud, mode: EncodeMode) -> Result<LatentPoints> {
        self.check_latent(z0)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xn = tape.constant(x.to_tensor());
        let z = tape.constant(z0.z.clone());
        let (mu, ls) = self.record_point_posterior(&mut tape, &p, xn, z)?;
        let (mu, ls) = (tape.value(mu).clone(), tape.value(ls).clone());
        mu.ensure_finite("latent points")?;
        ls.ensure_finite("latent points")?;
        LatentPoints::new(sample_or_mean(mu, &ls, mode)?)
    }

    pub fn decode(&self, z0: &ShapeLatent, h0: &LatentPoints) -> Result<PointCloud> {
        self.check_latent(z0)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let z = tape.constant(z0.z.clone());
        let h = tape.constant(h0.values.clone());
        let out = self.record_decode(&mut tape, &p, z, h)?;
        let out = tape.value(out);
        out.ensure_finite("decoded cloud")?;
        PointCloud::from_tensor(out)
    }

    /// Posterior-mean encoding of both latents.
    pub fn encode(&self, x: &PointCloud) -> Result<(ShapeLatent, LatentPoints)> {
        let z0 = self.encode_shape(x, EncodeMode::Mean)?;
        let h0 = self.encode_points(&z0, x, EncodeMode::Mean)?;
        Ok((z0, h0))
    }

    /// `decode(encode(x))` with posterior means.
    pub fn reconstruct(&self, x: &PointCloud) -> Result<PointCloud> {
        let (z0, h0) = self.encode(x)?;
        self.decode(&z0, &h0)
    }

    fn check_latent(&self, z0: &ShapeLatent) -> Result<()> {
        if z0.dim() != self.arch.dz {
            return Err(dim_err!("shape latent width {} for a model with dz = {}", z0.dim(), self.arch.dz));
        }
        Ok(())
    }
}

fn sample_or_mean(mu: Tensor, log_sigma: &Tensor, mode: EncodeMode) -> Result<Tensor> {
    match mode {
        EncodeMode::Mean => Ok(mu),
        EncodeMode::Sample(seed) => {
            let mut r = rng(seed);
            let eps = gaussian(mu.rows(), mu.cols(), &mut r);
            let noise = log_sigma.map(f64::exp).mul(&eps)?;
            mu.add(&noise)
        }
    }
}

impl ParamSet for VaeModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.qz_point.tensors();
        v.extend(self.qz_head.tensors());
        v.extend(self.qh.tensors());
        v.extend(self.pd.tensors());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.qz_point.tensors_mut();
        v.extend(self.qz_head.tensors_mut());
        v.extend(self.qh.tensors_mut());
        v.extend(self.pd.tensors_mut());
        v
    }
}
