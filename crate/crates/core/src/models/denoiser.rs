use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{linear_params, linear_params_mut, mlp_len, time_embedding, ParamSet, ShapeLatent};
use crate::error::{arg_err, dim_err, Result};
use crate::schedule::ScheduleSpec;
use crate::geometry::{knn_indices, LatentPoints};
use crate::tensor::{Activation, Linear, Mlp, NodeId, Tape, Tensor};

const WIDE_FACTOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub dz: usize,
    /// Width of the per-point trunk.
    pub hidden: usize,
    /// Width of the pooled context vector.
    pub context: usize,
    pub time_dim: usize,
    /// Width of the shape-latent predictor.
    pub prior_hidden: usize,
    /// Neighbours averaged for the local-offset input; 0 disables it.
    #[serde(default)]
    pub neighbors: usize,
    /// Noise schedule the model is trained for; the local offset is divided
    /// by the noise standard deviation at `t`.
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        DenoiserArch {
            dz: 32,
            hidden: 128,
            context: 32,
            time_dim: 16,
            prior_hidden: 128,
            neighbors: 16,
            schedule: ScheduleSpec::default(),
        }
    }
}

/// Latent-point noise predictor `eps_h` and shape-latent noise predictor
/// `eps_z`.
///
/// `eps_h` is a per-point MLP whose input is the point row concatenated with
/// `z0`, a time embedding and a context vector (mean over points of a small
/// per-point network). The first layer is stored split into its per-point
/// and global blocks: the global block is evaluated once per cloud and added
/// as a bias, which is the same function as the concatenated layer.
///
/// With `neighbors > 0` each point also sees its offsets to the means of its
/// `neighbors` and `4 * neighbors` nearest neighbours in `h_t`, divided by the
/// noise level (neighbour sets are fixed per evaluation, so
/// the map is differentiable wherever they do not change).
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub arch: DenoiserArch,
    pub context_net: Mlp,
    /// Per-point block of the first layer, `4 x hidden`.
    pub point_in: Tensor,
    /// Local-offset block of the first layer, `4 x hidden`.
    pub local_in: Option<Tensor>,
    pub global_in: Linear,
    pub trunk: Mlp,
    pub eps_z: Mlp,
    noise_std: Vec<f64>,
}

/// A recorded `eps_h` evaluation with differentiable `h_t` and `z0` leaves.
pub struct EpsRecording {
    pub tape: Tape,
    pub h_t: NodeId,
    pub z0: NodeId,
    pub eps: NodeId,
}

impl DenoiserModel {
    pub fn new(arch: DenoiserArch, rng: &mut ChaCha8Rng) -> Self {
        let DenoiserArch {
            dz,
            hidden,
            context,
            time_dim,
            prior_hidden,
            neighbors,
            schedule,
        } = arch;
        let global = dz + time_dim + context;
        let local = if neighbors > 0 { 8 } else { 0 };
        let mut point_in = Linear::init(4 + local + global, hidden, rng);
        let global_w = point_in.weight.select_rows(&(4 + local..4 + local + global).collect::<Vec<_>>());
        let local_in = (local > 0).then(|| point_in.weight.select_rows(&(4..12).collect::<Vec<_>>()));
        point_in.weight = point_in.weight.select_rows(&[0, 1, 2, 3]);
        DenoiserModel {
            arch,
            context_net: Mlp::new(&[4, 64, context], Activation::Tanh, rng),
            global_in: Linear {
                weight: global_w,
                bias: point_in.bias.clone(),
            },
            point_in: point_in.weight,
            local_in,
            trunk: Mlp::new(&[hidden, hidden, 4], Activation::Identity, rng),
            eps_z: Mlp::new(&[dz + time_dim, prior_hidden, prior_hidden, dz], Activation::Identity, rng),
            noise_std: noise_std(&schedule),
        }
    }

    pub fn zeros(arch: DenoiserArch) -> Self {
        let mut rng = crate::seeding::rng(0);
        let mut m = DenoiserModel::new(arch, &mut rng);
        for t in m.params_mut() {
            t.data_mut().fill(0.0);
        }
        m
    }

    fn split<'a>(&self, p: &'a [NodeId]) -> [&'a [NodeId]; 5] {
        let a = mlp_len(&self.context_net);
        let b = a + 1 + usize::from(self.local_in.is_some());
        let c = b + 2;
        let d = c + mlp_len(&self.trunk);
        [&p[..a], &p[a..b], &p[b..c], &p[c..d], &p[d..]]
    }

    fn offset_scale(&self, t: usize) -> Result<f64> {
        match self.noise_std.get(t) {
            Some(&s) => Ok(1.0 / s.max(self.noise_std[1])),
            None => Err(arg_err!("timestep {t} beyond the model's {}-step schedule", self.noise_std.len() - 1)),
        }
    }

    /// Neighbour sets used by the local-offset input for these latent points.
    /// Near and wide neighbour sets (`neighbors` and `4 * neighbors`).
    fn neighbor_groups(&self, h: &Tensor) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        if h.rows() < 2 {
            let own: Vec<Vec<usize>> = (0..h.rows()).map(|i| vec![i]).collect();
            return Ok((own.clone(), own));
        }
        let wide = knn_indices(h, 3, WIDE_FACTOR * self.arch.neighbors)?;
        let near = wide.iter().map(|g| g[..self.arch.neighbors.min(g.len())].to_vec()).collect();
        Ok((near, wide))
    }

    /// Records `eps_h(h_t, z0, t)`; `h` is `n x 4`, `z` is `1 x dz`.
    pub(crate) fn record_eps_h(&self, tape: &mut Tape, p: &[NodeId], h: NodeId, z: NodeId, t: usize) -> Result<NodeId> {
        let [ctx_p, point_p, global_p, trunk_p, _] = self.split(p);
        if tape.value(h).cols() != 4 {
            return Err(dim_err!("latent points need 4 columns, got {}", tape.value(h).cols()));
        }
        if tape.value(z).shape() != [1, self.arch.dz] {
            return Err(dim_err!("shape latent {:?} for dz = {}", tape.value(z).shape(), self.arch.dz));
        }
        let feats = self.context_net.record(tape, h, ctx_p)?;
        let ctx = tape.mean_rows(feats)?;
        let temb = tape.constant(time_embedding(t, self.arch.time_dim));
        let g = tape.concat_cols(&[z, temb, ctx])?;
        let g = tape.matmul(g, global_p[0])?;
        let g = tape.add(g, global_p[1])?;
        let mut a = tape.matmul(h, point_p[0])?;
        if self.local_in.is_some() {
            let (near, wide) = self.neighbor_groups(tape.value(h))?;
            let near = tape.gather_mean(h, near)?;
            let wide = tape.gather_mean(h, wide)?;
            let near = tape.sub(near, h)?;
            let wide = tape.sub(wide, h)?;
            let off = tape.concat_cols(&[near, wide])?;
            let off = tape.scale(off, self.offset_scale(t)?)?;
            let l = tape.matmul(off, point_p[1])?;
            a = tape.add(a, l)?;
        }
        let a = tape.add_bias(a, g)?;
        let a = tape.tanh(a)?;
        self.trunk.record(tape, a, trunk_p)
    }

    /// Records `eps_z(z_t, t)` for a `1 x dz` shape latent.
    pub(crate) fn record_eps_z(&self, tape: &mut Tape, p: &[NodeId], z: NodeId, t: usize) -> Result<NodeId> {
        let [.., prior_p] = self.split(p);
        let temb = tape.constant(time_embedding(t, self.arch.time_dim));
        let input = tape.concat_cols(&[z, temb])?;
        self.eps_z.record(tape, input, prior_p)
    }

    /// Predicted noise for every latent point; with `record` set, the tape
    /// has `h_t` and `z0` as differentiable leaves and the weights as
    /// constants.
    pub fn denoise_eps_h(
        &self,
        h_t: &LatentPoints,
        z0: &ShapeLatent,
        t: usize,
        record: bool,
    ) -> Result<(LatentPoints, Option<EpsRecording>)> {
        self.eps_h_with(h_t, z0, t, record, record)
    }

    /// Like [`DenoiserModel::denoise_eps_h`] with separate control over which
    /// input leaves carry gradients.
    pub fn eps_h_with(
        &self,
        h_t: &LatentPoints,
        z0: &ShapeLatent,
        t: usize,
        grad_h: bool,
        grad_z: bool,
    ) -> Result<(LatentPoints, Option<EpsRecording>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let h = tape.leaf(h_t.values.clone(), grad_h);
        let z = tape.leaf(z0.z.clone(), grad_z);
        let eps = self.record_eps_h(&mut tape, &p, h, z, t)?;
        let value = tape.value(eps).clone();
        value.ensure_finite("noise prediction")?;
        let out = LatentPoints::new(value)?;
        let rec = (grad_h || grad_z).then_some(EpsRecording {
            tape,
            h_t: h,
            z0: z,
            eps,
        });
        Ok((out, rec))
    }

    pub fn denoise_eps_z(&self, z_t: &ShapeLatent, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let z = tape.constant(z_t.z.clone());
        let out = self.record_eps_z(&mut tape, &p, z, t)?;
        Ok(tape.value(out).clone())
    }
}

/// `sqrt(1 - alpha_bar(t))` for `t = 0..=T` under a linear beta schedule.
fn noise_std(spec: &ScheduleSpec) -> Vec<f64> {
    let n = spec.steps.max(1);
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut ab = 1.0;
    for t in 1..=n {
        let beta = if n == 1 {
            spec.beta_start
        } else {
            spec.beta_start + (spec.beta_end - spec.beta_start) * (t - 1) as f64 / (n - 1) as f64
        };
        ab *= 1.0 - beta;
        out.push((1.0 - ab).max(0.0).sqrt());
    }
    out
}

impl ParamSet for DenoiserModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.context_net.tensors();
        v.push(&self.point_in);
        v.extend(self.local_in.as_ref());
        v.extend(linear_params(&self.global_in));
        v.extend(self.trunk.tensors());
        v.extend(self.eps_z.tensors());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.context_net.tensors_mut();
        v.push(&mut self.point_in);
        v.extend(self.local_in.as_mut());
        v.extend(linear_params_mut(&mut self.global_in));
        v.extend(self.trunk.tensors_mut());
        v.extend(self.eps_z.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng;

    fn latent(n: usize, seed: u64) -> LatentPoints {
        let mut r = rng(seed);
        let data = (0..n * 4).map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r)).collect();
        LatentPoints::new(Tensor::new(vec![n, 4], data).unwrap()).unwrap()
    }

    fn z(dz: usize) -> ShapeLatent {
        ShapeLatent::new(Tensor::matrix(1, dz, (0..dz).map(|i| (i as f64 * 0.37).sin()).collect())).unwrap()
    }

    #[test]
    fn split_layer_equals_concatenated_layer() {
        let arch = DenoiserArch {
            hidden: 16,
            neighbors: 0,
            ..DenoiserArch::default()
        };
        let m = DenoiserModel::new(arch, &mut rng(1));
        let h = latent(10, 2);
        let z0 = z(arch.dz);
        let t = 37;
        let (eps, _) = m.denoise_eps_h(&h, &z0, t, false).unwrap();

        let ctx = m.context_net.forward(&h.values).unwrap().mean_rows();
        let g = Tensor::concat_cols(&[&z0.z, &time_embedding(t, arch.time_dim), &ctx]).unwrap();
        let input = Tensor::concat_cols(&[&h.values, &g.repeat_rows(10)]).unwrap();
        let w = {
            let mut rows: Vec<Vec<f64>> = (0..4).map(|i| m.point_in.row_slice(i).to_vec()).collect();
            rows.extend((0..g.cols()).map(|i| m.global_in.weight.row_slice(i).to_vec()));
            Tensor::from_rows(&rows).unwrap()
        };
        let first = Mlp {
            layers: vec![Linear {
                weight: w,
                bias: m.global_in.bias.clone(),
            }],
            hidden: Activation::Tanh,
            output: Activation::Tanh,
        };
        let want = m.trunk.forward(&first.forward(&input).unwrap()).unwrap();
        assert!(want.max_abs_diff(&eps.values) < 1e-12);
    }

    #[test]
    fn permutation_equivariant_and_zero_model() {
        let arch = DenoiserArch::default();
        let m = DenoiserModel::new(arch, &mut rng(4));
        let h = latent(32, 5);
        let perm: Vec<usize> = (0..32).map(|i| (i * 7) % 32).collect();
        let hp = LatentPoints::new(h.values.select_rows(&perm)).unwrap();
        let a = m.denoise_eps_h(&h, &z(32), 10, false).unwrap().0;
        let b = m.denoise_eps_h(&hp, &z(32), 10, false).unwrap().0;
        assert!(a.values.select_rows(&perm).max_abs_diff(&b.values) < 1e-12);

        let zero = DenoiserModel::zeros(arch);
        let e = zero.denoise_eps_h(&h, &z(32), 10, false).unwrap().0;
        assert!(e.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recorded_matches_plain() {
        let m = DenoiserModel::new(DenoiserArch::default(), &mut rng(6));
        let h = latent(20, 7);
        let (a, rec) = m.denoise_eps_h(&h, &z(32), 500, true).unwrap();
        let (b, none) = m.denoise_eps_h(&h, &z(32), 500, false).unwrap();
        assert!(none.is_none());
        assert_eq!(a, b);
        let rec = rec.unwrap();
        let replay = rec.tape.replay().unwrap();
        assert_eq!(&replay[rec.eps.index()], &a.values);
    }

    #[test]
    fn offset_scale_follows_schedule() {
        let m = DenoiserModel::new(DenoiserArch::default(), &mut rng(3));
        let sched = ScheduleSpec::default().build().unwrap();
        for t in [1, 50, 999, 1000] {
            assert!((m.offset_scale(t).unwrap() * (1.0 - sched.alpha_bar(t)).sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(m.offset_scale(1001).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = DenoiserModel::new(DenoiserArch::default(), &mut rng(8));
        let h = latent(5, 1);
        let short = ShapeLatent::new(Tensor::zeros(&[1, 3])).unwrap();
        assert!(matches!(m.denoise_eps_h(&h, &short, 3, false), Err(crate::Error::Dimension(_))));
    }
}
