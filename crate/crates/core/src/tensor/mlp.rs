use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{NodeId, Tape, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, t: Tensor) -> Tensor {
        match self {
            Activation::Tanh => t.map(f64::tanh),
            Activation::Identity => t,
        }
    }

    fn record(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// One affine layer: `y = x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        Linear {
            weight: Tensor::matrix(fan_in, fan_out, data),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// A stack of affine layers with `hidden` between them and `output` after
/// the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new<R: Rng>(dims: &[usize], output: Activation, rng: &mut R) -> Self {
        Mlp {
            layers: dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
            hidden: Activation::Tanh,
            output,
        }
    }

    pub fn zeros(dims: &[usize], output: Activation) -> Self {
        Mlp {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            hidden: Activation::Tanh,
            output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::fan_in)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    fn check_chain(&self, input_cols: usize) -> Result<()> {
        let mut width = input_cols;
        for (i, l) in self.layers.iter().enumerate() {
            if l.fan_in() != width {
                return Err(dim_err!(
                    "layer {i} expects {} inputs, got {width}",
                    l.fan_in()
                ));
            }
            if l.bias.len() != l.fan_out() {
                return Err(dim_err!("layer {i} bias length {}", l.bias.len()));
            }
            width = l.fan_out();
        }
        Ok(())
    }

    fn activation_after(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_chain(x.cols())?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = self.activation_after(i).apply(h.matmul(&l.weight)?.add_row(&l.bias)?);
        }
        Ok(h)
    }

    /// Places every weight and bias on the tape, in layer order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<NodeId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .map(|t| tape.leaf(t, requires_grad))
            .collect()
    }

    /// Records the forward pass using parameter nodes from [`Mlp::bind`].
    pub fn record(&self, tape: &mut Tape, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        self.check_chain(tape.value(x).cols())?;
        let mut h = x;
        for (i, p) in params.chunks(2).enumerate() {
            let z = tape.matmul(h, p[0])?;
            let z = tape.add_bias(z, p[1])?;
            h = self.activation_after(i).record(tape, z)?;
        }
        Ok(h)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// A recorded MLP evaluation: the tape plus the ids needed to query it.
#[derive(Clone, Debug)]
pub struct Recording {
    pub tape: Tape,
    pub input: NodeId,
    pub params: Vec<NodeId>,
    pub output: NodeId,
}

/// Applies `mlp` to `input`; with `record` set, also returns a tape on which
/// the input and every parameter are differentiable leaves.
pub fn mlp_apply(mlp: &Mlp, input: &Tensor, record: bool) -> Result<(Tensor, Option<Recording>)> {
    if !record {
        return Ok((mlp.forward(input)?, None));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let params = mlp.bind(&mut tape, true);
    let out = mlp.record(&mut tape, x, &params)?;
    let value = tape.value(out).clone();
    Ok((
        value,
        Some(Recording {
            tape,
            input: x,
            params,
            output: out,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_annihilates() {
        let mlp = Mlp::zeros(&[3, 5, 2], Activation::Identity);
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.3, 0.2, 0.1]]).unwrap();
        let (y, _) = mlp_apply(&mlp, &x, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp {
            layers: vec![Linear {
                weight: Tensor::eye(3),
                bias: Tensor::zeros(&[1, 3]),
            }],
            hidden: Activation::Tanh,
            output: Activation::Identity,
        };
        let x = Tensor::row(&[0.25, -7.0, 3.0]);
        assert_eq!(mlp_apply(&mlp, &x, true).unwrap().0, x);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 4, 2], Activation::Identity, &mut rng);
        let x = Tensor::row(&[1.0, 2.0]);
        assert!(matches!(
            mlp.forward(&x),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn recorded_and_plain_forward_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[4, 16, 16, 3], Activation::Identity, &mut rng);
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 2.0]]).unwrap();
        let (plain, _) = mlp_apply(&mlp, &x, false).unwrap();
        let (taped, rec) = mlp_apply(&mlp, &x, true).unwrap();
        assert_eq!(plain, taped);
        let rec = rec.unwrap();
        let replayed = rec.tape.replay().unwrap();
        assert_eq!(&replayed[rec.output.index()], rec.tape.value(rec.output));
    }
}
