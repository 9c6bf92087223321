use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mlp_len, ParamSet};
use crate::error::{num_err, Result};
use crate::geometry::PointCloud;
use crate::tensor::{Activation, Mlp, NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub classes: usize,
    pub hidden: usize,
    pub features: usize,
}

impl ClassifierArch {
    pub fn with_classes(classes: usize) -> Self {
        ClassifierArch {
            classes,
            hidden: 64,
            features: 128,
        }
    }
}

/// Per-point MLP, max pool over points, MLP head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    pub point: Mlp,
    pub head: Mlp,
}

impl ClassifierModel {
    pub fn new(arch: ClassifierArch, rng: &mut ChaCha8Rng) -> Self {
        ClassifierModel {
            arch,
            point: Mlp::new(&[3, arch.hidden, arch.features], Activation::Tanh, rng),
            head: Mlp::new(&[arch.features, arch.hidden, arch.classes], Activation::Identity, rng),
        }
    }

    pub(crate) fn record_logits(&self, tape: &mut Tape, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let (pp, hp) = p.split_at(mlp_len(&self.point));
        let f = self.point.record(tape, x, pp)?;
        let pooled = tape.max_rows(f)?;
        self.head.record(tape, pooled, hp)
    }

    pub fn logits(&self, x: &PointCloud) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xn = tape.constant(x.to_tensor());
        let out = self.record_logits(&mut tape, &p, xn)?;
        let logits = tape.value(out).clone();
        if !logits.is_finite() {
            return Err(num_err!("classifier produced non-finite logits"));
        }
        Ok(logits)
    }

    /// Predicted label (lowest index on ties) and the `1 x C` logits.
    pub fn classify(&self, x: &PointCloud) -> Result<(usize, Tensor)> {
        let logits = self.logits(x)?;
        Ok((argmax(logits.data()), logits))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ParamSet for ClassifierModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.point.tensors();
        v.extend(self.head.tensors());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.point.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng(seed);
        PointCloud::new((0..n).map(|_| [r.random(), r.random(), r.random()]).collect()).unwrap()
    }

    #[test]
    fn invariant_to_order_and_duplication() {
        let clf = ClassifierModel::new(ClassifierArch::with_classes(5), &mut rng(2));
        let x = cloud(50, 3);
        let perm: Vec<usize> = (0..50).rev().collect();
        let a = clf.logits(&x).unwrap();
        assert_eq!(a, clf.logits(&x.permuted(&perm)).unwrap());
        let doubled: Vec<usize> = (0..100).map(|i| i % 50).collect();
        assert_eq!(a, clf.logits(&x.permuted(&doubled)).unwrap());
        assert_eq!(a.shape(), &[1, 5]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
