//! Point clouds, latent point sets, and the (selective) Chamfer distance.
//!
//! Point sets are `n x d` tensors. Nearest neighbours are brute force; at the
//! sizes used here (n <= 2048) a single fused pass over all pairs that tracks
//! row and column minima together is fast enough and fully deterministic.

mod codec;

pub use codec::{load_cloud, read_dpc, save_cloud, write_dpc, CLOUD_MAGIC};


use crate::error::{arg_err, dim_err, Result};
use crate::tensor::Tensor;

/// An `n x 3` cloud together with the normalisation that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    /// Centroid removed by [`PointCloud::normalize`], in source units.
    pub centroid: [f64; 3],
    /// Divisor applied by [`PointCloud::normalize`].
    pub scale: f64,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(arg_err!("point cloud must contain at least one point"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(arg_err!("point cloud contains non-finite coordinates"));
        }
        Ok(PointCloud {
            points,
            centroid: [0.0; 3],
            scale: 1.0,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.cols() < 3 {
            return Err(dim_err!("need at least 3 columns, got {}", t.cols()));
        }
        PointCloud::new(
            (0..t.rows())
                .map(|i| {
                    let r = t.row_slice(i);
                    [r[0], r[1], r[2]]
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(
            self.points.len(),
            3,
            self.points.iter().flatten().copied().collect(),
        )
    }

    pub fn centroid_of_points(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm3).fold(0.0, f64::max)
    }

    /// Centres at the origin and scales so the farthest point has norm 1.
    /// A cloud whose points all coincide is only centred (scale 1).
    pub fn normalize(&self) -> PointCloud {
        let c = self.centroid_of_points();
        let centred: Vec<[f64; 3]> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let r = centred.iter().map(norm3).fold(0.0, f64::max);
        let scale = if r > 0.0 { r } else { 1.0 };
        PointCloud {
            points: centred
                .iter()
                .map(|p| [p[0] / scale, p[1] / scale, p[2] / scale])
                .collect(),
            centroid: c,
            scale,
        }
    }

    /// Row permutation: point `i` of the result is point `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            centroid: self.centroid,
            scale: self.scale,
        }
    }
}

pub(crate) fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Point-structured latent: `n x 4` (xyz plus one feature channel).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoints {
    pub values: Tensor,
}

impl LatentPoints {
    pub const CHANNELS: usize = 4;

    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || values.cols() != Self::CHANNELS {
            return Err(dim_err!("latent points must be n x 4, got {:?}", values.shape()));
        }
        if values.rows() == 0 {
            return Err(arg_err!("latent points must be nonempty"));
        }
        values.ensure_finite("latent points")?;
        Ok(LatentPoints { values })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn xyz(&self) -> Tensor {
        self.values.slice_cols(0, 3).expect("4 columns")
    }
}

/// Which argument of the selective Chamfer distance to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScdSide {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScdResult {
    pub value: f64,
    /// `(i, j)`: point `i` of the first set and its nearest neighbour `j` in
    /// the second, for the pairs that survived the lambda cut.
    pub selected_ab: Vec<(usize, usize)>,
    /// `(j, i)`: point `j` of the second set and its nearest neighbour `i`
    /// in the first.
    pub selected_ba: Vec<(usize, usize)>,
}

/// How many of `n` sorted distances the lambda cut keeps.
pub fn keep_count(lambda: f64, n: usize) -> usize {
    ((lambda * n as f64).floor() as usize).clamp(1, n.max(1))
}

fn check_sets(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 || a.is_empty() || b.is_empty() {
        return Err(arg_err!("point sets must be nonempty"));
    }
    if a.cols() != b.cols() {
        return Err(dim_err!(
            "point sets of dimension {} and {}",
            a.cols(),
            b.cols()
        ));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(arg_err!("lambda must lie in (0, 1], got {lambda}"));
    }
    Ok(())
}

/// Nearest neighbour of every row of `a` in `b` and of every row of `b` in
/// `a`, as `(index, squared distance)`. Ties go to the lower index.
pub fn nearest_both(a: &Tensor, b: &Tensor) -> Result<(Vec<(usize, f64)>, Vec<(usize, f64)>)> {
    check_sets(a, b)?;
    let d = a.cols();
    let (ad, bd) = (a.data(), b.data());
    let mut ab = vec![(0usize, f64::INFINITY); a.rows()];
    let mut ba = vec![(0usize, f64::INFINITY); b.rows()];
    for (i, pa) in ad.chunks_exact(d).enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (j, pb) in bd.chunks_exact(d).enumerate() {
            let mut s = 0.0;
            for k in 0..d {
                let t = pa[k] - pb[k];
                s += t * t;
            }
            if s < best.1 {
                best = (j, s);
            }
            if s < ba[j].1 {
                ba[j] = (i, s);
            }
        }
        ab[i] = best;
    }
    Ok((ab, ba))
}

/// The `k` nearest other rows of every row of `a` (by squared distance over
/// the first `dims` columns), nearest first, ties to the lower index. `k` is
/// capped at `n - 1`.
pub fn knn_indices(a: &Tensor, dims: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = a.rows();
    if n < 2 || k == 0 {
        return Err(arg_err!("need k >= 1 and at least two points, got k = {k}, n = {n}"));
    }
    if dims == 0 || dims > a.cols() {
        return Err(dim_err!("{dims} distance columns for {} columns", a.cols()));
    }
    let k = k.min(n - 1);
    let m = a.cols();
    let data = a.data();
    let row = |i: usize| &data[i * m..i * m + dims];
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let pi = row(i);
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = pi.iter().zip(row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            cand.push((d, j));
        }
        let by = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by);
            cand.truncate(k);
        }
        cand.sort_by(by);
        out.push(cand.iter().map(|c| c.1).collect());
    }
    Ok(out)
}

/// For every row of `a`, the minimum squared distance to any row of `b`.
pub fn min_sq_dists(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    check_sets(a, b)?;
    let d = a.cols();
    Ok(a.data()
        .chunks_exact(d)
        .map(|pa| {
            b.data()
                .chunks_exact(d)
                .map(|pb| pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Keeps the `keep` smallest entries, ordered by (distance, index).
fn lower_fraction(nn: &[(usize, f64)], keep: usize) -> Vec<(usize, usize, f64)> {
    let mut order: Vec<usize> = (0..nn.len()).collect();
    order.sort_by(|&x, &y| nn[x].1.total_cmp(&nn[y].1).then(x.cmp(&y)));
    order
        .into_iter()
        .take(keep)
        .map(|i| (i, nn[i].0, nn[i].1))
        .collect()
}

/// Selective Chamfer distance: on each side, sum the lowest `lambda` fraction
/// of nearest-neighbour squared distances and divide by that side's full
/// size.
pub fn scd(a: &Tensor, b: &Tensor, lambda: f64) -> Result<ScdResult> {
    check_lambda(lambda)?;
    let (ab, ba) = nearest_both(a, b)?;
    Ok(scd_from_neighbours(&ab, &ba, lambda))
}

fn scd_from_neighbours(ab: &[(usize, f64)], ba: &[(usize, f64)], lambda: f64) -> ScdResult {
    let sel_ab = lower_fraction(ab, keep_count(lambda, ab.len()));
    let sel_ba = lower_fraction(ba, keep_count(lambda, ba.len()));
    let sum_ab: f64 = sel_ab.iter().map(|s| s.2).sum();
    let sum_ba: f64 = sel_ba.iter().map(|s| s.2).sum();
    ScdResult {
        value: sum_ab / ab.len() as f64 + sum_ba / ba.len() as f64,
        selected_ab: sel_ab.iter().map(|s| (s.0, s.1)).collect(),
        selected_ba: sel_ba.iter().map(|s| (s.0, s.1)).collect(),
    }
}

/// Symmetric Chamfer distance (mean squared nearest-neighbour distance in
/// both directions).
pub fn chamfer(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(scd(a, b, 1.0)?.value)
}

pub fn chamfer_clouds(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer(&a.to_tensor(), &b.to_tensor())
}

/// Gradients of the selective Chamfer distance with respect to both sets,
/// holding the neighbour assignment and the lambda selection fixed.
pub fn scd_with_grads(a: &Tensor, b: &Tensor, lambda: f64) -> Result<(ScdResult, Tensor, Tensor)> {
    check_lambda(lambda)?;
    let (ab, ba) = nearest_both(a, b)?;
    let res = scd_from_neighbours(&ab, &ba, lambda);
    let d = a.cols();
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    let (na, nb) = (a.rows() as f64, b.rows() as f64);
    for &(i, j) in &res.selected_ab {
        for k in 0..d {
            let diff = 2.0 * (a.get(i, k) - b.get(j, k)) / na;
            ga.data_mut()[i * d + k] += diff;
            gb.data_mut()[j * d + k] -= diff;
        }
    }
    for &(j, i) in &res.selected_ba {
        for k in 0..d {
            let diff = 2.0 * (b.get(j, k) - a.get(i, k)) / nb;
            gb.data_mut()[j * d + k] += diff;
            ga.data_mut()[i * d + k] -= diff;
        }
    }
    Ok((res, ga, gb))
}

pub fn scd_grad(a: &Tensor, b: &Tensor, lambda: f64, wrt: ScdSide) -> Result<Tensor> {
    let (_, ga, gb) = scd_with_grads(a, b, lambda)?;
    Ok(match wrt {
        ScdSide::First => ga,
        ScdSide::Second => gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                [
                    5.0 + if i & 1 == 0 { -1.0 } else { 1.0 },
                    5.0 + if i & 2 == 0 { -1.0 } else { 1.0 },
                    5.0 + if i & 4 == 0 { -1.0 } else { 1.0 },
                ]
            })
            .collect();
        let n = PointCloud::new(corners).unwrap().normalize();
        assert!(n.centroid_of_points().iter().all(|c| c.abs() < 1e-9));
        assert!((n.max_norm() - 1.0).abs() < 1e-9);
        assert_eq!(n.centroid, [5.0, 5.0, 5.0]);

        let single = PointCloud::new(vec![[3.0, 4.0, 0.0]]).unwrap().normalize();
        assert_eq!(single.points(), &[[0.0, 0.0, 0.0]]);
        assert_eq!(single.scale, 1.0);

        let two = PointCloud::new(vec![[0.0; 3], [2.0, 0.0, 0.0]])
            .unwrap()
            .normalize();
        assert_eq!(two.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(two.scale, 1.0);
        assert_eq!(two.centroid, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new(vec![]).is_err());
    }

    #[test]
    fn min_sq_dist_examples() {
        let a = Tensor::from_rows(&[[0.1, 0.2, 0.3], [1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(min_sq_dists(&a, &a).unwrap(), vec![0.0, 0.0]);
        assert_eq!(min_sq_dists(&col(&[0.0]), &col(&[3.0, -1.0])).unwrap(), vec![1.0]);
        assert_eq!(
            min_sq_dists(&col(&[0.0, 10.0]), &col(&[0.0, 1.0])).unwrap(),
            vec![0.0, 81.0]
        );
        assert!(min_sq_dists(&Tensor::zeros(&[0, 3]), &a).is_err());
    }

    #[test]
    fn scd_examples() {
        let a = col(&[0.0, 10.0]);
        let b = col(&[0.0, 1.0]);
        assert_eq!(scd(&a, &b, 1.0).unwrap().value, 41.0);
        assert_eq!(scd(&a, &b, 0.5).unwrap().value, 0.0);
        assert_eq!(scd(&a, &a, 0.3).unwrap().value, 0.0);
        assert!(scd(&a, &b, 0.0).is_err());
        assert!(scd(&a, &b, 1.5).is_err());
        assert!(scd(&a, &Tensor::zeros(&[2, 2]), 1.0).is_err());
    }

    #[test]
    fn scd_selected_sizes_follow_keep_count() {
        let a = col(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let b = col(&[0.5, 7.0, 2.5]);
        let r = scd(&a, &b, 0.6).unwrap();
        assert_eq!(r.selected_ab.len(), keep_count(0.6, 5));
        assert_eq!(r.selected_ba.len(), keep_count(0.6, 3));
        assert_eq!(keep_count(0.6, 5), 3);
        assert_eq!(keep_count(0.01, 5), 1);
        assert_eq!(keep_count(0.96, 1024), 983);
    }

    #[test]
    fn scd_grad_examples() {
        let a = col(&[0.0]);
        let b = col(&[3.0]);
        assert_eq!(scd_grad(&a, &b, 1.0, ScdSide::First).unwrap().data(), &[-12.0]);
        assert_eq!(scd_grad(&a, &b, 1.0, ScdSide::Second).unwrap().data(), &[12.0]);
        let g = scd_grad(&b, &b, 0.7, ScdSide::First).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ties_break_by_index() {
        let a = col(&[0.0, 0.0, 5.0]);
        let b = col(&[1.0, -1.0]);
        let (ab, _) = nearest_both(&a, &b).unwrap();
        assert_eq!(ab[0].0, 0);
        let r = scd(&a, &b, 0.34).unwrap();
        assert_eq!(r.selected_ab, vec![(0, 0)]);
    }
}
