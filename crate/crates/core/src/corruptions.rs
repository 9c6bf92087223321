//! Seeded generators for fifteen point-cloud corruptions in three families.
//!
//! Every generator is a pure function of `(spec, cloud, table)`. Anchored
//! corruptions (`cut`, `den-d`) pick anchors one at a time from the points
//! still present, so removal counts are exact.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::geometry::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CorruptionKind {
    Uni,
    Gauss,
    Back,
    Impu,
    Ups,
    Rbf,
    RbfInv,
    DenDec,
    DenInc,
    Shear,
    Rot,
    Cut,
    Dist,
    Occ,
    Lidar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Noise,
    Deformation,
    Density,
}

impl CorruptionKind {
    /// Report column order.
    pub const ALL: [CorruptionKind; 15] = [
        CorruptionKind::Uni,
        CorruptionKind::Gauss,
        CorruptionKind::Back,
        CorruptionKind::Impu,
        CorruptionKind::Ups,
        CorruptionKind::Rbf,
        CorruptionKind::RbfInv,
        CorruptionKind::DenDec,
        CorruptionKind::DenInc,
        CorruptionKind::Shear,
        CorruptionKind::Rot,
        CorruptionKind::Cut,
        CorruptionKind::Dist,
        CorruptionKind::Occ,
        CorruptionKind::Lidar,
    ];

    pub fn name(self) -> &'static str {
        use CorruptionKind::*;
        match self {
            Uni => "uni",
            Gauss => "gauss",
            Back => "back",
            Impu => "impu",
            Ups => "ups",
            Rbf => "rbf",
            RbfInv => "rbf-i",
            DenDec => "den-d",
            DenInc => "den-i",
            Shear => "shear",
            Rot => "rot",
            Cut => "cut",
            Dist => "dist",
            Occ => "occ",
            Lidar => "lidar",
        }
    }

    pub fn family(self) -> Family {
        use CorruptionKind::*;
        match self {
            Uni | Gauss | Back | Impu | Ups => Family::Noise,
            Rbf | RbfInv | Shear | Rot | Dist => Family::Deformation,
            DenDec | DenInc | Cut | Occ | Lidar => Family::Density,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| arg_err!("unknown corruption kind {s:?}"))
    }
}

impl TryFrom<String> for CorruptionKind {
    type Error = crate::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CorruptionKind> for String {
    fn from(k: CorruptionKind) -> String {
        k.name().to_string()
    }
}

/// All fifteen kinds tagged by family.
pub fn corruption_catalog() -> Vec<(CorruptionKind, Family)> {
    CorruptionKind::ALL.iter().map(|&k| (k, k.family())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(arg_err!("severity {severity} outside 1..=5"));
        }
        Ok(CorruptionSpec {
            kind,
            severity,
            seed,
        })
    }

    /// Parses the kind by name.
    pub fn named(kind: &str, severity: u8, seed: u64) -> Result<Self> {
        CorruptionSpec::new(kind.parse()?, severity, seed)
    }
}

/// Per-severity magnitudes. Index `s - 1` holds severity `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    pub uni_half_width: [f64; 5],
    pub gauss_sigma: [f64; 5],
    pub back_fraction: [f64; 5],
    pub impu_fraction: [f64; 5],
    pub impu_offset: f64,
    pub ups_fraction: [f64; 5],
    pub ups_jitter: f64,
    pub rbf_centers: usize,
    pub rbf_width: f64,
    pub rbf_weight: [f64; 5],
    pub density_anchors: [usize; 5],
    pub density_neighbors: usize,
    pub den_dec_fraction: f64,
    pub den_inc_jitter: f64,
    pub shear: [f64; 5],
    pub rot_degrees: [f64; 5],
    pub cut_clusters: [usize; 5],
    pub cut_size: usize,
    pub dist_lattice: usize,
    pub dist_magnitude: [f64; 5],
    pub occ_fraction: [f64; 5],
    pub lidar_rings: [usize; 5],
    /// Angular half-width of each scan ring, radians.
    pub lidar_band: f64,
    pub lidar_jitter: f64,
}

impl Default for SeverityTable {
    fn default() -> Self {
        SeverityTable {
            uni_half_width: [0.01, 0.02, 0.03, 0.04, 0.05],
            gauss_sigma: [0.01, 0.015, 0.02, 0.025, 0.03],
            back_fraction: [0.02, 0.04, 0.06, 0.08, 0.10],
            impu_fraction: [0.01, 0.02, 0.03, 0.04, 0.05],
            impu_offset: 0.3,
            ups_fraction: [0.1, 0.2, 0.3, 0.4, 0.5],
            ups_jitter: 0.01,
            rbf_centers: 5,
            rbf_width: 0.5,
            rbf_weight: [0.02, 0.04, 0.06, 0.08, 0.10],
            density_anchors: [1, 2, 3, 4, 5],
            density_neighbors: 100,
            den_dec_fraction: 0.75,
            den_inc_jitter: 0.005,
            shear: [0.1, 0.2, 0.3, 0.4, 0.5],
            rot_degrees: [15.0, 30.0, 45.0, 60.0, 75.0],
            cut_clusters: [1, 2, 3, 4, 5],
            cut_size: 64,
            dist_lattice: 8,
            dist_magnitude: [0.02, 0.04, 0.06, 0.08, 0.10],
            occ_fraction: [0.1, 0.2, 0.3, 0.4, 0.5],
            lidar_rings: [32, 26, 20, 14, 8],
            lidar_band: 0.02,
            lidar_jitter: 0.005,
        }
    }
}

pub fn apply_corruption(spec: CorruptionSpec, cloud: &PointCloud) -> Result<PointCloud> {
    apply_corruption_with(spec, cloud, &SeverityTable::default())
}

pub fn apply_corruption_with(spec: CorruptionSpec, cloud: &PointCloud, table: &SeverityTable) -> Result<PointCloud> {
    if !(1..=5).contains(&spec.severity) {
        return Err(arg_err!("severity {} outside 1..=5", spec.severity));
    }
    let s = spec.severity as usize - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pts = cloud.points();
    use CorruptionKind::*;
    let out = match spec.kind {
        Uni => {
            let a = table.uni_half_width[s];
            let u = Uniform::new_inclusive(-a, a).expect("finite range");
            pts.iter()
                .map(|p| [p[0] + u.sample(&mut rng), p[1] + u.sample(&mut rng), p[2] + u.sample(&mut rng)])
                .collect()
        }
        Gauss => {
            let g = Normal::new(0.0, table.gauss_sigma[s]).expect("positive sigma");
            jitter_all(pts, &g, &mut rng)
        }
        Back => {
            let m = count_of(table.back_fraction[s], pts.len());
            let u = Uniform::new_inclusive(-1.0, 1.0).expect("finite range");
            let mut out = pts.to_vec();
            for i in sample(&mut rng, pts.len(), m) {
                out[i] = [u.sample(&mut rng), u.sample(&mut rng), u.sample(&mut rng)];
            }
            out
        }
        Impu => {
            let m = count_of(table.impu_fraction[s], pts.len());
            let a = table.impu_offset;
            let u = Uniform::new_inclusive(-a, a).expect("finite range");
            let mut out = pts.to_vec();
            for i in sample(&mut rng, pts.len(), m) {
                for v in &mut out[i] {
                    *v += u.sample(&mut rng);
                }
            }
            out
        }
        Ups => {
            let m = count_of(table.ups_fraction[s], pts.len());
            let g = Normal::new(0.0, table.ups_jitter).expect("positive sigma");
            let mut out = pts.to_vec();
            for _ in 0..m {
                let p = pts[rng.random_range(0..pts.len())];
                out.push(jitter(p, &g, &mut rng));
            }
            out
        }
        Rbf | RbfInv => radial_warp(pts, spec.kind == RbfInv, table, table.rbf_weight[s], &mut rng),
        DenDec => {
            let mut alive: Vec<usize> = (0..pts.len()).collect();
            for _ in 0..table.density_anchors[s] {
                if alive.len() <= 1 {
                    break;
                }
                let anchor = alive[rng.random_range(0..alive.len())];
                let hood = nearest_among(pts, &alive, pts[anchor], table.density_neighbors);
                let drop = ((hood.len() as f64) * table.den_dec_fraction).round() as usize;
                let drop = drop.min(alive.len() - 1);
                let chosen: Vec<usize> = sample(&mut rng, hood.len(), drop)
                    .into_iter()
                    .map(|k| hood[k])
                    .collect();
                alive.retain(|i| !chosen.contains(i));
            }
            alive.iter().map(|&i| pts[i]).collect()
        }
        DenInc => {
            let all: Vec<usize> = (0..pts.len()).collect();
            let g = Normal::new(0.0, table.den_inc_jitter).expect("positive sigma");
            let mut out = pts.to_vec();
            for _ in 0..table.density_anchors[s] {
                let anchor = rng.random_range(0..pts.len());
                for i in nearest_among(pts, &all, pts[anchor], table.density_neighbors) {
                    out.push(jitter(pts[i], &g, &mut rng));
                }
            }
            out
        }
        Shear => {
            let m = shear_matrix(table.shear[s], &mut rng);
            pts.iter().map(|p| mat_vec(&m, p)).collect()
        }
        Rot => {
            let deg = table.rot_degrees[s];
            if deg == 0.0 {
                return Ok(cloud.clone());
            }
            let axis = random_unit(&mut rng);
            let m = rotation(axis, deg.to_radians());
            pts.iter().map(|p| mat_vec(&m, p)).collect()
        }
        Cut => {
            let mut alive: Vec<usize> = (0..pts.len()).collect();
            for _ in 0..table.cut_clusters[s] {
                if alive.len() <= 1 {
                    break;
                }
                let anchor = alive[rng.random_range(0..alive.len())];
                let k = table.cut_size.min(alive.len() - 1);
                let hood = nearest_among(pts, &alive, pts[anchor], k);
                alive.retain(|i| !hood.contains(i));
            }
            alive.iter().map(|&i| pts[i]).collect()
        }
        Dist => lattice_warp(pts, table.dist_lattice, table.dist_magnitude[s], &mut rng),
        Occ => {
            let v = random_unit(&mut rng);
            let m = count_of(table.occ_fraction[s], pts.len()).min(pts.len() - 1);
            let mut order: Vec<usize> = (0..pts.len()).collect();
            let proj: Vec<f64> = pts.iter().map(|p| dot(p, &v)).collect();
            order.sort_by(|&a, &b| proj[b].total_cmp(&proj[a]).then(a.cmp(&b)));
            let mut removed = vec![false; pts.len()];
            for &i in &order[..m] {
                removed[i] = true;
            }
            (0..pts.len()).filter(|&i| !removed[i]).map(|i| pts[i]).collect()
        }
        Lidar => lidar_scan(pts, table.lidar_rings[s], table, &mut rng),
    };
    PointCloud::new(out)
}

fn count_of(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

fn jitter<D: Distribution<f64>>(p: [f64; 3], d: &D, rng: &mut ChaCha8Rng) -> [f64; 3] {
    [p[0] + d.sample(rng), p[1] + d.sample(rng), p[2] + d.sample(rng)]
}

fn jitter_all<D: Distribution<f64>>(pts: &[[f64; 3]], d: &D, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    pts.iter().map(|&p| jitter(p, d, rng)).collect()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, p: &[f64; 3]) -> [f64; 3] {
    [dot(&m[0], p), dot(&m[1], p), dot(&m[2], p)]
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = dot(&v, &v).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Rodrigues rotation about a unit axis.
pub(crate) fn rotation(axis: [f64; 3], angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Strictly upper-triangular shear with random signs, conjugated by a random
/// axis permutation; the determinant stays exactly one.
fn shear_matrix(magnitude: f64, rng: &mut ChaCha8Rng) -> Mat3 {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for (r, c) in [(0, 1), (0, 2), (1, 2)] {
        m[r][c] = if rng.random::<bool>() { magnitude } else { -magnitude };
    }
    let mut perm = [0usize, 1, 2];
    for i in (1..3).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[perm[r]][perm[c]] = m[r][c];
        }
    }
    out
}

/// Indices of the `k` points of `among` closest to `center`, ties by index.
fn nearest_among(pts: &[[f64; 3]], among: &[usize], center: [f64; 3], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = among.iter().map(|&i| (sq_dist(&pts[i], &center), i)).collect();
    let k = k.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

fn radial_warp(pts: &[[f64; 3]], inverse: bool, table: &SeverityTable, weight: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let centers: Vec<[f64; 3]> = (0..table.rbf_centers)
        .map(|_| pts[rng.random_range(0..pts.len())])
        .collect();
    let weights: Vec<[f64; 3]> = (0..table.rbf_centers)
        .map(|_| {
            let u = random_unit(rng);
            [u[0] * weight, u[1] * weight, u[2] * weight]
        })
        .collect();
    let w2 = table.rbf_width * table.rbf_width;
    pts.iter()
        .map(|p| {
            let mut q = *p;
            for (c, w) in centers.iter().zip(&weights) {
                let r2 = sq_dist(p, c);
                let phi = if inverse {
                    1.0 / (1.0 + r2 / w2).sqrt()
                } else {
                    (-r2 / (2.0 * w2)).exp()
                };
                for k in 0..3 {
                    q[k] += phi * w[k];
                }
            }
            q
        })
        .collect()
}

/// Displacements on a `g^3` lattice over `[-1, 1]^3`, trilinearly
/// interpolated; coordinates outside the cube use the boundary cell.
fn lattice_warp(pts: &[[f64; 3]], g: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let u = Uniform::new_inclusive(-magnitude, magnitude).expect("finite range");
    let nodes: Vec<[f64; 3]> = (0..g * g * g)
        .map(|_| [u.sample(rng), u.sample(rng), u.sample(rng)])
        .collect();
    let at = |i: usize, j: usize, k: usize| &nodes[(i * g + j) * g + k];
    let cell = |x: f64| {
        let s = ((x.clamp(-1.0, 1.0) + 1.0) / 2.0) * (g - 1) as f64;
        let i = (s.floor() as usize).min(g - 2);
        (i, s - i as f64)
    };
    pts.iter()
        .map(|p| {
            let (i, fx) = cell(p[0]);
            let (j, fy) = cell(p[1]);
            let (k, fz) = cell(p[2]);
            let mut q = *p;
            for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
                for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                    for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
                        let d = at(i + di, j + dj, k + dk);
                        let w = wx * wy * wz;
                        for c in 0..3 {
                            q[c] += w * d[c];
                        }
                    }
                }
            }
            q
        })
        .collect()
}

/// Keeps points whose elevation, seen from the origin in a randomly oriented
/// frame, lies within `lidar_band` of one of `rings` evenly spaced scan
/// rings, then jitters them. At least a handful of points always survive.
fn lidar_scan(pts: &[[f64; 3]], rings: usize, table: &SeverityTable, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let up = random_unit(rng);
    let spacing = std::f64::consts::PI / rings as f64;
    let offset: Vec<f64> = pts
        .iter()
        .map(|p| {
            let r = dot(p, p).sqrt();
            let elev = if r > 0.0 { (dot(p, &up) / r).clamp(-1.0, 1.0).asin() } else { 0.0 };
            let s = (elev + std::f64::consts::FRAC_PI_2) / spacing - 0.5;
            (s - s.round()).abs() * spacing
        })
        .collect();
    let mut kept: Vec<usize> = (0..pts.len()).filter(|&i| offset[i] <= table.lidar_band).collect();
    let min_keep = 16.min(pts.len());
    if kept.len() < min_keep {
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by(|&a, &b| offset[a].total_cmp(&offset[b]).then(a.cmp(&b)));
        kept = order[..min_keep].to_vec();
        kept.sort_unstable();
    }
    let g = Normal::new(0.0, table.lidar_jitter).expect("positive sigma");
    kept.into_iter().map(|i| jitter(pts[i], &g, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| random_unit(&mut rng)).collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn catalog_shape() {
        let cat = corruption_catalog();
        assert_eq!(cat.len(), 15);
        assert!(cat.contains(&(CorruptionKind::Back, Family::Noise)));
        assert!(cat.contains(&(CorruptionKind::Shear, Family::Deformation)));
        for fam in [Family::Noise, Family::Deformation, Family::Density] {
            assert_eq!(cat.iter().filter(|(_, f)| *f == fam).count(), 5);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!(matches!("fog".parse::<CorruptionKind>(), Err(crate::Error::Argument(_))));
        assert!(CorruptionSpec::named("uni", 0, 1).is_err());
        assert!(CorruptionSpec::named("uni", 6, 1).is_err());
    }

    #[test]
    fn point_counts_follow_tables() {
        let c = sphere(1024, 3);
        for sev in 1..=5u8 {
            for k in CorruptionKind::ALL {
                let out = apply_corruption(CorruptionSpec::new(k, sev, 9).unwrap(), &c).unwrap();
                let n = out.len();
                match k {
                    CorruptionKind::Ups => assert_eq!(n, 1024 + count_of(0.1 * sev as f64, 1024)),
                    CorruptionKind::DenInc => assert_eq!(n, 1024 + 100 * sev as usize),
                    CorruptionKind::DenDec => assert_eq!(n, 1024 - 75 * sev as usize),
                    CorruptionKind::Cut => assert_eq!(n, 1024 - 64 * sev as usize),
                    CorruptionKind::Occ => assert_eq!(n, 1024 - count_of(0.1 * sev as f64, 1024)),
                    CorruptionKind::Lidar => assert!(n < 1024 && n >= 16, "{n}"),
                    _ => assert_eq!(n, 1024, "{k}"),
                }
            }
        }
    }

    #[test]
    fn cut_two_clusters_leaves_896() {
        let c = sphere(1024, 1);
        let out = apply_corruption(CorruptionSpec::named("cut", 2, 5).unwrap(), &c).unwrap();
        assert_eq!(out.len(), 896);
    }

    #[test]
    fn lidar_thins_with_fewer_rings() {
        let c = sphere(2048, 2);
        let n: Vec<usize> = (1..=5u8)
            .map(|s| apply_corruption(CorruptionSpec::named("lidar", s, 4).unwrap(), &c).unwrap().len())
            .collect();
        assert!(n.windows(2).all(|w| w[0] > w[1]), "{n:?}");
    }

    #[test]
    fn zero_angle_rotation_is_identity() {
        let c = sphere(64, 8);
        let mut table = SeverityTable::default();
        table.rot_degrees[2] = 0.0;
        let out = apply_corruption_with(CorruptionSpec::named("rot", 3, 1).unwrap(), &c, &table).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn rotation_preserves_distances_and_shear_volume() {
        let c = sphere(128, 4);
        for sev in 1..=5 {
            let r = apply_corruption(CorruptionSpec::named("rot", sev, 11).unwrap(), &c).unwrap();
            for (i, j) in [(0, 1), (5, 77), (100, 127)] {
                let before = sq_dist(&c.points()[i], &c.points()[j]).sqrt();
                let after = sq_dist(&r.points()[i], &r.points()[j]).sqrt();
                assert!((before - after).abs() < 1e-9);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sev as u64);
            let m = shear_matrix(0.1 * sev as f64, &mut rng);
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let c = sphere(256, 6);
        for k in CorruptionKind::ALL {
            let spec = CorruptionSpec::new(k, 3, 42).unwrap();
            assert_eq!(apply_corruption(spec, &c).unwrap(), apply_corruption(spec, &c).unwrap());
        }
    }

    #[test]
    fn gauss_stays_within_five_sigma_of_unit_ball() {
        let c = sphere(256, 0);
        let sigma = SeverityTable::default().gauss_sigma[2];
        for seed in 0..1000 {
            let out = apply_corruption(CorruptionSpec::named("gauss", 3, seed).unwrap(), &c).unwrap();
            assert!(out.max_norm() <= 1.0 + 5.0 * sigma);
        }
    }
}
