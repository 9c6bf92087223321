//! Synthetic labelled corpus: eight parametric surface families sampled
//! uniformly by area, randomly posed about the vertical axis, normalised.
//!
//! Cloud `i` of family `f` depends only on `(seed, f, i)`, so growing
//! `per_class` never changes the clouds already generated.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::geometry::{load_cloud, save_cloud, PointCloud};
use crate::seeding::{derive_seed, rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Helix,
    TwoSphere,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 8] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
        ShapeFamily::Torus,
        ShapeFamily::Plane,
        ShapeFamily::Helix,
        ShapeFamily::TwoSphere,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Cone => "cone",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Plane => "plane",
            ShapeFamily::Helix => "helix",
            ShapeFamily::TwoSphere => "two-sphere",
        }
    }

    /// The first `count` families, in label order.
    pub fn first(count: usize) -> Result<&'static [ShapeFamily]> {
        if !(2..=8).contains(&count) {
            return Err(arg_err!("family count {count} outside 2..=8"));
        }
        Ok(&ShapeFamily::ALL[..count])
    }
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 1e-9 {
            return v.map(|c| c / r);
        }
    }
}

fn between(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Picks an index with probability proportional to `weights`.
fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Samples `n` surface points of one random instance of `family`, before
/// posing and normalisation.
fn raw_shape(family: ShapeFamily, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    match family {
        ShapeFamily::Sphere => {
            let ax = [between(rng, 0.85, 1.15), between(rng, 0.85, 1.15), between(rng, 0.85, 1.15)];
            (0..n)
                .map(|_| {
                    let u = unit(rng);
                    [u[0] * ax[0], u[1] * ax[1], u[2] * ax[2]]
                })
                .collect()
        }
        ShapeFamily::Box => {
            let e = [between(rng, 0.4, 1.0), between(rng, 0.4, 1.0), between(rng, 0.4, 1.0)];
            let areas = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
            (0..n)
                .map(|_| {
                    let axis = pick(rng, &areas);
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = between(rng, -e[k], e[k]);
                    }
                    p[axis] = if rng.random::<bool>() { e[axis] } else { -e[axis] };
                    p
                })
                .collect()
        }
        ShapeFamily::Cylinder => {
            let r = between(rng, 0.35, 0.7);
            let h = between(rng, 0.6, 1.2);
            let areas = [TAU * r * 2.0 * h, PI * r * r, PI * r * r];
            (0..n)
                .map(|_| {
                    let th = between(rng, 0.0, TAU);
                    match pick(rng, &areas) {
                        0 => [r * th.cos(), r * th.sin(), between(rng, -h, h)],
                        face => {
                            let rho = r * rng.random::<f64>().sqrt();
                            let z = if face == 1 { h } else { -h };
                            [rho * th.cos(), rho * th.sin(), z]
                        }
                    }
                })
                .collect()
        }
        ShapeFamily::Cone => {
            let r = between(rng, 0.5, 0.9);
            let h = between(rng, 1.0, 1.8);
            let slant = (r * r + h * h).sqrt();
            let areas = [PI * r * slant, PI * r * r];
            (0..n)
                .map(|_| {
                    let th = between(rng, 0.0, TAU);
                    if pick(rng, &areas) == 0 {
                        // radius grows linearly from apex; area density ∝ radius
                        let s = rng.random::<f64>().sqrt();
                        [s * r * th.cos(), s * r * th.sin(), h / 2.0 - s * h]
                    } else {
                        let rho = r * rng.random::<f64>().sqrt();
                        [rho * th.cos(), rho * th.sin(), -h / 2.0]
                    }
                })
                .collect()
        }
        ShapeFamily::Torus => {
            let big = between(rng, 0.7, 1.0);
            let small = between(rng, 0.18, 0.35);
            (0..n)
                .map(|_| {
                    let u = between(rng, 0.0, TAU);
                    let v = loop {
                        let v = between(rng, 0.0, TAU);
                        if rng.random::<f64>() * (big + small) <= big + small * v.cos() {
                            break v;
                        }
                    };
                    let ring = big + small * v.cos();
                    [ring * u.cos(), ring * u.sin(), small * v.sin()]
                })
                .collect()
        }
        ShapeFamily::Plane => {
            let a = between(rng, 0.6, 1.0);
            let b = between(rng, 0.6, 1.0);
            let tilt = between(rng, -0.5, 0.5);
            (0..n)
                .map(|_| {
                    let x = between(rng, -a, a);
                    let y = between(rng, -b, b);
                    [x, y * tilt.cos(), y * tilt.sin()]
                })
                .collect()
        }
        ShapeFamily::Helix => {
            let radius = between(rng, 0.5, 0.8);
            let turns = between(rng, 1.5, 3.0);
            let height = between(rng, 1.0, 1.6);
            let tube = between(rng, 0.06, 0.12);
            (0..n)
                .map(|_| {
                    let s = rng.random::<f64>();
                    let a = s * turns * TAU;
                    let c = [radius * a.cos(), radius * a.sin(), height * (s - 0.5)];
                    let off = unit(rng);
                    [c[0] + tube * off[0], c[1] + tube * off[1], c[2] + tube * off[2]]
                })
                .collect()
        }
        ShapeFamily::TwoSphere => {
            let r1 = between(rng, 0.35, 0.6);
            let r2 = between(rng, 0.35, 0.6);
            let gap = between(rng, 0.05, 0.4);
            let c1 = -(r1 + gap / 2.0);
            let c2 = r2 + gap / 2.0;
            let areas = [r1 * r1, r2 * r2];
            (0..n)
                .map(|_| {
                    let u = unit(rng);
                    if pick(rng, &areas) == 0 {
                        [c1 + r1 * u[0], r1 * u[1], r1 * u[2]]
                    } else {
                        [c2 + r2 * u[0], r2 * u[1], r2 * u[2]]
                    }
                })
                .collect()
        }
    }
}

/// One random instance of `family` with `n` points, yawed about z and
/// normalised to the unit ball.
pub fn sample_shape(family: ShapeFamily, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(arg_err!("shape needs at least one point"));
    }
    let pts = raw_shape(family, n, rng);
    let (s, c) = between(rng, 0.0, TAU).sin_cos();
    let posed = pts
        .into_iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
        .collect();
    Ok(PointCloud::new(posed)?.normalize())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub id: String,
    pub label: usize,
    pub cloud: PointCloud,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub families: usize,
    pub per_class: usize,
    pub points: usize,
    pub seed: u64,
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledCloud>> {
    let families = ShapeFamily::first(spec.families)?;
    let mut out = Vec::with_capacity(families.len() * spec.per_class);
    for (label, &fam) in families.iter().enumerate() {
        for i in 0..spec.per_class {
            let mut r = rng(derive_seed(spec.seed, &[label as u64, i as u64]));
            out.push(LabeledCloud {
                id: format!("{}-{i}", fam.name()),
                label,
                cloud: sample_shape(fam, spec.points, &mut r)?,
            });
        }
    }
    Ok(out)
}

/// Directory listing written next to the cloud files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub classes: Vec<String>,
    pub items: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub label: usize,
}

pub const INDEX_FILE: &str = "index.json";

impl CorpusIndex {
    pub fn of(items: &[LabeledCloud], classes: usize) -> Self {
        CorpusIndex {
            classes: ShapeFamily::ALL[..classes]
                .iter()
                .map(|f| f.name().to_string())
                .collect(),
            items: items
                .iter()
                .map(|c| IndexEntry {
                    id: c.id.clone(),
                    label: c.label,
                })
                .collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(INDEX_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}

pub fn cloud_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.dpc"))
}

/// Writes every cloud as `<id>.dpc` plus the index.
pub fn save_corpus(items: &[LabeledCloud], classes: usize, dir: &Path) -> Result<()> {
    for c in items {
        save_cloud(&c.cloud, &cloud_path(dir, &c.id))?;
    }
    CorpusIndex::of(items, classes).save(dir)
}

/// Reads a directory written by [`save_corpus`], in index order.
pub fn load_corpus(dir: &Path) -> Result<(CorpusIndex, Vec<LabeledCloud>)> {
    let index = CorpusIndex::load(dir)?;
    let items = index
        .items
        .iter()
        .map(|e| {
            Ok(LabeledCloud {
                id: e.id.clone(),
                label: e.label,
                cloud: load_cloud(&cloud_path(dir, &e.id))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, items))
}
