//! Synthetic embedding bundles with planted linear and nonlinear attribute
//! leakage and a toy item-preference task.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding_io::{AttributeLabels, EmbeddingSet};
use crate::error::{Error, Result};
use crate::linalg;

/// Largest allowed `|cos|` between planted directions.
pub const MAX_DIRECTION_COSINE: f64 = 0.3;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Class-dependent offset in a random 2-plane.
    Linear,
    /// Class set by the doubled angle of two coordinates; invisible to linear probes.
    QuadraticSign,
    /// Quadratic class plus a half-strength linear offset.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthAttribute {
    pub name: String,
    pub classes: usize,
    pub encoding: Encoding,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub attributes: Vec<SynthAttribute>,
    pub n_items: usize,
    /// Share of item energy placed in the span of the planted structures.
    pub task_correlation: f64,
    /// Norm of every item embedding; acts as an inverse temperature.
    pub item_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            d: 64,
            attributes: vec![SynthAttribute {
                name: "gender".into(),
                classes: 2,
                encoding: Encoding::Linear,
                strength: 1.0,
            }],
            n_items: 100,
            task_correlation: 0.3,
            item_scale: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 2 || self.n_items < 2 {
            return Err(Error::Config(format!(
                "synth needs N, d, I ≥ 2 (got {}, {}, {})",
                self.n, self.d, self.n_items
            )));
        }
        if !(0.0..=1.0).contains(&self.task_correlation) || self.item_scale.is_nan() || self.item_scale <= 0.0 {
            return Err(Error::Config(
                "synth task_correlation must lie in [0,1] and item_scale be positive".into(),
            ));
        }
        let pairs = self
            .attributes
            .iter()
            .filter(|a| a.encoding != Encoding::Linear)
            .count();
        if 2 * pairs > self.d {
            return Err(Error::Config(format!(
                "{pairs} quadratic attributes need {} coordinates",
                2 * pairs
            )));
        }
        for a in &self.attributes {
            if a.classes < 2 {
                return Err(Error::Config(format!(
                    "attribute `{}` needs at least 2 classes",
                    a.name
                )));
            }
            if !(0.0..=1.0).contains(&a.strength) {
                return Err(Error::Config(format!(
                    "attribute `{}` strength must lie in [0,1]",
                    a.name
                )));
            }
        }
        Ok(())
    }
}

/// Planted structure of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTruth {
    pub name: String,
    pub encoding: Encoding,
    /// Unit directions of the linear offset plane (`u`, then `v` when `m > 2`).
    pub directions: Vec<Vec<f64>>,
    /// Coordinate pair of the quadratic rule.
    pub pair: Option<(usize, usize)>,
}

/// Everything a test or report needs to know about a generated bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub attributes: Vec<AttributeTruth>,
    /// Item embeddings, one row per item.
    pub items: Vec<Vec<f64>>,
}

impl SynthTruth {
    pub fn item_matrix(&self) -> DMatrix<f64> {
        let d = self.config.d;
        DMatrix::from_fn(self.items.len(), d, |i, j| self.items[i][j])
    }
}

#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub set: EmbeddingSet,
    pub truth: SynthTruth,
}

fn gaussian_vector(d: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Unit vector orthogonal to `ortho` with `|cos| ≤ MAX_DIRECTION_COSINE`
/// against every vector in `avoid`.
fn sample_direction(
    d: usize,
    ortho: &[DVector<f64>],
    avoid: &[DVector<f64>],
    rng: &mut ChaCha20Rng,
) -> Result<DVector<f64>> {
    for _ in 0..MAX_REJECTIONS {
        let mut v = gaussian_vector(d, rng);
        for q in ortho {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let norm = v.norm();
        if norm < 1e-12 {
            continue;
        }
        v /= norm;
        if avoid.iter().all(|a| a.dot(&v).abs() <= MAX_DIRECTION_COSINE) {
            return Ok(v);
        }
    }
    Err(Error::Degenerate(format!(
        "could not place a direction with |cos| ≤ {MAX_DIRECTION_COSINE} in d={d}"
    )))
}

/// Planted structures, drawn before any sample so they depend only on the
/// seed and the attribute list.
pub fn ground_truth_directions(config: &SynthConfig) -> Result<Vec<AttributeTruth>> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    plant(config, &mut rng)
}

fn plant(config: &SynthConfig, rng: &mut ChaCha20Rng) -> Result<Vec<AttributeTruth>> {
    let d = config.d;
    let mut coords: Vec<usize> = (0..d).collect();
    coords.shuffle(rng);
    let mut free_coords = coords.into_iter();
    let mut planted: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::with_capacity(config.attributes.len());
    for attr in &config.attributes {
        let pair = match attr.encoding {
            Encoding::Linear => None,
            _ => {
                let i = free_coords.next().expect("validated coordinate budget");
                let j = free_coords.next().expect("validated coordinate budget");
                Some((i.min(j), i.max(j)))
            }
        };
        let mut directions = Vec::new();
        let u = sample_direction(d, &[], &planted, rng)?;
        directions.push(u.clone());
        if attr.classes > 2 {
            let v = sample_direction(d, std::slice::from_ref(&u), &planted, rng)?;
            directions.push(v);
        }
        planted.extend(directions.iter().cloned());
        out.push(AttributeTruth {
            name: attr.name.clone(),
            encoding: attr.encoding,
            directions: directions.iter().map(|v| v.iter().cloned().collect()).collect(),
            pair,
        });
    }
    Ok(out)
}

/// Class of `(x_i, x_j)` from the doubled polar angle split into `m` bins;
/// for `m = 2` this is the sign of `x_i·x_j`.
pub fn quadratic_class(xi: f64, xj: f64, m: usize) -> usize {
    let theta = xj.atan2(xi);
    let doubled = (2.0 * theta).rem_euclid(std::f64::consts::TAU);
    ((doubled / std::f64::consts::TAU * m as f64) as usize).min(m - 1)
}

/// Offset of class `c` among `m` points on a circle of radius `radius` in
/// the plane of `dirs` (a single direction gives `±radius` for `m = 2`).
fn class_offset(dirs: &[DVector<f64>], c: usize, m: usize, radius: f64) -> DVector<f64> {
    let angle = std::f64::consts::TAU * c as f64 / m as f64;
    let mut off = &dirs[0] * (radius * angle.cos());
    if let Some(v) = dirs.get(1) {
        off.axpy(radius * angle.sin(), v, 1.0);
    }
    off
}

/// Orthonormal basis (columns) of the span of `vectors`.
fn orthonormal_span(vectors: &[DVector<f64>], d: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let n = w.norm();
        if n > 1e-10 {
            basis.push(w / n);
        }
    }
    debug_assert!(basis.iter().all(|b| b.len() == d));
    basis
}

fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for q in basis {
        let c = q.dot(v);
        v.axpy(-c, q, 1.0);
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthBundle> {
    config.validate()?;
    let (n, d) = (config.n, config.d);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let truths = plant(config, &mut rng)?;
    let mut x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));

    let mut attributes = Vec::with_capacity(config.attributes.len());
    let mut sensitive: Vec<DVector<f64>> = Vec::new();
    for (attr, truth) in config.attributes.iter().zip(&truths) {
        let m = attr.classes;
        let dirs: Vec<DVector<f64>> = truth.directions.iter().map(|v| DVector::from_row_slice(v)).collect();
        let mut labels = Vec::with_capacity(n);
        for row in 0..n {
            let class = match truth.pair {
                None => rng.random_range(0..m),
                Some((i, j)) => {
                    if rng.random::<f64>() < attr.strength {
                        quadratic_class(x[(row, i)], x[(row, j)], m)
                    } else {
                        rng.random_range(0..m)
                    }
                }
            };
            let radius = match attr.encoding {
                Encoding::Linear => 2.0 * attr.strength,
                Encoding::QuadraticSign => 0.0,
                Encoding::Mixed => attr.strength,
            };
            if radius > 0.0 {
                let off = class_offset(&dirs, class, m, radius);
                for j in 0..d {
                    x[(row, j)] += off[j];
                }
            }
            labels.push(class as u32);
        }
        if attr.encoding != Encoding::QuadraticSign {
            sensitive.extend(dirs.iter().cloned());
        }
        if let Some((i, j)) = truth.pair {
            sensitive.push(DVector::from_fn(d, |k, _| (k == i) as u8 as f64));
            sensitive.push(DVector::from_fn(d, |k, _| (k == j) as u8 as f64));
        }
        attributes.push(AttributeLabels::new(attr.name.clone(), m, labels)?);
    }

    let basis = orthonormal_span(&sensitive, d);
    let rho = config.task_correlation;
    let mut items = DMatrix::zeros(config.n_items, d);
    for i in 0..config.n_items {
        let mut a = gaussian_vector(d, &mut rng);
        project_out(&mut a, &basis);
        a /= a.norm();
        let mut item = a * (1.0 - rho).sqrt();
        if !basis.is_empty() {
            let coeffs = gaussian_vector(basis.len(), &mut rng);
            let mut s = DVector::zeros(d);
            for (q, c) in basis.iter().zip(coeffs.iter()) {
                s.axpy(*c, q, 1.0);
            }
            s /= s.norm();
            item.axpy(rho.sqrt(), &s, 1.0);
        } else {
            item /= item.norm();
        }
        item *= config.item_scale;
        items.row_mut(i).copy_from(&item.transpose());
    }

    let scores = &x * items.transpose();
    let mut task = Vec::with_capacity(n);
    for row in 0..n {
        let mut p: Vec<f64> = scores.row(row).iter().cloned().collect();
        linalg::softmax_in_place(&mut p);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = p.len() - 1;
        for (k, &pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                pick = k;
                break;
            }
        }
        task.push(pick as u32);
    }

    let set = EmbeddingSet::from_matrix(&x, attributes, Some(task))?;
    let truth = SynthTruth {
        config: config.clone(),
        attributes: truths,
        items: (0..config.n_items)
            .map(|i| items.row(i).iter().cloned().collect())
            .collect(),
    };
    Ok(SynthBundle { set, truth })
}
