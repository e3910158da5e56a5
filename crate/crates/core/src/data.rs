//! Labelled datasets, the `SPNGDAT1` file format and synthetic generators.
//!
//! ```text
//! magic        8 bytes "SPNGDAT1"
//! s            u32  sample count
//! d            u32  scalars per sample (c*h*w for images)
//! C            u32  class count
//! layout       u8   0 = flat vectors, 1 = images
//! c, h, w      3 x u32, present only when layout == 1
//! features     s*d x f32, row-major (images channel-major: [c][h][w])
//! labels       s x u16
//! ```
//!
//! All multi-byte fields are little-endian.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"SPNGDAT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() || features.batch() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "dataset needs s > 0 rows with one label each ({} rows, {} labels)",
                features.batch(),
                labels.len()
            )));
        }
        if features.shape().len() < 2 {
            return Err(Error::InvalidConfig("dataset features need a sample axis".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        Ok(Dataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.select_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let (x, y) = self.batch(rows);
        Dataset::new(x, y, self.classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Splits off a seeded random holdout of `n` samples: `(rest, holdout)`.
    pub fn split_holdout(&self, n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidConfig(format!(
                "holdout of {n} samples from a dataset of {}",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (hold, rest) = idx.split_at(n);
        let mut rest = rest.to_vec();
        let mut hold = hold.to_vec();
        rest.sort_unstable();
        hold.sort_unstable();
        Ok((self.subset(&rest)?, self.subset(&hold)?))
    }
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let shape = ds.sample_shape();
    let d: usize = shape.iter().product();
    let fit = |v: usize| {
        u32::try_from(v).map_err(|_| Error::format("dataset", format!("{v} does not fit in u32")))
    };
    if ds.classes > u16::MAX as usize + 1 {
        return Err(Error::format("dataset", "labels must fit in u16"));
    }
    let mut out = Vec::with_capacity(25 + ds.len() * (4 * d + 2));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&fit(ds.len())?.to_le_bytes());
    out.extend_from_slice(&fit(d)?.to_le_bytes());
    out.extend_from_slice(&fit(ds.classes)?.to_le_bytes());
    match shape.len() {
        1 => out.push(0),
        3 => {
            out.push(1);
            for &e in shape {
                out.extend_from_slice(&fit(e)?.to_le_bytes());
            }
        }
        r => return Err(Error::format("dataset", format!("unsupported sample rank {r}"))),
    }
    for &v in ds.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in &ds.labels {
        out.extend_from_slice(&(y as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let bad = |m: &str| Error::format("dataset", m.to_string());
    if bytes.len() < 21 || &bytes[..8] != DATASET_MAGIC {
        return Err(bad("bad magic, expected SPNGDAT1"));
    }
    let u32_at = |p: usize| -> Result<usize> {
        bytes
            .get(p..p + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| bad("truncated header"))
    };
    let s = u32_at(8)?;
    let d = u32_at(12)?;
    let classes = u32_at(16)?;
    let mut pos = 21;
    let sample_shape = match bytes[20] {
        0 => vec![d],
        1 => {
            let dims = vec![u32_at(21)?, u32_at(25)?, u32_at(29)?];
            pos += 12;
            if dims.iter().product::<usize>() != d {
                return Err(bad("image dimensions do not multiply to d"));
            }
            dims
        }
        f => return Err(Error::format("dataset", format!("unknown layout flag {f}"))),
    };
    let need = s
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(s * 2))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() - pos != need {
        return Err(Error::format(
            "dataset",
            format!("expected {need} payload bytes, found {}", bytes.len() - pos),
        ));
    }
    let features: Vec<f64> = bytes[pos..pos + s * d * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    pos += s * d * 4;
    let labels: Vec<usize> = bytes[pos..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let mut shape = vec![s];
    shape.extend(sample_shape);
    Dataset::new(Tensor::new(shape, features)?, labels, classes)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Blobs,
    Rings,
    TinyImages,
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub kind: GenKind,
    pub samples: usize,
    pub classes: usize,
    /// Feature count for `blobs` / `rings`.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Image geometry for `tiny-images`.
    #[serde(default = "default_image")]
    pub image: [usize; 3],
    /// Largest-to-smallest class size ratio; `tiny-images` only.
    #[serde(default = "one")]
    pub imbalance: f64,
    /// Standard deviation of additive pixel / feature noise.
    #[serde(default)]
    pub noise: Option<f64>,
    pub seed: u64,
}

fn default_dim() -> usize {
    2
}
fn default_image() -> [usize; 3] {
    [1, 16, 16]
}
fn one() -> f64 {
    1.0
}

impl GenSpec {
    pub fn new(kind: GenKind, samples: usize, classes: usize, seed: u64) -> Self {
        GenSpec {
            kind,
            samples,
            classes,
            dim: default_dim(),
            image: default_image(),
            imbalance: 1.0,
            noise: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.samples == 0 || self.classes == 0 {
            return fail("samples and classes must be positive".into());
        }
        if self.classes > self.samples {
            return fail(format!("{} classes need at least as many samples", self.classes));
        }
        if self.dim == 0 || self.image.contains(&0) {
            return fail("dimensions must be positive".into());
        }
        if self.kind == GenKind::Rings && self.dim < 2 {
            return fail("rings need dim >= 2".into());
        }
        if !(self.imbalance.is_finite() && self.imbalance >= 1.0) {
            return fail(format!("imbalance must be >= 1, got {}", self.imbalance));
        }
        if self.imbalance != 1.0 && self.kind != GenKind::TinyImages {
            return fail("imbalance is only supported for tiny-images".into());
        }
        if let Some(n) = self.noise {
            if !(n.is_finite() && n >= 0.0) {
                return fail(format!("noise must be non-negative, got {n}"));
            }
        }
        Ok(())
    }
}

/// Per-class sample counts. Balanced splits put the remainder on the lowest
/// classes. With imbalance r > 1, class k gets round(n_min · r^(k/(C−1)))
/// samples, so the total only approximates `samples`.
pub fn class_sizes(samples: usize, classes: usize, imbalance: f64) -> Vec<usize> {
    if imbalance == 1.0 || classes == 1 {
        let base = samples / classes;
        return (0..classes)
            .map(|k| base + usize::from(k < samples % classes))
            .collect();
    }
    let exps: Vec<f64> = (0..classes)
        .map(|k| imbalance.powf(k as f64 / (classes - 1) as f64))
        .collect();
    let n_min = ((samples as f64 / exps.iter().sum::<f64>()).round() as usize).max(1);
    exps.iter().map(|e| (n_min as f64 * e).round() as usize).collect()
}

/// Draws a synthetic dataset. Values are rounded through `f32` so the
/// in-memory dataset equals what its file reloads to.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sizes = class_sizes(spec.samples, spec.classes, spec.imbalance);
    let mut labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .collect();
    labels.shuffle(&mut rng);

    let (sample_shape, data) = match spec.kind {
        GenKind::Blobs => (vec![spec.dim], blobs(spec, &labels, &mut rng)),
        GenKind::Rings => (vec![spec.dim], rings(spec, &labels, &mut rng)),
        GenKind::TinyImages => (spec.image.to_vec(), gratings(spec, &labels, &mut rng)),
    };
    let data = data.into_iter().map(|v| v as f32 as f64).collect();
    let mut shape = vec![labels.len()];
    shape.extend(sample_shape);
    Dataset::new(Tensor::new(shape, data)?, labels, spec.classes)
}

fn blobs(spec: &GenSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let spread = Normal::new(0.0, 3.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| spread.sample(rng)).collect())
        .collect();
    let noise = Normal::new(0.0, spec.noise.unwrap_or(1.0)).unwrap();
    labels
        .iter()
        .flat_map(|&y| centers[y].iter().map(|c| c + noise.sample(rng)).collect::<Vec<_>>())
        .collect()
}

fn rings(spec: &GenSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, spec.noise.unwrap_or(0.1)).unwrap();
    let mut out = Vec::with_capacity(labels.len() * spec.dim);
    for &y in labels {
        let r = 1.0 + y as f64;
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        out.push(r * t.cos() + noise.sample(rng));
        out.push(r * t.sin() + noise.sample(rng));
        for _ in 2..spec.dim {
            out.push(noise.sample(rng));
        }
    }
    out
}

/// Oriented sinusoidal gratings in [0, 1]: class k has orientation πk/C,
/// with random frequency, phase and contrast plus Gaussian pixel noise.
fn gratings(spec: &GenSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let [c, h, w] = spec.image;
    let noise = Normal::new(0.0, spec.noise.unwrap_or(0.25)).unwrap();
    let mut out = Vec::with_capacity(labels.len() * c * h * w);
    for &y in labels {
        let theta = std::f64::consts::PI * y as f64 / spec.classes as f64;
        let freq: f64 = rng.random_range(0.6..1.2);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let contrast: f64 = rng.random_range(0.25..0.5);
        let (ct, st) = (theta.cos(), theta.sin());
        for _ in 0..c {
            for py in 0..h {
                for px in 0..w {
                    let u = px as f64 * ct + py as f64 * st;
                    let v = 0.5 + contrast * (freq * u + phase).sin() + noise.sample(rng);
                    out.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}
