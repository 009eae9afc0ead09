//! Synthetic SAR-like image sets and their binary container.
//!
//! Each class is an oriented bright bar plus a point scatterer at a
//! class-specific bearing, jittered per image, multiplied by unit-mean
//! exponential speckle and clamped to `[0, 1]`.
//!
//! File layout (little-endian): magic `ARDS`, `u32` version (1), `u32`
//! count, `u32` classes, `u32` H, `u32` W, then per record a `u32` label
//! followed by `H·W` `f32` pixels.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::blob::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ARDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        classes: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            images,
            labels,
            classes,
            height,
            width,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Invalid(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        for (i, (img, &y)) in self.images.iter().zip(&self.labels).enumerate() {
            if img.shape() != [1, self.height, self.width] {
                return Err(Error::Invalid(format!("image {i} has shape {:?}", img.shape())));
            }
            if y >= self.classes {
                return Err(Error::Invalid(format!("label {y} of sample {i} ≥ {} classes", self.classes)));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!("sample {i} has pixels outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.shell()
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|i| self.images[*i].clone()).collect(),
            labels: indices.iter().map(|i| self.labels[*i]).collect(),
            ..self.shell()
        }
    }

    fn shell(&self) -> Dataset {
        Dataset {
            images: Vec::new(),
            labels: Vec::new(),
            classes: self.classes,
            height: self.height,
            width: self.width,
        }
    }

    /// Frequency of the most common label.
    pub fn majority_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.classes];
        for y in &self.labels {
            counts[*y] += 1;
        }
        *counts.iter().max().unwrap() as f64 / self.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.len() * (4 + 4 * self.height * self.width));
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.classes as u32, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (img, y) in self.images.iter().zip(&self.labels) {
            out.extend_from_slice(&(*y as u32).to_le_bytes());
            for p in img.data() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset file");
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("dataset file", format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let plane = height * width;
        let mut images = Vec::with_capacity(count.min(1 << 20));
        let mut labels = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            labels.push(r.u32()? as usize);
            let px = r
                .take(plane * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            images.push(Tensor::new(vec![1, height, width], px)?);
        }
        if !r.is_done() {
            return Err(Error::format("dataset file", "trailing bytes"));
        }
        Dataset::new(images, labels, classes, height, width)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn render(class: usize, classes: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let s = side as f32;
    let theta = PI * class as f32 / classes as f32 + rng.gen_range(-0.12..0.12);
    let (cx, cy) = (
        (s - 1.0) / 2.0 + rng.gen_range(-0.08..0.08) * s,
        (s - 1.0) / 2.0 + rng.gen_range(-0.08..0.08) * s,
    );
    let half_len = s * rng.gen_range(0.28..0.36);
    let sigma = (s / 14.0).max(0.6);
    let bearing = 2.0 * PI * class as f32 / classes as f32 + PI / 4.0;
    let (bx, by) = (cx + 0.3 * s * bearing.cos(), cy + 0.3 * s * bearing.sin());
    let blob_sigma = (s / 18.0).max(0.5);
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let mut px = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let along = dx * dir_x + dy * dir_y;
            let across = -dx * dir_y + dy * dir_x;
            let overshoot = (along.abs() - half_len).max(0.0);
            let bar = (-(across * across + overshoot * overshoot) / (2.0 * sigma * sigma)).exp();
            let (ex, ey) = (x as f32 - bx, y as f32 - by);
            let blob = (-(ex * ex + ey * ey) / (2.0 * blob_sigma * blob_sigma)).exp();
            let intensity = 0.12 + 0.6 * bar + 0.5 * blob;
            let speckle: f32 = rng.sample(Exp1);
            px.push((intensity * speckle).clamp(0.0, 1.0));
        }
    }
    px
}

/// Deterministic synthetic set of `classes × per_class` single-channel
/// `side×side` images. Samples are interleaved by class so every prefix is
/// close to balanced.
pub fn generate_synthetic(classes: usize, per_class: usize, side: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || side == 0 {
        return Err(Error::Invalid("classes and side must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for k in 0..classes {
            images.push(Tensor::new(vec![1, side, side], render(k, classes, side, &mut rng))?);
            labels.push(k);
        }
    }
    Dataset::new(images, labels, classes, side, side)
}
