//! Dataset construction and ingestion.
//!
//! Both builtin sources normalize features into `[-1, 1]`: the synthetic
//! two-Gaussian mixture through a fixed `x -> x/8` map (clipped), IDX images
//! through the `[0, 255] -> [-1, 1]` endpoint map after average pooling.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// How raw feature values were mapped into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// `x -> x / scale`, clipped to `[-1, 1]`; denormalize multiplies back.
    FixedScale { scale: f64 },
    /// `v -> v / 127.5 - 1` over the `[0, 255]` pixel range.
    PixelRange,
}

impl Normalization {
    pub fn normalize(&self, v: f64) -> f64 {
        match self {
            Normalization::FixedScale { scale } => (v / scale).clamp(-1.0, 1.0),
            Normalization::PixelRange => v / 127.5 - 1.0,
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        match self {
            Normalization::FixedScale { scale } => v * scale,
            Normalization::PixelRange => (v + 1.0) * 127.5,
        }
    }
}

/// Which part of a split this dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Valid,
    Test,
}

/// Immutable dataset: N x d features in `[-1, 1]`, optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub x: Tensor,
    pub y: Option<Vec<usize>>,
    pub norm: Normalization,
    pub split: SplitTag,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn num_classes(&self) -> usize {
        self.y
            .as_ref()
            .and_then(|y| y.iter().max().map(|&m| m + 1))
            .unwrap_or(0)
    }

    pub fn labels(&self) -> &[usize] {
        self.y.as_deref().unwrap_or(&[])
    }

    fn take(&self, idx: &[usize], split: SplitTag) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.gather_rows(idx),
            y: self
                .y
                .as_ref()
                .map(|y| idx.iter().map(|&i| y[i]).collect()),
            norm: self.norm,
            split,
        }
    }

    /// Seeded shuffle split into train/valid/test.
    pub fn split3(&self, frac_train: f64, frac_valid: f64, seed: u64) -> (Dataset, Dataset, Dataset) {
        let (tr, va, te) = split_indices(self.len(), frac_train, frac_valid, seed);
        (
            self.take(&tr, SplitTag::Train),
            self.take(&va, SplitTag::Valid),
            self.take(&te, SplitTag::Test),
        )
    }
}

/// Disjoint index sets covering `0..n`, shuffled with the given seed.
pub fn split_indices(
    n: usize,
    frac_train: f64,
    frac_valid: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((n as f64) * frac_train).round() as usize;
    let n_valid = ((n as f64) * frac_valid).round() as usize;
    let n_train = n_train.min(n);
    let n_valid = n_valid.min(n - n_train);
    let train = idx[..n_train].to_vec();
    let valid = idx[n_train..n_train + n_valid].to_vec();
    let test = idx[n_train + n_valid..].to_vec();
    (train, valid, test)
}

/// Mixture of two unit-variance Gaussians centered at (3, 3) and (-3, -3),
/// mapped into `[-1, 1]^2` by the fixed `x/8` map (centers land at ±0.375).
/// Label 0 is the (3, 3) component. Class-0 samples come first.
pub fn make_two_gaussians(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(Error::Config("n_per_class must be >= 1".into()));
    }
    let norm = Normalization::FixedScale { scale: 8.0 };
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(n_per_class * 4);
    let mut labels = Vec::with_capacity(n_per_class * 2);
    for (label, center) in [(0usize, 3.0f64), (1, -3.0)] {
        for _ in 0..n_per_class {
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            data.push(norm.normalize(center + n1));
            data.push(norm.normalize(center + n2));
            labels.push(label);
        }
    }
    Ok(Dataset {
        name: "two-gaussians".into(),
        x: Tensor::new(vec![n_per_class * 2, 2], data)?,
        y: Some(labels),
        norm,
        split: SplitTag::Full,
    })
}

/// Loads IDX image/label files, average-pools each image to
/// `downsample_to x downsample_to`, and maps pixels onto `[-1, 1]`.
pub fn load_idx_images(
    images_path: &Path,
    labels_path: &Path,
    limit: usize,
    downsample_to: usize,
) -> Result<Dataset> {
    let (pixels, count, rows, cols) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if limit > count {
        return Err(Error::IdxLimit {
            limit,
            available: count,
        });
    }
    if downsample_to == 0 || rows % downsample_to != 0 || cols % downsample_to != 0 {
        return Err(Error::Config(format!(
            "downsample_to {downsample_to} must divide image dims {rows}x{cols}"
        )));
    }
    let (bh, bw) = (rows / downsample_to, cols / downsample_to);
    let norm = Normalization::PixelRange;
    let dim = downsample_to * downsample_to;
    let mut data = Vec::with_capacity(limit * dim);
    for i in 0..limit {
        let img = &pixels[i * rows * cols..(i + 1) * rows * cols];
        for oy in 0..downsample_to {
            for ox in 0..downsample_to {
                let mut acc = 0.0;
                for dy in 0..bh {
                    for dx in 0..bw {
                        acc += img[(oy * bh + dy) * cols + ox * bw + dx] as f64;
                    }
                }
                data.push(norm.normalize(acc / (bh * bw) as f64));
            }
        }
    }
    Ok(Dataset {
        name: images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        x: Tensor::new(vec![limit, dim], data)?,
        y: Some(labels[..limit].to_vec()),
        norm,
        split: SplitTag::Full,
    })
}

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.display().to_string(),
            needed: at + 4,
            available: bytes.len(),
        })
}

fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            path: path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            path: path.display().to_string(),
            needed,
            available: bytes.len(),
        });
    }
    Ok((bytes[16..needed].to_vec(), count, rows, cols))
}

fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic {
            path: path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            path: path.display().to_string(),
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

/// Serializes `u8` images into IDX bytes; used for fixtures and subsets.
pub fn idx_image_bytes(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        debug_assert_eq!(img.len(), rows * cols);
        out.extend_from_slice(img);
    }
    out
}

/// Serializes labels into IDX bytes.
pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_gaussians_counts_and_range() {
        let d = make_two_gaussians(1, 9).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[0, 1]);
        let d = make_two_gaussians(100, 9).unwrap();
        assert!(d.x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn two_gaussians_is_seed_reproducible() {
        let a = make_two_gaussians(50, 123).unwrap();
        let b = make_two_gaussians(50, 123).unwrap();
        assert_eq!(a.x, b.x);
        let c = make_two_gaussians(50, 124).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn normalization_round_trip() {
        for norm in [Normalization::FixedScale { scale: 8.0 }, Normalization::PixelRange] {
            for v in [-7.9, -1.0, 0.0, 0.3, 6.5] {
                let rt = norm.denormalize(norm.normalize(v));
                assert!((rt - v).abs() < 1e-12, "{norm:?} {v}");
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let (tr, va, te) = split_indices(103, 0.6, 0.2, 5);
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }
}
