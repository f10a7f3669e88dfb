//! Datasets: IDX (MNIST) and CIFAR-10 binary readers, a seeded synthetic
//! generator, and split/subset helpers.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{numel, Shape};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Calibration,
    Unsplit,
}

/// Images in `[0, 1]`, stored as `f32` to keep CIFAR-sized sets in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: Shape,
    pub classes: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(shape: Shape, classes: usize, images: Vec<f32>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.len() != labels.len() * numel(shape) {
            return Err(Error::InvalidArgument(format!(
                "{} pixel values for {} labels of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidClass {
                index: bad as usize,
                classes,
            });
        }
        Ok(Dataset {
            shape,
            classes,
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Vec<f64> {
        let n = numel(self.shape);
        self.images[i * n..(i + 1) * n].iter().map(|&v| f64::from(v)).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        let n = numel(self.shape);
        let mut images = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            images.extend_from_slice(&self.images[i * n..(i + 1) * n]);
        }
        Dataset {
            shape: self.shape,
            classes: self.classes,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split,
        }
    }

    /// First `len` items (or all, if fewer).
    pub fn take(&self, len: usize, split: Split) -> Dataset {
        let idx: Vec<usize> = (0..len.min(self.len())).collect();
        self.subset(&idx, split)
    }

    /// Order-preserving holdout: the first `⌊train_fraction·n⌋` items train, the rest test.
    pub fn split_holdout(&self, train_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::config("train_fraction", "must lie in [0, 1]"));
        }
        let cut = (train_fraction * self.len() as f64).floor() as usize;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&train, Split::Train), self.subset(&test, Split::Test)))
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.label(i) == class).collect()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            detail: "truncated header".into(),
        })
}

/// Directory of the MNIST subset shipped with the workspace.
pub fn bundled_mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Loads MNIST from a directory holding either the standard
/// `train-images-idx3-ubyte[.gz]` pair or the bundled `mnist10k-*` pair.
pub fn load_mnist_dir(dir: &Path) -> Result<Dataset> {
    let pairs = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
        ("mnist10k-images-idx3-ubyte.gz", "mnist10k-labels-idx1-ubyte.gz"),
    ];
    for (img, lbl) in pairs {
        let (i, l) = (dir.join(img), dir.join(lbl));
        if i.exists() && l.exists() {
            return load_idx(&i, &l);
        }
    }
    Err(Error::Idx {
        path: dir.to_path_buf(),
        detail: "no MNIST image/label pair found".into(),
    })
}

/// Train / test / calibration views of one labeled set.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// The first `calibration` training images.
    pub calibration: Dataset,
}

impl Splits {
    /// Holdout split at `train_fraction`, calibration drawn from the training part.
    pub fn holdout(data: &Dataset, train_fraction: f64, calibration: usize) -> Result<Self> {
        let (train, test) = data.split_holdout(train_fraction)?;
        let calibration = train.take(calibration, Split::Calibration);
        Ok(Splits { train, test, calibration })
    }

    /// The bundled MNIST subset as 80/20 with 500 calibration images.
    pub fn bundled_mnist() -> Result<Self> {
        Self::holdout(&load_mnist_dir(&bundled_mnist_dir())?, 0.8, 500)
    }
}

/// Reads an IDX image/label pair (optionally gzip-compressed). Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_maybe_gz(images_path)?;
    let lab = read_maybe_gz(labels_path)?;
    let idx_err = |path: &Path, detail: String| Error::Idx {
        path: path.to_path_buf(),
        detail,
    };

    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_err(images_path, format!("magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let need = 16 + count * rows * cols;
    if img.len() < need {
        return Err(idx_err(images_path, format!("truncated: {} bytes, need {need}", img.len())));
    }

    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_err(labels_path, format!("magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if label_count != count {
        return Err(idx_err(labels_path, format!("{label_count} labels for {count} images")));
    }
    if lab.len() < 8 + count {
        return Err(idx_err(labels_path, format!("truncated: {} bytes, need {}", lab.len(), 8 + count)));
    }
    let labels = lab[8..8 + count].to_vec();
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    let images = img[16..need].iter().map(|&b| f32::from(b) / 255.0).collect();
    Dataset::new([1, rows, cols], classes, images, labels, Split::Unsplit)
}

/// Writes an uncompressed IDX pair. Pixels are rounded to the nearest `k/255`.
pub fn write_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = data.shape;
    if c != 1 {
        return Err(Error::InvalidArgument("IDX images must be single-channel".into()));
    }
    let mut img = Vec::with_capacity(16 + data.images.len());
    for v in [IDX_IMAGES_MAGIC, data.len() as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(data.images.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend_from_slice(&data.labels);
    crate::report::write_atomic(images_path, &img)?;
    crate::report::write_atomic(labels_path, &lab)?;
    Ok(())
}

/// Reads CIFAR-10 binary batches (`<label byte><3072 pixel bytes>` records).
pub fn load_cifar10(paths: &[&Path]) -> Result<Dataset> {
    const RECORD: usize = 1 + 3 * 32 * 32;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_maybe_gz(path)?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::Idx {
                path: path.to_path_buf(),
                detail: format!("{} bytes is not a multiple of the {RECORD}-byte record", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            labels.push(rec[0]);
            images.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    Dataset::new([3, 32, 32], 10, images, labels, Split::Unsplit)
}

/// Gaussian-blob images: each class has a prototype made of two bumps, and
/// samples add pixel noise. Deterministic under `seed`.
pub fn synth_dataset(classes: usize, per_class: usize, shape: Shape, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if classes > 256 {
        return Err(Error::config("classes", "at most 256 classes"));
    }
    let [c, h, w] = shape;
    let n = numel(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64, usize)> = (0..2)
                .map(|_| {
                    (
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.15..0.3) * (h.max(w) as f64),
                        rng.random_range(0..c),
                    )
                })
                .collect();
            let mut img = vec![0.0f32; n];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let mut v = 0.0;
                        for &(cy, cx, s, bc) in &bumps {
                            let gain = if bc == ch { 1.0 } else { 0.35 };
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            v += gain * (-d2 / (2.0 * s * s)).exp();
                        }
                        img[(ch * h + y) * w + x] = v.min(1.0) as f32;
                    }
                }
            }
            img
        })
        .collect();
    let noise = Normal::new(0.0, 0.12).expect("valid sigma");
    let mut images = Vec::with_capacity(classes * per_class * n);
    let mut labels = Vec::with_capacity(classes * per_class);
    // interleave classes so prefixes stay balanced
    for _ in 0..per_class {
        for (class, proto) in prototypes.iter().enumerate() {
            images.extend(proto.iter().map(|&p| (p + noise.sample(&mut rng) as f32).clamp(0.0, 1.0)));
            labels.push(class as u8);
        }
    }
    Dataset::new(shape, classes, images, labels, Split::Unsplit)
}
