//! Datasets: synthetic generators, an IDX image loader, and seeded batching.
//!
//! All features live in `[0, 1]` per coordinate — attacks and training rely
//! on that range for clipping — and every generator is a pure function of
//! its arguments, so the same seed always reproduces the same dataset.

use crate::error::{invalid, Error, Result};
use crate::prng::{stream, Prng};
use crate::tensor::Tensor;
use byteorder::{BigEndian, ReadBytesExt};
use std::io::Read;
use std::path::Path;

/// A labelled classification dataset with features in `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Validates the invariants: `[n, d]` features inside `[0, 1]`, one
    /// label per row, labels below `num_classes`, at least one example and
    /// two classes.
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Dataset> {
        if features.rank() != 2 {
            return Err(invalid!(
                "dataset features must be [examples, features], got shape {:?}",
                features.shape()
            ));
        }
        let n = features.shape()[0];
        if n == 0 {
            return Err(invalid!("dataset must contain at least one example"));
        }
        if labels.len() != n {
            return Err(invalid!("{} labels for {n} examples", labels.len()));
        }
        if num_classes < 2 {
            return Err(invalid!(
                "dataset needs at least 2 classes, got {num_classes}"
            ));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(invalid!(
                "label {bad} out of range for {num_classes} classes"
            ));
        }
        if let Some(bad) = features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("feature value {bad} outside [0, 1]"));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(invalid!("subset of zero examples"));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid!("subset index {i} out of range for {}", self.len()));
            }
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            name: self.name.clone(),
            features: Tensor::from_parts(vec![indices.len(), d], data),
            labels,
            num_classes: self.num_classes,
        })
    }
}

/// Rescales every column of `data` (row-major, `n` rows) into `[0, 1]`.
/// Constant columns map to 0.5.
fn min_max_scale(data: &mut [f64], n: usize, d: usize) {
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            lo = lo.min(data[i * d + j]);
            hi = hi.max(data[i * d + j]);
        }
        let range = hi - lo;
        for i in 0..n {
            let v = &mut data[i * d + j];
            *v = if range > 0.0 { (*v - lo) / range } else { 0.5 };
        }
    }
}

/// Two interleaved half-circles with Gaussian coordinate noise, min-max
/// scaled into the unit square. Classes are balanced (`n/2` and `n - n/2`).
///
/// With `noise_std = 0` the points sit exactly on the two arcs and the seed
/// is never consumed, so the output is the same for every seed.
pub fn generate_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid!("two moons needs n >= 2, got {n}"));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(invalid!("noise scale must be >= 0, got {noise_std}"));
    }
    let n0 = n / 2;
    let n1 = n - n0;
    let arc = |i: usize, count: usize| -> f64 {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n0 {
        let t = arc(i, n0);
        data.push(t.cos());
        data.push(t.sin());
        labels.push(0);
    }
    for i in 0..n1 {
        let t = arc(i, n1);
        data.push(1.0 - t.cos());
        data.push(0.5 - t.sin());
        labels.push(1);
    }
    if noise_std > 0.0 {
        let mut rng = Prng::new(seed, &[stream::MOONS]);
        for v in &mut data {
            *v += noise_std * rng.normal();
        }
    }
    min_max_scale(&mut data, n, 2);
    Dataset::new("two-moons", Tensor::from_parts(vec![n, 2], data), labels, 2)
}

/// `classes` Gaussian clusters, one at each corner of the standard simplex
/// in `classes` dimensions, min-max scaled into the unit cube. Labels cycle
/// `0, 1, ..., classes-1`.
pub fn generate_blobs(n: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(invalid!("blobs need at least 2 classes, got {classes}"));
    }
    if n == 0 {
        return Err(invalid!("blobs need at least one example"));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(invalid!("spread must be >= 0, got {spread}"));
    }
    let d = classes;
    let mut data = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    let mut rng = Prng::new(seed, &[stream::BLOBS]);
    for i in 0..n {
        let label = i % classes;
        labels.push(label);
        for j in 0..d {
            let center = if j == label { 1.0 } else { 0.0 };
            let noise = if spread > 0.0 {
                spread * rng.normal()
            } else {
                0.0
            };
            data[i * d + j] = center + noise;
        }
    }
    min_max_scale(&mut data, n, d);
    Dataset::new(
        "blobs",
        Tensor::from_parts(vec![n, d], data),
        labels,
        classes,
    )
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_error(what: &str, path: &Path) -> Error {
    Error::Format(format!("{what} in IDX file {}", path.display()))
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    reader.read_u32::<BigEndian>().map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            idx_error("truncated payload", path)
        } else {
            Error::Io(e)
        }
    })
}

fn read_bytes(reader: &mut impl Read, count: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; count];
    reader.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            idx_error("truncated payload", path)
        } else {
            Error::Io(e)
        }
    })?;
    Ok(buf)
}

/// Loads an MNIST-style IDX image/label file pair.
///
/// Both files are big-endian: images carry magic `0x00000803` followed by
/// `n`, `rows`, `cols` and `n*rows*cols` unsigned bytes; labels carry magic
/// `0x00000801`, `n`, and `n` label bytes. Pixels are scaled into `[0, 1]`
/// by dividing by 255. Wrong magic numbers, short payloads, and image/label
/// count disagreements each produce their own error.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = read_u32(&mut images, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(
            &format!("wrong magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x})"),
            images_path,
        ));
    }
    let n = read_u32(&mut images, images_path)? as usize;
    let rows = read_u32(&mut images, images_path)? as usize;
    let cols = read_u32(&mut images, images_path)? as usize;
    let pixels = read_bytes(&mut images, n * rows * cols, images_path)?;

    let mut labels_file = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let magic = read_u32(&mut labels_file, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(
            &format!("wrong magic 0x{magic:08x} (expected 0x{IDX_LABELS_MAGIC:08x})"),
            labels_path,
        ));
    }
    let n_labels = read_u32(&mut labels_file, labels_path)? as usize;
    let label_bytes = read_bytes(&mut labels_file, n_labels, labels_path)?;

    if n != n_labels {
        return Err(Error::Format(format!(
            "count mismatch: {n} images in {} but {n_labels} labels in {}",
            images_path.display(),
            labels_path.display()
        )));
    }

    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(
        "idx",
        Tensor::from_parts(vec![n, rows * cols], features),
        labels,
        num_classes,
    )
}

/// One mini-batch: the original example indices plus materialized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub y: Vec<usize>,
}

/// Splits the dataset into mini-batches under a fresh Fisher-Yates
/// permutation keyed by `(seed, epoch)`. The final short batch is kept, so
/// the batches partition the dataset exactly.
pub fn shuffle_batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(invalid!("batch size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    Prng::new(seed, &[stream::SHUFFLE, epoch]).shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let part = dataset.subset(chunk)?;
            Ok(Batch {
                indices: chunk.to_vec(),
                x: part.features.clone(),
                y: part.labels,
            })
        })
        .collect()
}
