//! Dataset loaders (IDX, CIFAR binary), a synthetic colony-structured blob
//! generator, and the within-colony label-noise injector.
//!
//! Pixels are scaled to `[0, 1]` at load time and stored as `f32`, row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::taxonomy::{ClassId, SemanticPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<ClassId>,
    class_count: usize,
    split: Split,
    provenance: String,
    /// CIFAR-100 superclass byte of each record, when loaded from that format.
    coarse_labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Vec<ClassId>,
        class_count: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(i) = labels.iter().position(|y| y.0 >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {} of sample {i} outside [0, {class_count})",
                labels[i]
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature in sample {}",
                i / dim
            )));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            class_count,
            split,
            provenance: provenance.into(),
            coarse_labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn coarse_labels(&self) -> Option<&[u8]> {
        self.coarse_labels.as_deref()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// The same samples with replaced labels.
    pub fn with_labels(&self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: labels.len(),
            });
        }
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }

    /// First `n` samples (or all of them if `n` is larger).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let mut out = self.clone();
        out.features.truncate(n * self.dim);
        out.labels.truncate(n);
        if let Some(c) = out.coarse_labels.as_mut() {
            c.truncate(n);
        }
        out.provenance = format!("{} [first {n}]", self.provenance);
        out
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for y in &self.labels {
            h[y.0] += 1;
        }
        h
    }
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            format: "IDX",
            offset: bytes.len() as u64,
            message: format!("{what}: header truncated, needed {} bytes", offset + 4),
        })
}

/// Parses an IDX image file (`0x00000803`) and label file (`0x00000801`).
pub fn load_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let fmt_err = |offset: usize, message: String| Error::Format {
        format: "IDX",
        offset: offset as u64,
        message,
    };

    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt_err(
            0,
            format!("images: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if images.len() < expected {
        return Err(fmt_err(
            images.len(),
            format!("images: truncated payload, {count} images of {rows}x{cols} need {expected} bytes"),
        ));
    }
    if images.len() > expected {
        return Err(fmt_err(
            expected,
            format!("images: {} trailing bytes", images.len() - expected),
        ));
    }

    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt_err(
            0,
            format!("labels: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let label_count = be_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(fmt_err(
            4,
            format!("labels: count {label_count} does not match {count} images"),
        ));
    }
    let expected = 8 + count;
    if labels.len() != expected {
        return Err(fmt_err(
            labels.len().min(expected),
            format!("labels: payload is {} bytes, expected {expected}", labels.len()),
        ));
    }

    let mut ys = Vec::with_capacity(count);
    for (i, &b) in labels[8..].iter().enumerate() {
        if b as usize >= IDX_CLASSES {
            return Err(fmt_err(8 + i, format!("labels: label {b} outside [0, {IDX_CLASSES})")));
        }
        ys.push(ClassId(b as usize));
    }
    let features = images[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(
        features,
        dim,
        ys,
        IDX_CLASSES,
        Split::Train,
        format!("idx {count}x{rows}x{cols}"),
    )
}

/// Encodes a dataset as `(images, labels)` IDX payloads. Features are
/// quantized back to bytes; square images are assumed.
pub fn write_idx(ds: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let side = (ds.dim as f64).sqrt().round() as u32;
    let (rows, cols) = if (side * side) as usize == ds.dim {
        (side, side)
    } else {
        (1, ds.dim as u32)
    };
    let mut images = Vec::with_capacity(16 + ds.features.len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    images.extend_from_slice(&rows.to_be_bytes());
    images.extend_from_slice(&cols.to_be_bytes());
    images.extend(ds.features.iter().map(|&v| quantize(v)));
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|y| y.0 as u8));
    (images, labels)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::read_file(path, e))?;
    Ok(buf)
}

/// Loads `train-*-ubyte` or `t10k-*-ubyte` from a Fashion-MNIST directory.
pub fn load_idx_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = read_all(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read_all(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    let mut ds = load_idx(&images, &labels)?;
    ds.split = split;
    ds.provenance = format!("fashion-mnist {split} ({})", dir.display());
    Ok(ds)
}

// ---------------------------------------------------------------------------
// CIFAR
// ---------------------------------------------------------------------------

pub const CIFAR_PIXELS: usize = 3072;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + CIFAR_PIXELS,
            CifarVariant::Cifar100 => 2 + CIFAR_PIXELS,
        }
    }

    pub fn class_count(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar10",
            CifarVariant::Cifar100 => "cifar100",
        }
    }
}

/// Parses one or more CIFAR binary files. CIFAR-100 records carry
/// `coarse, fine`; the fine label is used and the coarse byte is retained.
pub fn load_cifar(files: &[&[u8]], variant: CifarVariant) -> Result<Dataset> {
    let rec = variant.record_len();
    let classes = variant.class_count();
    let total: usize = files.iter().map(|f| f.len() / rec).sum();
    let mut features = Vec::with_capacity(total * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(total);
    let mut coarse = Vec::new();

    for (fi, bytes) in files.iter().enumerate() {
        if bytes.is_empty() || bytes.len() % rec != 0 {
            return Err(Error::Format {
                format: "CIFAR",
                offset: (bytes.len() - bytes.len() % rec) as u64,
                message: format!(
                    "file #{fi}: length {} is not a positive multiple of the {rec}-byte {} record",
                    bytes.len(),
                    variant.name()
                ),
            });
        }
        for (r, record) in bytes.chunks_exact(rec).enumerate() {
            let base = r * rec;
            let (label, pixels) = match variant {
                CifarVariant::Cifar10 => (record[0], &record[1..]),
                CifarVariant::Cifar100 => {
                    if record[0] >= 20 {
                        return Err(Error::Format {
                            format: "CIFAR",
                            offset: base as u64,
                            message: format!("file #{fi}: coarse label {} outside [0, 20)", record[0]),
                        });
                    }
                    coarse.push(record[0]);
                    (record[1], &record[2..])
                }
            };
            if label as usize >= classes {
                let at = base + rec - CIFAR_PIXELS - 1;
                return Err(Error::Format {
                    format: "CIFAR",
                    offset: at as u64,
                    message: format!("file #{fi}: label {label} outside [0, {classes})"),
                });
            }
            labels.push(ClassId(label as usize));
            features.extend(pixels.iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    let mut ds = Dataset::new(features, CIFAR_PIXELS, labels, classes, Split::Train, "")?;
    ds.provenance = format!("{} {} records from {} file(s)", variant.name(), n, files.len());
    if variant == CifarVariant::Cifar100 {
        ds.provenance.push_str("; coarse labels retained");
        ds.coarse_labels = Some(coarse);
    }
    Ok(ds)
}

/// Encodes a 3072-feature dataset as one CIFAR binary file.
pub fn write_cifar(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if ds.dim != CIFAR_PIXELS {
        return Err(Error::DimensionMismatch {
            expected: CIFAR_PIXELS,
            actual: ds.dim,
        });
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for i in 0..ds.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(ds.coarse_labels.as_ref().map_or(0, |c| c[i]));
        }
        out.push(ds.labels[i].0 as u8);
        out.extend(ds.row(i).iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

/// Loads the standard binary distribution layout from `dir`:
/// `data_batch_{1..5}.bin` / `test_batch.bin` (CIFAR-10) or `train.bin` / `test.bin` (CIFAR-100).
pub fn load_cifar_dir(dir: impl AsRef<Path>, variant: CifarVariant, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let names: Vec<String> = match (variant, split) {
        (CifarVariant::Cifar10, Split::Train) => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        (CifarVariant::Cifar10, Split::Test) => vec!["test_batch.bin".into()],
        (CifarVariant::Cifar100, Split::Train) => vec!["train.bin".into()],
        (CifarVariant::Cifar100, Split::Test) => vec!["test.bin".into()],
    };
    let blobs = names
        .iter()
        .map(|n| read_all(&dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[u8]> = blobs.iter().map(Vec::as_slice).collect();
    let mut ds = load_cifar(&refs, variant)?;
    ds.split = split;
    ds.provenance = format!("{} {split} ({}); {}", variant.name(), dir.display(), ds.provenance);
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    /// Class indices of each colony; together they must partition `0..class_count`.
    pub colonies: Vec<Vec<usize>>,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    #[serde(default = "default_blob_std")]
    pub std_dev: f64,
}

fn default_blob_std() -> f64 {
    1.0
}

impl BlobSpec {
    /// `class_count` classes split into `colonies` contiguous groups of (nearly) equal size.
    pub fn balanced(class_count: usize, colonies: usize, per_class: usize, separation: f64) -> Self {
        let mut groups = vec![Vec::new(); colonies.max(1)];
        for c in 0..class_count {
            groups[c * colonies.max(1) / class_count.max(1)].push(c);
        }
        let max_group = groups.iter().map(Vec::len).max().unwrap_or(0);
        BlobSpec {
            colonies: groups,
            per_class,
            dim: colonies + max_group,
            separation,
            std_dev: 1.0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.colonies.iter().map(Vec::len).sum()
    }

    /// Smallest dimension that holds the colony and slot axes.
    pub fn min_dim(&self) -> usize {
        self.colonies.len() + self.colonies.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Mean of `class`: `separation · (2·e_colony + e_{K + slot})`, where `K` is
    /// the number of colonies and `slot` the class's position within its colony.
    /// Same-colony means sit `√2·sep` apart, cross-colony means at least `2√2·sep`.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (k, members) in self.colonies.iter().enumerate() {
            if let Some(slot) = members.iter().position(|&m| m == class) {
                mean[k] = 2.0 * self.separation;
                mean[self.colonies.len() + slot] = self.separation;
            }
        }
        mean
    }
}

/// Gaussian class clusters grouped by colony, plus the matching prior.
pub fn synth_blobs(spec: &BlobSpec, split: Split, rng: &mut SeededRng) -> Result<(Dataset, SemanticPrior)> {
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation {} must be >= 0",
            spec.separation
        )));
    }
    if spec.per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be positive".into()));
    }
    if spec.dim < spec.min_dim() {
        return Err(Error::InvalidArgument(format!(
            "dim {} too small for {} colonies of up to {} classes (need {})",
            spec.dim,
            spec.colonies.len(),
            spec.min_dim() - spec.colonies.len(),
            spec.min_dim()
        )));
    }
    let class_count = spec.class_count();
    let prior = SemanticPrior::new(
        class_count,
        None,
        spec.colonies
            .iter()
            .enumerate()
            .map(|(k, m)| (format!("colony{k}"), m.clone())),
    )?;

    let means: Vec<Vec<f64>> = (0..class_count).map(|c| spec.class_mean(c)).collect();
    let n = class_count * spec.per_class;
    let mut order: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    rng.shuffle(&mut order);
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for &c in &order {
        for &mu in &means[c] {
            features.push((mu + spec.std_dev * rng.standard_normal()) as f32);
        }
        labels.push(ClassId(c));
    }
    let provenance = format!(
        "synthetic blobs {split}: c={class_count}, colonies={}, per_class={}, dim={}, separation={}, seed={}",
        spec.colonies.len(),
        spec.per_class,
        spec.dim,
        spec.separation,
        rng.seed()
    );
    let ds = Dataset::new(features, spec.dim, labels, class_count, split, provenance)?;
    Ok((ds, prior))
}

// ---------------------------------------------------------------------------
// Label noise
// ---------------------------------------------------------------------------

/// Record of which training labels were replaced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseManifest {
    pub ratio: f64,
    pub corrupted_indices: Vec<usize>,
    pub original_labels: Vec<ClassId>,
    pub corrupted_labels: Vec<ClassId>,
}

impl NoiseManifest {
    pub const CSV_HEADER: [&'static str; 3] = ["index", "original", "corrupted"];

    pub fn len(&self) -> usize {
        self.corrupted_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrupted_indices.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for k in 0..self.len() {
            w.write_record([
                self.corrupted_indices[k].to_string(),
                self.original_labels[k].to_string(),
                self.corrupted_labels[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest written by [`write_csv`](Self::write_csv). The ratio is not stored in the CSV.
    pub fn read_csv<R: Read>(reader: R, ratio: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut m = NoiseManifest {
            ratio,
            ..Default::default()
        };
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad manifest row {:?}", rec)))
            };
            m.corrupted_indices.push(field(0)?);
            m.original_labels.push(ClassId(field(1)?));
            m.corrupted_labels.push(ClassId(field(2)?));
        }
        Ok(m)
    }
}

/// Half-away-from-zero rounding of `ratio · n`.
pub fn noise_quota(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

/// Replaces exactly `round(ratio · N)` training labels with a different class
/// from the same colony. Samples whose colony is a singleton are never selected.
pub fn inject_colony_noise(
    ds: &Dataset,
    prior: &SemanticPrior,
    ratio: f64,
    rng: &mut SeededRng,
) -> Result<(Dataset, NoiseManifest)> {
    if prior.class_count() != ds.class_count() {
        return Err(Error::InvalidArgument(format!(
            "prior has {} classes, dataset has {}",
            prior.class_count(),
            ds.class_count()
        )));
    }
    if ds.split() != Split::Train {
        return Err(Error::InvalidArgument(
            "label noise is only applied to training splits".into(),
        ));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("noise ratio {ratio} outside [0, 1)")));
    }
    let quota = noise_quota(ratio, ds.len());
    let mut eligible: Vec<usize> = (0..ds.len())
        .filter(|&i| prior.colony_of(ds.labels[i]).len() >= 2)
        .collect();
    if quota > eligible.len() {
        return Err(Error::InvalidArgument(format!(
            "noise quota {quota} exceeds the {} samples outside singleton colonies",
            eligible.len()
        )));
    }

    // Partial Fisher–Yates: the first `quota` slots are a uniform draw without replacement.
    for i in 0..quota {
        let j = i + rng.below_usize(eligible.len() - i);
        eligible.swap(i, j);
    }
    let mut chosen = eligible[..quota].to_vec();
    chosen.sort_unstable();

    let mut labels = ds.labels.clone();
    let mut manifest = NoiseManifest {
        ratio,
        ..Default::default()
    };
    for &i in &chosen {
        let original = labels[i];
        let members = prior.colony_of(original).members();
        let pos = members.binary_search(&original).expect("label is in its colony");
        let k = rng.below_usize(members.len() - 1);
        let replacement = members[if k >= pos { k + 1 } else { k }];
        assert!(replacement != original && prior.same_colony(replacement, original));
        labels[i] = replacement;
        manifest.corrupted_indices.push(i);
        manifest.original_labels.push(original);
        manifest.corrupted_labels.push(replacement);
    }
    let mut noisy = ds.with_labels(labels)?;
    noisy.provenance = format!("{} + colony noise {ratio} (seed {})", ds.provenance, rng.seed());
    Ok((noisy, manifest))
}
