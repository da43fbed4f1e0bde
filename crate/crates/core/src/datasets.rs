//! MNIST-family datasets stored as IDX files.
//!
//! Files live under a root directory as `<name>-<split>-images.idx` and
//! `<name>-<split>-labels.idx`. Pixels are kept as raw bytes and scaled by
//! `1/255` when rows are materialized, which keeps the 232k-sample KMNIST-49
//! split at ~180 MB instead of ~1.4 GB.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::Samples;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Mnist,
    Fmnist,
    Kmnist10,
    Femnist47,
    Kmnist49,
}

impl DatasetName {
    pub const ALL: [DatasetName; 5] = [
        DatasetName::Mnist,
        DatasetName::Fmnist,
        DatasetName::Kmnist10,
        DatasetName::Femnist47,
        DatasetName::Kmnist49,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fmnist",
            DatasetName::Kmnist10 => "kmnist10",
            DatasetName::Femnist47 => "femnist47",
            DatasetName::Kmnist49 => "kmnist49",
        }
    }

    pub fn num_categories(&self) -> usize {
        match self {
            DatasetName::Mnist | DatasetName::Fmnist | DatasetName::Kmnist10 => 10,
            DatasetName::Femnist47 => 47,
            DatasetName::Kmnist49 => 49,
        }
    }

    /// Published (train, test) sample counts.
    pub fn expected_sizes(&self) -> (usize, usize) {
        match self {
            DatasetName::Mnist | DatasetName::Fmnist | DatasetName::Kmnist10 => (60_000, 10_000),
            DatasetName::Femnist47 => (112_800, 18_800),
            DatasetName::Kmnist49 => (232_365, 38_547),
        }
    }

    /// Layer widths of the classifier trained on this dataset.
    pub fn architecture(&self) -> Vec<usize> {
        let c = self.num_categories();
        match self {
            DatasetName::Mnist => vec![PIXELS, 100, 100, c],
            DatasetName::Fmnist | DatasetName::Kmnist10 => vec![PIXELS, 512, c],
            DatasetName::Femnist47 | DatasetName::Kmnist49 => vec![PIXELS, 784, c],
        }
    }

    /// EMNIST images are stored transposed relative to MNIST.
    fn stored_transposed(&self) -> bool {
        matches!(self, DatasetName::Femnist47)
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub split: Split,
    pub root: PathBuf,
}

impl DatasetSpec {
    pub fn new(name: DatasetName, split: Split, root: impl Into<PathBuf>) -> Self {
        Self {
            name,
            split,
            root: root.into(),
        }
    }

    pub fn images_path(&self) -> PathBuf {
        self.root
            .join(format!("{}-{}-images.idx", self.name, self.split.as_str()))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.root
            .join(format!("{}-{}-labels.idx", self.name, self.split.as_str()))
    }
}

/// Decoded IDX image file; pixels are raw bytes, row-major per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    /// `count x rows*cols` matrix scaled to `[0, 1]`.
    pub fn scaled(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.count, self.rows * self.cols), |(i, j)| {
            self.pixels[i * self.rows * self.cols + j] as f64 / 255.0
        })
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32_be(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            field: format!("{field}: header truncated"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn payload(&self, expected: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() != expected {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                field: format!("payload: expected {expected} bytes, found {}", rest.len()),
            });
        }
        Ok(rest)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32_be("magic")?;
        if magic != expected {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                field: format!("magic: expected {expected:#010x}, found {magic:#010x}"),
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<RawImages> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32_be("count")? as usize;
    let rows = r.u32_be("rows")? as usize;
    let cols = r.u32_be("cols")? as usize;
    if rows * cols != PIXELS {
        return Err(Error::Format {
            path: path.to_path_buf(),
            field: format!("rows*cols: expected {PIXELS}, found {rows}x{cols}"),
        });
    }
    let pixels = r.payload(count * PIXELS)?.to_vec();
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32_be("count")? as usize;
    Ok(r.payload(count)?.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<RawImages> {
    parse_idx_images(path, &read_file(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(path, &read_file(path)?)
}

pub fn encode_idx_images(count: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * PIXELS);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub num_categories: usize,
    /// `len x 784` raw bytes.
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, num_categories: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::Consistency(format!(
                "{} pixel bytes for {} labels",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_categories) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {num_categories} categories"
            )));
        }
        Ok(Self {
            name: name.into(),
            num_categories,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[u8] {
        &self.pixels[index * PIXELS..(index + 1) * PIXELS]
    }

    /// Feature matrix (scaled to `[0, 1]`) and labels for the given rows.
    pub fn samples(&self, indices: &[usize]) -> Samples {
        let mut features = Array2::zeros((indices.len(), PIXELS));
        for (mut row, &i) in features.rows_mut().into_iter().zip(indices) {
            for (dst, &src) in row.iter_mut().zip(self.image(i)) {
                *dst = src as f64 / 255.0;
            }
        }
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        Samples { features, labels }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_categories];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// New dataset holding only the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            name: self.name.clone(),
            num_categories: self.num_categories,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn write_idx(&self, images: &Path, labels: &Path) -> Result<()> {
        fs::write(images, encode_idx_images(self.len(), &self.pixels)).map_err(|e| Error::io(images, e))?;
        fs::write(labels, encode_idx_labels(&self.labels)).map_err(|e| Error::io(labels, e))
    }
}

fn transpose_images(pixels: &mut [u8]) {
    for image in pixels.chunks_exact_mut(PIXELS) {
        for r in 0..IMAGE_SIDE {
            for c in (r + 1)..IMAGE_SIDE {
                image.swap(r * IMAGE_SIDE + c, c * IMAGE_SIDE + r);
            }
        }
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<LabeledDataset> {
    let mut images = load_idx_images(&spec.images_path())?;
    let labels = load_idx_labels(&spec.labels_path())?;
    if images.count != labels.len() {
        return Err(Error::Consistency(format!(
            "{}: {} images but {} labels",
            spec.name,
            images.count,
            labels.len()
        )));
    }
    if spec.name.stored_transposed() {
        transpose_images(&mut images.pixels);
    }
    LabeledDataset::new(
        spec.name.as_str(),
        spec.name.num_categories(),
        images.pixels,
        labels,
    )
}

/// Mean and population standard deviation of a class histogram.
pub fn histogram_moments(hist: &[usize]) -> (f64, f64) {
    let n = hist.len() as f64;
    let mean = hist.iter().sum::<usize>() as f64 / n;
    let var = hist.iter().map(|&h| (h as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
