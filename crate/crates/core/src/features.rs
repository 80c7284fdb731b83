//! Labeled feature matrices and the `FDMP` dump format.
//!
//! Layout (version 1, little-endian):
//!
//! ```text
//! "FDMP"            4 bytes
//! version           u8  (= 1)
//! flags             u8  (bit 0: spatial shape present)
//! name_len          u16, then name_len bytes of UTF-8 layer name
//! n_samples         u32
//! n_dims            u32
//! [c, h, w]         3 x u32, only when flag bit 0 is set
//! labels            n_samples x i32  (-1 = unlabeled / out-of-distribution)
//! data              n_samples * n_dims x f32, row-major
//! ```
//!
//! Values are widened to `f64` on read and narrowed back to `f32` on write, so
//! a set that was read from a dump round-trips bit-exactly.

use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"FDMP";
pub const DUMP_VERSION: u8 = 1;
const FLAG_SPATIAL: u8 = 0b1;

/// Label used for samples that carry no class.
pub const UNLABELED: i32 = -1;

/// Pre-flatten layout of a convolutional activation, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl SpatialShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        SpatialShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-sample feature vectors of one layer, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub layer_name: String,
    pub n_dims: usize,
    pub labels: Vec<i32>,
    pub data: Vec<f64>,
    pub spatial_shape: Option<SpatialShape>,
}

impl FeatureSet {
    pub fn new(
        layer_name: impl Into<String>,
        n_dims: usize,
        labels: Vec<i32>,
        data: Vec<f64>,
        spatial_shape: Option<SpatialShape>,
    ) -> Result<Self> {
        let fs = FeatureSet {
            layer_name: layer_name.into(),
            n_dims,
            labels,
            data,
            spatial_shape,
        };
        fs.validate()?;
        Ok(fs)
    }

    /// Builds a set from row vectors; every row must have the same length.
    pub fn from_rows(layer_name: impl Into<String>, rows: &[Vec<f64>], labels: Vec<i32>) -> Result<Self> {
        let n_dims = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_dims) {
            return Err(Error::InvalidFeatureSet(format!(
                "row {bad} has {} values, expected {n_dims}",
                rows[bad].len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(layer_name, n_dims, labels, data, None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dims == 0 {
            return Err(Error::InvalidFeatureSet("n_dims must be at least 1".into()));
        }
        if self.data.len() != self.labels.len() * self.n_dims {
            return Err(Error::InvalidFeatureSet(format!(
                "data has {} values, expected {} rows of {}",
                self.data.len(),
                self.labels.len(),
                self.n_dims
            )));
        }
        if let Some((index, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l < UNLABELED) {
            return Err(Error::LabelOutOfRange { index, label });
        }
        if let Some(shape) = self.spatial_shape {
            if shape.len() != self.n_dims {
                return Err(Error::InvalidFeatureSet(format!(
                    "spatial shape {}x{}x{} does not match n_dims {}",
                    shape.channels, shape.height, shape.width, self.n_dims
                )));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// `1 + max(non-negative label)`, or 0 when nothing is labeled.
    pub fn n_classes(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l >= 0)
            .max()
            .map_or(0, |&l| l as usize + 1)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_dims)
    }

    /// Rows carrying label `class`, in file order.
    pub fn class_rows(&self, class: usize) -> Vec<&[f64]> {
        self.rows()
            .zip(&self.labels)
            .filter(|(_, &l)| l >= 0 && l as usize == class)
            .map(|(r, _)| r)
            .collect()
    }

    /// Per-class sample counts for classes `0..n_classes()`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in self.labels.iter().filter(|&&l| l >= 0) {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Copy of the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let mut data = Vec::with_capacity(indices.len() * self.n_dims);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureSet {
            layer_name: self.layer_name.clone(),
            n_dims: self.n_dims,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            data,
            spatial_shape: self.spatial_shape,
        }
    }
}

fn encode_dump(fs: &FeatureSet) -> Result<Vec<u8>> {
    fs.validate()?;
    let name = fs.layer_name.as_bytes();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::InvalidFeatureSet("layer name longer than 65535 bytes".into()))?;
    let too_big = |what: &str| Error::InvalidFeatureSet(format!("{what} does not fit in u32"));
    let m = u32::try_from(fs.n_samples()).map_err(|_| too_big("n_samples"))?;
    let n = u32::try_from(fs.n_dims).map_err(|_| too_big("n_dims"))?;

    let mut buf = Vec::with_capacity(16 + name.len() + fs.labels.len() * 4 + fs.data.len() * 4);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.push(DUMP_VERSION);
    buf.push(if fs.spatial_shape.is_some() { FLAG_SPATIAL } else { 0 });
    buf.extend_from_slice(&name_len.to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    if let Some(s) = fs.spatial_shape {
        for v in [s.channels, s.height, s.width] {
            buf.extend_from_slice(&u32::try_from(v).map_err(|_| too_big("spatial shape"))?.to_le_bytes());
        }
    }
    for &l in &fs.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for &v in &fs.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

/// Writes `fs` as an `FDMP` file. Nothing is written if `fs` is invalid.
pub fn write_feature_dump(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dump(fs)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedFile(format!("while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Parses an `FDMP` stream. `available` bounds how many payload bytes the
/// caller can supply; a header promising more is rejected before allocation.
pub fn read_feature_dump_from<R: Read>(r: &mut R, available: Option<u64>) -> Result<FeatureSet> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, "magic")?;
    if &magic != DUMP_MAGIC {
        return Err(Error::BadMagic { expected: "FDMP" });
    }
    let mut vf = [0u8; 2];
    read_exact_or_truncated(r, &mut vf, "version")?;
    let (version, flags) = (vf[0], vf[1]);
    if version != DUMP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut len = [0u8; 2];
    read_exact_or_truncated(r, &mut len, "layer name length")?;
    let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact_or_truncated(r, &mut name, "layer name")?;
    let layer_name = String::from_utf8(name)
        .map_err(|_| Error::InvalidFeatureSet("layer name is not UTF-8".into()))?;

    let m = read_u32(r, "n_samples")? as usize;
    let n = read_u32(r, "n_dims")? as usize;
    let spatial_shape = if flags & FLAG_SPATIAL != 0 {
        let c = read_u32(r, "spatial channels")? as usize;
        let h = read_u32(r, "spatial height")? as usize;
        let w = read_u32(r, "spatial width")? as usize;
        Some(SpatialShape::new(c, h, w))
    } else {
        None
    };
    if m == 0 {
        return Err(Error::EmptySet);
    }

    let header_len = 4 + 2 + 2 + layer_name.len() as u64 + 8 + if spatial_shape.is_some() { 12 } else { 0 };
    let payload = (m as u64) * 4 + (m as u64) * (n as u64) * 4;
    if let Some(avail) = available {
        if header_len + payload > avail {
            return Err(Error::TruncatedFile(format!(
                "header promises {} bytes, file has {avail}",
                header_len + payload
            )));
        }
    }

    let mut raw = vec![0u8; m * 4];
    read_exact_or_truncated(r, &mut raw, "labels")?;
    let labels: Vec<i32> = raw
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l < UNLABELED) {
        return Err(Error::LabelOutOfRange { index, label });
    }

    let mut raw = vec![0u8; m * n * 4];
    read_exact_or_truncated(r, &mut raw, "feature data")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();

    FeatureSet::new(layer_name, n, labels, data, spatial_shape)
}

pub fn read_feature_dump(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let file = File::open(path)?;
    let size = file.metadata()?.len();
    read_feature_dump_from(&mut BufReader::new(file), Some(size))
}
