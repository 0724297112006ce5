//! Embedding sets, their on-disk formats, and the persisted artifacts of the
//! pipeline (projectors, RFF specs, adapter parameters).
//!
//! All binary formats are little-endian. Every reader validates the same
//! invariants the in-memory constructors do, so a file that loads is a file
//! the rest of the crate can trust.

mod adapter_file;
mod binary;
mod csv_format;
mod projector_file;
mod rff_file;
mod split;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use adapter_file::{load_adapter, read_adapter, save_adapter, write_adapter, ProjectorRef};
pub use binary::{read_embedding_set, write_embedding_set};
pub use csv_format::{read_embedding_csv, write_embedding_csv};
pub use projector_file::{load_projector, read_projector, save_projector, write_projector, ProjectorRecord};
pub use rff_file::{load_rff_spec, read_rff_spec, save_rff_spec, write_rff_spec};
pub use split::{split_dataset, split_indices};

/// On-disk encoding of an [`EmbeddingSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// Guess from the file extension: `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Class labels of one sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLabels {
    pub name: String,
    /// Declared class count `m`.
    pub classes: usize,
    pub labels: Vec<u32>,
}

impl AttributeLabels {
    pub fn new(name: impl Into<String>, classes: usize, labels: Vec<u32>) -> Result<Self> {
        let attr = AttributeLabels {
            name: name.into(),
            classes,
            labels,
        };
        attr.validate(attr.labels.len())?;
        Ok(attr)
    }

    fn validate(&self, n: usize) -> Result<()> {
        let fail = |reason: String| Error::Labels {
            attribute: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(fail("empty attribute name".into()));
        }
        if self.classes < 2 {
            return Err(fail(format!("class count {} < 2", self.classes)));
        }
        if self.labels.len() != n {
            return Err(fail(format!("{} labels for {} rows", self.labels.len(), n)));
        }
        if let Some((row, &bad)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= self.classes)
        {
            return Err(fail(format!("label {bad} in row {row} outside [0, {})", self.classes)));
        }
        Ok(())
    }

    /// Labels as `usize` class ids.
    pub fn as_classes(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }
}

/// `N` sequence-level representations of dimension `d`, with per-row
/// sensitive-attribute labels and optional task labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    /// Row-major `N×d`.
    data: Vec<f32>,
    attributes: Vec<AttributeLabels>,
    task_labels: Option<Vec<u32>>,
}

impl EmbeddingSet {
    pub fn new(
        n: usize,
        d: usize,
        data: Vec<f32>,
        attributes: Vec<AttributeLabels>,
        task_labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::format("embedding set", format!("empty shape N={n}, d={d}")));
        }
        if data.len() != n * d {
            return Err(Error::Dimension {
                expected: n * d,
                actual: data.len(),
                context: "embedding payload length",
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        for (i, attr) in attributes.iter().enumerate() {
            attr.validate(n)?;
            if attributes[..i].iter().any(|a| a.name == attr.name) {
                return Err(Error::Labels {
                    attribute: attr.name.clone(),
                    reason: "duplicate attribute name".into(),
                });
            }
        }
        if let Some(task) = &task_labels {
            if task.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: task.len(),
                    context: "task label count",
                });
            }
        }
        Ok(EmbeddingSet {
            n,
            d,
            data,
            attributes,
            task_labels,
        })
    }

    /// Build from an `f64` matrix (rows are samples), narrowing to `f32`.
    pub fn from_matrix(
        x: &DMatrix<f64>,
        attributes: Vec<AttributeLabels>,
        task_labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let (n, d) = x.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(x[(i, j)] as f32);
            }
        }
        EmbeddingSet::new(n, d, data, attributes, task_labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn attributes(&self) -> &[AttributeLabels] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Result<&AttributeLabels> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn task_labels(&self) -> Option<&[u32]> {
        self.task_labels.as_deref()
    }

    /// Upcast to an `N×d` float64 matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.d, |i, j| self.data[i * self.d + j] as f64)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<EmbeddingSet> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let attributes = self
            .attributes
            .iter()
            .map(|a| AttributeLabels {
                name: a.name.clone(),
                classes: a.classes,
                labels: indices.iter().map(|&i| a.labels[i]).collect(),
            })
            .collect();
        let task = self
            .task_labels
            .as_ref()
            .map(|t| indices.iter().map(|&i| t[i]).collect());
        EmbeddingSet::new(indices.len(), self.d, data, attributes, task)
    }

    /// Same labels, new embeddings (e.g. after projection).
    pub fn with_embeddings(&self, x: &DMatrix<f64>) -> Result<EmbeddingSet> {
        if x.nrows() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: x.nrows(),
                context: "replacement embedding rows",
            });
        }
        EmbeddingSet::from_matrix(x, self.attributes.clone(), self.task_labels.clone())
    }
}

pub fn load_embedding_set(path: &Path, format: Format) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        Format::Binary => read_embedding_set(reader),
        Format::Csv => read_embedding_csv(reader),
    }
}

pub fn save_embedding_set(set: &EmbeddingSet, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        Format::Binary => write_embedding_set(set, &mut writer)?,
        Format::Csv => write_embedding_csv(set, &mut writer)?,
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

// Shared little-endian primitives for the binary formats.

pub(crate) struct ByteReader<R> {
    inner: R,
    what: &'static str,
}

impl<R: std::io::Read> ByteReader<R> {
    pub(crate) fn new(inner: R, what: &'static str) -> Self {
        ByteReader { inner, what }
    }

    pub(crate) fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.what, format!("truncated: {e}")))?;
        Ok(buf)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(Error::format(self.what, format!("string length {len} too large")));
        }
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.what, format!("truncated string: {e}")))?;
        String::from_utf8(buf).map_err(|e| Error::format(self.what, format!("invalid UTF-8: {e}")))
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>()?;
        if &got != expected {
            return Err(Error::format(
                self.what,
                format!("bad magic {:?}, expected {:?}", got, expected),
            ));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u32) -> Result<()> {
        let v = self.u32()?;
        if v != supported {
            return Err(Error::format(self.what, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn f64_matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    /// Fails unless the stream is exhausted.
    pub(crate) fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format(self.what, "trailing bytes after payload")),
            Err(e) => Err(Error::format(self.what, e.to_string())),
        }
    }
}

pub(crate) struct ByteWriter<W> {
    inner: W,
    what: &'static str,
}

impl<W: Write> ByteWriter<W> {
    pub(crate) fn new(inner: W, what: &'static str) -> Self {
        ByteWriter { inner, what }
    }

    pub(crate) fn raw(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::format(self.what, format!("write failed: {e}")))
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.raw(&[v])
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    pub(crate) fn f32(&mut self, v: f32) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    pub(crate) fn string(&mut self, s: &str) -> Result<()> {
        self.u32(len_u32(s.len(), self.what)?)?;
        self.raw(s.as_bytes())
    }

    pub(crate) fn f64_matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)])?;
            }
        }
        Ok(())
    }
}

pub(crate) fn len_u32(len: usize, what: &'static str) -> Result<u32> {
    u32::try_from(len).map_err(|_| Error::format(what, format!("length {len} exceeds u32")))
}
