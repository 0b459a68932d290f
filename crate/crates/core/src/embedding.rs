//! Embedding matrices, the `TFB1` on-disk format, and dataset manifests.
//!
//! A `TFB1` file is laid out as (all integers and floats little-endian):
//!
//! ```text
//! bytes 0..4   magic "TFB1"
//! u32          rows
//! u32          d
//! f32 * rows*d row-major payload
//! id block     one UTF-8 id per row, each terminated by '\n'
//! ```
//!
//! Values are held as `f64` in memory. Every finite `f32` widens exactly, so
//! loading and re-saving an unmodified file reproduces it byte for byte.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::binio::{self, ByteReader};
use crate::error::{Error, Result};

pub const TFB_MAGIC: &[u8; 4] = b"TFB1";

/// Rows at or below this norm are treated as zero vectors.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Row-major matrix of feature vectors with one sample id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>, ids: Vec<String>) -> Result<Self> {
        if data.nrows() != ids.len() {
            return Err(Error::Data(format!(
                "{} rows but {} ids",
                data.nrows(),
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if id.contains('\n') {
                return Err(Error::Data(format!("sample id {id:?} contains a newline")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id `{id}`")));
            }
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value {v} in embedding")));
        }
        Ok(Self { data, ids })
    }

    /// Builds a matrix with ids `"{prefix}{row}"`.
    pub fn with_prefix(data: Array2<f64>, prefix: &str) -> Result<Self> {
        let ids = (0..data.nrows()).map(|i| format!("{prefix}{i}")).collect();
        Self::new(data, ids)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<String>) {
        (self.data, self.ids)
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let data = self.data.select(Axis(0), rows);
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        EmbeddingMatrix { data, ids }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub(crate) fn from_parts_unchecked(data: Array2<f64>, ids: Vec<String>) -> Self {
        debug_assert_eq!(data.nrows(), ids.len());
        Self { data, ids }
    }

    /// Largest deviation of any row norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.data
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_same_dim(&self, other: &EmbeddingMatrix, what: &str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: d={} vs d={}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(TFB_MAGIC);
        binio::put_u32(&mut out, binio::to_u32(self.rows(), "row count")?);
        binio::put_u32(&mut out, binio::to_u32(self.dim(), "dimension")?);
        binio::put_f32_block(&mut out, self.data.iter());
        binio::put_ids(&mut out, &self.ids);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(TFB_MAGIC)?;
        let rows = r.u32("row count")? as usize;
        let d = r.u32("dimension")? as usize;
        let payload_at = r.offset();
        let values = r.f32_block(rows * d, "embedding payload")?;
        let data = Array2::from_shape_vec((rows, d), values)
            .map_err(|e| Error::format(payload_at, e.to_string()))?;
        let ids_at = r.offset();
        let ids = r.id_block(rows)?;
        Self::new(data, ids).map_err(|e| Error::format(ids_at, e.to_string()))
    }
}

impl fmt::Display for EmbeddingMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingMatrix({} x {})", self.rows(), self.dim())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    EmbeddingMatrix::from_bytes(&binio::read_file(path)?)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &m.to_bytes()?)
}

/// Loads a file and canonicalizes it to unit rows.
pub fn load_normalized(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    l2_normalize(&load_embeddings(path)?)
}

/// Divides every row by its Euclidean norm.
pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = m.data.clone();
    for (i, mut row) in data.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm <= MIN_ROW_NORM {
            return Err(Error::ZeroNorm(m.ids[i].clone()));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(EmbeddingMatrix {
        data,
        ids: m.ids.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub split: Split,
    pub class_index: Option<usize>,
}

/// Sample ids with their split and optional ground truth, plus the ordered
/// class names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Ground-truth lookup by sample id.
    pub fn labels(&self) -> HashMap<&str, Option<usize>> {
        self.entries
            .iter()
            .map(|e| (e.sample_id.as_str(), e.class_index))
            .collect()
    }

    pub fn ids_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.sample_id.as_str())
    }

    /// Reads the record file (CSV with header `sample_id,split,class_index`)
    /// and the class-names file (one name per line).
    pub fn load(records: impl AsRef<Path>, class_names: impl AsRef<Path>) -> Result<Self> {
        let class_names = load_class_names(class_names)?;
        let path = records.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for rec in rdr.deserialize() {
            let entry: ManifestEntry = rec.map_err(|e| {
                let offset = e.position().map_or(0, |p| p.byte());
                Error::format(offset, format!("{}: {e}", path.display()))
            })?;
            entries.push(entry);
        }
        Ok(Self {
            entries,
            class_names,
        })
    }

    pub fn save(&self, records: impl AsRef<Path>, class_names: impl AsRef<Path>) -> Result<()> {
        let path = records.as_ref();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            wtr.serialize(e)
                .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        binio::write_file(path, &bytes)?;
        save_class_names(&self.class_names, class_names)
    }
}

pub fn load_class_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_owned())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn save_class_names(names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for n in names {
        text.push_str(n);
        text.push('\n');
    }
    binio::write_file(path.as_ref(), text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestIssue {
    UnresolvedId(String),
    DuplicateId(String),
    ClassOutOfRange { sample_id: String, class_index: usize },
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestIssue::UnresolvedId(id) => write!(f, "unresolved id `{id}`"),
            ManifestIssue::DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            ManifestIssue::ClassOutOfRange {
                sample_id,
                class_index,
            } => write!(
                f,
                "class index out of range: `{sample_id}` has class {class_index}"
            ),
        }
    }
}

/// Issues found by [`validate_manifest`]; empty means consistent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ManifestIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Checks manifest entries against one or more embedding matrices (e.g. the
/// train and test files of one dataset).
pub fn validate_manifest(man: &DatasetManifest, matrices: &[&EmbeddingMatrix]) -> ValidationReport {
    let known: HashSet<&str> = matrices
        .iter()
        .flat_map(|m| m.ids().iter().map(String::as_str))
        .collect();
    let c = man.num_classes();
    let mut seen = HashSet::new();
    let mut issues = Vec::new();
    for e in &man.entries {
        if !seen.insert(e.sample_id.as_str()) {
            issues.push(ManifestIssue::DuplicateId(e.sample_id.clone()));
        }
        if !known.contains(e.sample_id.as_str()) {
            issues.push(ManifestIssue::UnresolvedId(e.sample_id.clone()));
        }
        if let Some(ci) = e.class_index {
            if ci >= c {
                issues.push(ManifestIssue::ClassOutOfRange {
                    sample_id: e.sample_id.clone(),
                    class_index: ci,
                });
            }
        }
    }
    ValidationReport { issues }
}
