//! Interchange directory: `manifest.json` plus headerless little-endian blobs.
//!
//! One directory holds one extraction run (one model, one context length).
//! Every blob is raw IEEE-754 in row-major order; shape and dtype live only
//! in the manifest entry that names it. Matrices are always handed to the
//! analysis as `f64`; `f32` blobs are widened exactly.

use std::collections::HashSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use attnspec_core::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("no manifest.json in {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("malformed manifest {}: {source}", path.display())]
    Malformed {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported format_version {found:?} (expected \"1\")")]
    Version { found: String },

    #[error("entry {entry}: {reason}")]
    InvalidEntry { entry: String, reason: String },

    #[error("duplicate entry {0}")]
    Duplicate(String),

    #[error("blob {file} is missing")]
    MissingBlob { file: String },

    #[error("blob {file} has {found} bytes, expected {expected}")]
    SizeMismatch { file: String, expected: u64, found: u64 },

    #[error("blob {file} holds a non-finite value at flat index {index}")]
    NonFinite { file: String, index: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TensorIoError {
    fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Query,
    Key,
    WeightQ,
    WeightK,
}

impl Kind {
    pub fn is_activation(self) -> bool {
        matches!(self, Kind::Query | Kind::Key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextInfo {
    pub text_id: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: Kind,
    pub layer: u32,
    pub query_head: u32,
    pub kv_head: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_id: Option<String>,
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    pub file: String,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> u64 {
        (self.rows * self.cols * self.dtype.width()) as u64
    }

    /// Human-readable label used in error messages.
    pub fn label(&self) -> String {
        let kind = serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(String::from));
        let kind = kind.unwrap_or_default();
        match &self.text_id {
            Some(t) => format!("{kind} L{} H{} text {t} ({})", self.layer, self.query_head, self.file),
            None => format!("{kind} L{} H{} ({})", self.layer, self.query_head, self.file),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub model_name: String,
    pub model_dim: usize,
    pub head_dim: usize,
    pub context_length: usize,
    pub texts: Vec<TextInfo>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn new(model_name: impl Into<String>, model_dim: usize, head_dim: usize, context_length: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            model_name: model_name.into(),
            model_dim,
            head_dim,
            context_length,
            texts: Vec::new(),
            entries: Vec::new(),
            root: PathBuf::new(),
        }
    }

    /// Directory the manifest was read from; blob paths resolve against it.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blob_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    fn validate_header(&self) -> Result<(), TensorIoError> {
        if self.format_version != FORMAT_VERSION {
            return Err(TensorIoError::Version { found: self.format_version.clone() });
        }
        for (name, value) in
            [("model_dim", self.model_dim), ("head_dim", self.head_dim), ("context_length", self.context_length)]
        {
            if value == 0 {
                return Err(TensorIoError::InvalidEntry {
                    entry: "manifest".into(),
                    reason: format!("{name} must be positive"),
                });
            }
        }
        Ok(())
    }

    fn validate_entry(&self, entry: &ManifestEntry, texts: &HashSet<&str>) -> Result<(), TensorIoError> {
        let invalid = |reason: String| TensorIoError::InvalidEntry { entry: entry.label(), reason };
        let (rows, cols) = if entry.kind.is_activation() {
            (self.context_length, self.head_dim)
        } else {
            (self.head_dim, self.model_dim)
        };
        if (entry.rows, entry.cols) != (rows, cols) {
            return Err(invalid(format!("shape {}x{}, expected {rows}x{cols}", entry.rows, entry.cols)));
        }
        match (&entry.text_id, entry.kind.is_activation()) {
            (None, true) => return Err(invalid("activation entry without text_id".into())),
            (Some(_), false) => return Err(invalid("weight entry must not carry text_id".into())),
            (Some(t), true) if !texts.contains(t.as_str()) => {
                return Err(invalid(format!("text_id {t:?} not listed in texts")))
            }
            _ => {}
        }
        let relative = Path::new(&entry.file);
        if entry.file.is_empty() || relative.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(invalid("file must be a relative path inside the directory".into()));
        }
        let path = self.blob_path(entry);
        let meta = match fs::metadata(&path) {
            Ok(m) => m,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(TensorIoError::MissingBlob { file: entry.file.clone() })
            }
            Err(e) => return Err(TensorIoError::io(path, e)),
        };
        if meta.len() != entry.byte_len() {
            return Err(TensorIoError::SizeMismatch {
                file: entry.file.clone(),
                expected: entry.byte_len(),
                found: meta.len(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), TensorIoError> {
        self.validate_header()?;
        let mut texts = HashSet::new();
        for t in &self.texts {
            if !texts.insert(t.text_id.as_str()) {
                return Err(TensorIoError::Duplicate(format!("text {}", t.text_id)));
            }
        }
        let mut seen = HashSet::new();
        for entry in &self.entries {
            self.validate_entry(entry, &texts)?;
            let key = (entry.layer, entry.query_head, entry.text_id.as_deref(), entry.kind);
            if !seen.insert(key) {
                return Err(TensorIoError::Duplicate(entry.label()));
            }
        }
        Ok(())
    }
}

/// Reads and fully validates `dir/manifest.json`, including blob sizes.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest, TensorIoError> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(TensorIoError::MissingManifest(dir.to_path_buf()))
        }
        Err(e) => return Err(TensorIoError::io(path, e)),
    };
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| TensorIoError::Malformed { path, source })?;
    manifest.root = dir.to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Loads one blob as an `f64` matrix.
pub fn read_matrix(manifest: &Manifest, entry: &ManifestEntry) -> Result<Matrix, TensorIoError> {
    let path = manifest.blob_path(entry);
    let bytes = fs::read(&path).map_err(|e| TensorIoError::io(&path, e))?;
    if bytes.len() as u64 != entry.byte_len() {
        return Err(TensorIoError::SizeMismatch {
            file: entry.file.clone(),
            expected: entry.byte_len(),
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = match entry.dtype {
        Dtype::F32 => {
            bytes.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4-byte chunk")))).collect()
        }
        Dtype::F64 => bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect(),
    };
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(TensorIoError::NonFinite { file: entry.file.clone(), index });
    }
    Ok(Matrix::new(entry.rows, entry.cols, values).expect("length and finiteness checked"))
}

/// Encodes a matrix as a headerless little-endian blob.
pub fn encode_blob(matrix: &Matrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(matrix.as_slice().len() * dtype.width());
    for &v in matrix.as_slice() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Writes `matrix` to `dir/entry.file`; the entry's shape must match.
pub fn write_blob(dir: &Path, entry: &ManifestEntry, matrix: &Matrix) -> Result<(), TensorIoError> {
    if matrix.shape() != (entry.rows, entry.cols) {
        return Err(TensorIoError::InvalidEntry {
            entry: entry.label(),
            reason: format!("matrix is {}x{}", matrix.rows(), matrix.cols()),
        });
    }
    let path = dir.join(&entry.file);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| TensorIoError::io(parent, e))?;
    }
    fs::write(&path, encode_blob(matrix, entry.dtype)).map_err(|e| TensorIoError::io(path, e))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), TensorIoError> {
    fs::create_dir_all(dir).map_err(|e| TensorIoError::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| TensorIoError::io(path, e))
}

/// Serializes `report` with lexicographically sorted keys and shortest
/// round-trip float formatting, so equal inputs give equal bytes.
pub fn canonical_json<T: Serialize>(report: &T) -> serde_json::Result<String> {
    // serde_json::Map is a BTreeMap unless `preserve_order` is enabled
    let value = serde_json::to_value(report)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_report<T: Serialize>(report: &T, path: &Path) -> Result<(), TensorIoError> {
    let text = canonical_json(report).map_err(|e| TensorIoError::io(path, std::io::Error::other(e)))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| TensorIoError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| TensorIoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn one_entry_dir(bytes: usize, version: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let manifest = json!({
            "format_version": version,
            "model_name": "toy",
            "model_dim": 128,
            "head_dim": 64,
            "context_length": 256,
            "texts": [{"text_id": "t0", "token_count": 256}],
            "entries": [{
                "kind": "query", "layer": 0, "query_head": 0, "kv_head": 0,
                "text_id": "t0", "rows": 256, "cols": 64, "dtype": "f64", "file": "q.bin"
            }]
        });
        fs::write(dir.path().join(MANIFEST_FILE), manifest.to_string()).unwrap();
        fs::write(dir.path().join("q.bin"), vec![0u8; bytes]).unwrap();
        dir
    }

    #[test]
    fn accepts_matching_blob() {
        let dir = one_entry_dir(256 * 64 * 8, "1");
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].byte_len(), 131_072);
        let q = read_matrix(&m, &m.entries[0]).unwrap();
        assert_eq!(q.shape(), (256, 64));
    }

    #[test]
    fn rejects_wrong_size_naming_file() {
        let dir = one_entry_dir(100, "1");
        let err = read_manifest(dir.path()).unwrap_err();
        assert!(matches!(&err, TensorIoError::SizeMismatch { file, .. } if file == "q.bin"));
        assert!(err.to_string().contains("q.bin"));
    }

    #[test]
    fn rejects_other_versions() {
        let dir = one_entry_dir(256 * 64 * 8, "2");
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::Version { found }) if found == "2"));
    }

    #[test]
    fn missing_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::MissingManifest(_))));
        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::Malformed { .. })));
    }

    fn tiny_manifest(dir: &Path, dtype: Dtype, values: &[f64]) -> Manifest {
        let mut m = Manifest::new("toy", 4, 2, 1);
        m.texts.push(TextInfo { text_id: "t".into(), token_count: 1 });
        let entry = ManifestEntry {
            kind: Kind::Query,
            layer: 0,
            query_head: 0,
            kv_head: 0,
            text_id: Some("t".into()),
            rows: 1,
            cols: 2,
            dtype,
            file: "x.bin".into(),
        };
        let bytes: Vec<u8> = match dtype {
            Dtype::F32 => values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
            Dtype::F64 => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        };
        fs::write(dir.join("x.bin"), bytes).unwrap();
        m.entries.push(entry);
        write_manifest(dir, &m).unwrap();
        read_manifest(dir).unwrap()
    }

    #[test]
    fn f32_promotion_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_manifest(dir.path(), Dtype::F32, &[1.0, 2.0]);
        assert_eq!(read_matrix(&m, &m.entries[0]).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn nan_reported_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_manifest(dir.path(), Dtype::F64, &[0.0, f64::NAN]);
        assert!(matches!(read_matrix(&m, &m.entries[0]), Err(TensorIoError::NonFinite { index: 1, .. })));
    }

    #[test]
    fn entry_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_manifest(dir.path(), Dtype::F64, &[0.0, 0.0]);
        m.entries[0].text_id = None;
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::InvalidEntry { .. })));

        m.entries[0].text_id = Some("t".into());
        m.entries.push(m.entries[0].clone());
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::Duplicate(_))));

        m.entries.truncate(1);
        m.entries[0].file = "../x.bin".into();
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::InvalidEntry { .. })));

        m.entries[0].file = "gone.bin".into();
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(TensorIoError::MissingBlob { .. })));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(Serialize)]
        struct R {
            zeta: f64,
            alpha: Vec<u8>,
        }
        let text = canonical_json(&R { zeta: 0.1 + 0.2, alpha: vec![] }).unwrap();
        assert!(text.find("alpha").unwrap() < text.find("zeta").unwrap());
        assert!(text.contains("0.30000000000000004"));
    }
}
