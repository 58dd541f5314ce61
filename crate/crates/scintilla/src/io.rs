//! Result persistence: atomic writes, CSV tables, JSON matrices, run
//! manifests and the coupling-set cache.

use crate::couplings::{CouplingProvenance, CouplingSet};
use crate::error::{Error, Result};
use crate::C64;
use ndarray::{ArrayD, ArrayViewD, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Fixed-format float for CSV bodies.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.12e}")
}

/// Plain numeric table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| fmt_f(*v))).map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn nested(a: ArrayViewD<'_, C64>) -> Value {
    if a.ndim() == 0 {
        let v = a.first().copied().unwrap_or_default();
        return json!([v.re, v.im]);
    }
    Value::Array(a.axis_iter(Axis(0)).map(nested).collect())
}

/// `{"dims": [...], "data": nested [re, im] pairs}`.
pub fn complex_json(a: ArrayViewD<'_, C64>) -> Value {
    json!({ "dims": a.shape(), "data": nested(a) })
}

/// Inverse of [`complex_json`].
pub fn complex_from_json(v: &Value) -> Result<ArrayD<C64>> {
    let bad = |m: &str| Error::Domain(format!("matrix JSON: {m}"));
    let dims: Vec<usize> = serde_json::from_value(v.get("dims").cloned().ok_or_else(|| bad("missing dims"))?)?;
    let mut flat = Vec::new();
    fn walk(v: &Value, depth: usize, out: &mut Vec<C64>) -> Option<()> {
        let arr = v.as_array()?;
        if depth == 0 {
            out.push(C64::new(arr.first()?.as_f64()?, arr.get(1)?.as_f64()?));
        } else {
            for x in arr {
                walk(x, depth - 1, out)?;
            }
        }
        Some(())
    }
    walk(v.get("data").ok_or_else(|| bad("missing data"))?, dims.len(), &mut flat).ok_or_else(|| bad("malformed data"))?;
    ArrayD::from_shape_vec(dims, flat).map_err(|e| bad(&e.to_string()))
}

/// One output file and its checksum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: String,
    pub config_sha256: String,
    pub code_version: String,
    pub master_seed: u64,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRecord>,
    /// Invariant checks that failed, fatal or not.
    pub violations: Vec<String>,
    /// Scalar results worth surfacing (crossing points, counts).
    pub summary: serde_json::Map<String, Value>,
}

/// Collects outputs for one run directory.
#[derive(Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub records: Vec<OutputRecord>,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(OutputDir { dir, records: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        self.records.retain(|r| r.file != name);
        self.records.push(OutputRecord {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn write_csv(&mut self, name: &str, table: &CsvTable) -> Result<PathBuf> {
        self.write(name, &table.render()?)
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

/// CouplingSet cache keyed by the SHA-256 of the provenance JSON.
#[derive(Debug, Clone)]
pub struct CouplingCache {
    pub dir: PathBuf,
}

impl CouplingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CouplingCache { dir })
    }

    pub fn key(prov: &CouplingProvenance) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(prov)?.as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("couplings-{key}.json"))
    }

    /// Cached set for this provenance; unreadable or mismatched entries are misses.
    pub fn load(&self, prov: &CouplingProvenance) -> Result<Option<CouplingSet>> {
        let p = self.path(&Self::key(prov)?);
        let Ok(text) = fs::read_to_string(&p) else {
            return Ok(None);
        };
        Ok(serde_json::from_str::<CouplingSet>(&text).ok().filter(|c| &c.provenance == prov))
    }

    pub fn store(&self, set: &CouplingSet) -> Result<PathBuf> {
        let p = self.path(&Self::key(&set.provenance)?);
        atomic_write(&p, serde_json::to_string(set)?.as_bytes())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn csv_is_fixed_format() {
        let mut t = CsvTable::new(["z", "v"]);
        t.push(vec![0.0, 1.0 / 3.0]);
        assert_eq!(t.render().unwrap(), b"z,v\n0.000000000000e0,3.333333333333e-1\n");
    }

    #[test]
    fn json_roundtrip() {
        let a = Array3::from_shape_fn((2, 3, 1), |(i, j, k)| C64::new(i as f64, (j + k) as f64 * 0.5)).into_dyn();
        let v = complex_json(a.view());
        assert_eq!(v["dims"], json!([2, 3, 1]));
        assert_eq!(complex_from_json(&v).unwrap(), a);
    }

    #[test]
    fn atomic_write_and_records() {
        let d = tempfile::tempdir().unwrap();
        let mut out = OutputDir::new(d.path().join("run")).unwrap();
        out.write("a.txt", b"one").unwrap();
        out.write("a.txt", b"two").unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].sha256, sha256_hex(b"two"));
        assert_eq!(fs::read(d.path().join("run/a.txt")).unwrap(), b"two");
        assert!(fs::read_dir(d.path().join("run")).unwrap().count() == 1);
    }
}
