//! Append-only record store, run manifests and CSV output.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the JSON serialization of `config`.
pub fn config_hash<T: Serialize + ?Sized>(config: &T) -> Result<String> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(config)?)))
}

/// Git blob hash: SHA-1 of `"blob <len>\0" + content`.
pub fn blob_sha1(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: String,
    unit: String,
    value: serde_json::Value,
}

/// Completed units of work, keyed by unit id and scoped to one config hash.
/// Rerunning a harness with the same key skips units already present.
#[derive(Debug)]
pub struct RecordStore {
    path: Option<PathBuf>,
    key: String,
    entries: BTreeMap<String, serde_json::Value>,
}

impl RecordStore {
    pub fn in_memory(key: impl Into<String>) -> Self {
        Self {
            path: None,
            key: key.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Open (or create) a JSON-lines store. Lines from other keys are kept
    /// on disk but ignored; a torn final line is dropped.
    pub fn open(path: impl Into<PathBuf>, key: impl Into<String>) -> Result<Self> {
        let path = path.into();
        let key = key.into();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                match serde_json::from_str::<Line>(&line) {
                    Ok(l) if l.key == key => {
                        entries.insert(l.unit, l.value);
                    }
                    Ok(_) => {}
                    Err(e) => log::warn!("{}: skipping unreadable record: {e}", path.display()),
                }
            }
        } else if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(Self {
            path: Some(path),
            key,
            entries,
        })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.entries.contains_key(unit)
    }

    pub fn get<T: DeserializeOwned>(&self, unit: &str) -> Result<Option<T>> {
        self.entries
            .get(unit)
            .map(|v| serde_json::from_value(v.clone()).map_err(Error::from))
            .transpose()
    }

    pub fn put<T: Serialize>(&mut self, unit: &str, value: &T) -> Result<()> {
        let value = serde_json::to_value(value)?;
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&Line {
                key: self.key.clone(),
                unit: unit.to_string(),
                value: value.clone(),
            })?;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        self.entries.insert(unit.to_string(), value);
        Ok(())
    }

    /// Cached value for `unit`, computing and storing it when absent.
    pub fn get_or_put<T, F>(&mut self, unit: &str, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        if let Some(v) = self.get(unit)? {
            return Ok(v);
        }
        let v = compute()?;
        self.put(unit, &v)?;
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub blob_sha1: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

/// Write `config.json`, `seeds.json` and `manifest.json` into `dir`.
pub fn write_run_metadata<T: Serialize + ?Sized>(
    dir: &Path,
    experiment: &str,
    config: &T,
    seeds: &[u64],
    inputs: &[PathBuf],
    outputs: &[String],
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let inputs = inputs
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok(InputHash {
                path: p.display().to_string(),
                blob_sha1: blob_sha1(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        experiment: experiment.to_string(),
        config_sha256: config_hash(config)?,
        seeds: seeds.to_vec(),
        inputs,
        outputs: outputs.to_vec(),
    };
    write_json(&dir.join("config.json"), config)?;
    write_json(&dir.join("seeds.json"), &seeds)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        assert_eq!(blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
        assert_eq!(blob_sha1(b"hello world\n"), "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
    }

    #[test]
    fn store_survives_reopen_and_scopes_by_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut s = RecordStore::open(&path, "k1").unwrap();
        s.put("a", &1.5f64).unwrap();
        s.put("b", &vec![1u64, 2]).unwrap();
        let mut other = RecordStore::open(&path, "k2").unwrap();
        assert!(other.is_empty());
        other.put("a", &9.0f64).unwrap();
        let s = RecordStore::open(&path, "k1").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get::<f64>("a").unwrap(), Some(1.5));
        assert_eq!(s.get::<Vec<u64>>("b").unwrap(), Some(vec![1, 2]));
        assert_eq!(s.get::<f64>("c").unwrap(), None);
    }

    #[test]
    fn torn_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut s = RecordStore::open(&path, "k").unwrap();
        s.put("done", &1u8).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"key\":\"k\",\"unit\":\"half").unwrap();
        let s = RecordStore::open(&path, "k").unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn get_or_put_computes_once() {
        let mut s = RecordStore::in_memory("k");
        let mut calls = 0;
        for _ in 0..3 {
            let v: u32 = s
                .get_or_put("x", || {
                    calls += 1;
                    Ok(7)
                })
                .unwrap();
            assert_eq!(v, 7);
        }
        assert_eq!(calls, 1);
    }

    #[test]
    fn metadata_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        fs::write(&input, "a,b\n1,2\n").unwrap();
        let cfg = serde_json::json!({"x": 1, "y": [0.1, 0.2]});
        let out = dir.path().join("run");
        let m1 = write_run_metadata(&out, "demo", &cfg, &[1, 2], std::slice::from_ref(&input), &["r.csv".into()]).unwrap();
        let bytes1 = fs::read(out.join("manifest.json")).unwrap();
        let m2 = write_run_metadata(&out, "demo", &cfg, &[1, 2], &[input], &["r.csv".into()]).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(bytes1, fs::read(out.join("manifest.json")).unwrap());
        assert_eq!(m1.inputs[0].blob_sha1, blob_sha1(b"a,b\n1,2\n"));
        assert_eq!(m1.config_sha256.len(), 64);
    }
}
