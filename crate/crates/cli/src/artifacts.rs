//! Output directory bookkeeping: every written file is hashed for the manifest.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use bloch_strip::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

/// Collects the files of one invocation.
#[derive(Debug)]
pub struct OutDir {
    pub root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&root)?;
        Ok(OutDir {
            root,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Marks `name` as produced by this run.
    pub fn record(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        if !self.written.contains(&p) {
            self.written.push(p.clone());
        }
        p
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.record(name);
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
        s.push('\n');
        std::fs::write(p, s)?;
        Ok(())
    }

    /// Header plus rows; every cell is already formatted.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.record(name);
        let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<FileRecord>> {
        self.written
            .iter()
            .map(|p| {
                Ok(FileRecord {
                    path: p
                        .strip_prefix(&self.root)
                        .unwrap_or(p)
                        .display()
                        .to_string(),
                    sha256: sha256_file(p)?,
                    bytes: std::fs::metadata(p)?.len(),
                })
            })
            .collect()
    }
}

pub fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Shortest round-trip text of a float; exponent form outside `[1e-5, 1e16)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
