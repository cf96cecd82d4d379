//! Output directory bookkeeping: every file goes through [`OutputDir`],
//! which validates it after writing and records its SHA-256 in
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hhmc::io::{read_checkpoint, write_checkpoint};
use hhmc::Field;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// Present when the integration time was accepted despite failing its
    /// admissibility check.
    pub watermark: Option<String>,
    /// The configuration after overrides, exactly as used.
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
}

pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        // A manifest left by an earlier run would vouch for files this run
        // may not rewrite.
        let stale = root.join("manifest.json");
        if stale.exists() {
            fs::remove_file(&stale)?;
        }
        Ok(Self { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, name: &str, kind: &str) -> anyhow::Result<()> {
        let bytes = fs::read(self.path(name)).with_context(|| format!("reading back {name}"))?;
        let entry = FileEntry {
            path: name.to_string(),
            kind: kind.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        };
        self.files.insert(name.to_string(), entry);
        Ok(())
    }

    /// Writes pretty JSON, then checks that the file parses back into `T`
    /// and serialises to the same bytes.
    pub fn json<T: Serialize + DeserializeOwned>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(self.path(name), &text).with_context(|| format!("writing {name}"))?;
        let back: T = serde_json::from_str(&fs::read_to_string(self.path(name))?)
            .with_context(|| format!("{name} does not match its schema"))?;
        if serde_json::to_string_pretty(&back)? + "\n" != text {
            bail!("{name} does not round-trip through its schema");
        }
        self.record(name, "json")
    }

    /// Writes a numeric table. Every cell must be a finite number, or the
    /// literal `NaN` where a column has no value for a row.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(self.path(name)).with_context(|| format!("writing {name}"))?;
        w.write_record(header)?;
        for r in rows {
            if r.len() != header.len() {
                bail!("{name}: row has {} cells, header has {}", r.len(), header.len());
            }
            w.write_record(r.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        drop(w);
        self.check_csv(name, header.len(), rows.len())?;
        self.record(name, "csv")
    }

    /// Registers a CSV written by other code after checking its shape.
    pub fn adopt_csv(&mut self, name: &str, columns: usize, rows: usize) -> anyhow::Result<()> {
        self.check_csv(name, columns, rows)?;
        self.record(name, "csv")
    }

    fn check_csv(&self, name: &str, columns: usize, rows: usize) -> anyhow::Result<()> {
        let mut r = csv::Reader::from_path(self.path(name))?;
        if r.headers()?.len() != columns {
            bail!("{name}: expected {columns} columns");
        }
        let mut n = 0;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != columns {
                bail!("{name}: row {n} has {} cells", rec.len());
            }
            for cell in rec.iter() {
                let x: f64 = cell.parse().with_context(|| format!("{name}: `{cell}` is not a number"))?;
                if x.is_infinite() {
                    bail!("{name}: infinite value in row {n}");
                }
            }
            n += 1;
        }
        if n != rows {
            bail!("{name}: expected {rows} rows, found {n}");
        }
        Ok(())
    }

    pub fn checkpoint(&mut self, name: &str, states: &[Field]) -> anyhow::Result<()> {
        write_checkpoint(&self.path(name), states).with_context(|| format!("writing {name}"))?;
        let back = read_checkpoint(&self.path(name)).with_context(|| format!("reading back {name}"))?;
        if back != states {
            bail!("{name}: checkpoint does not read back to the written states");
        }
        self.record(name, "checkpoint")
    }

    /// Writes `manifest.json` listing every file in name order.
    pub fn finish(
        self,
        command: &str,
        seed: u64,
        watermark: Option<String>,
        config: serde_json::Value,
    ) -> anyhow::Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            seed,
            watermark,
            config,
            files: self.files.into_values().collect(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn csv_cells_must_match_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        assert!(out.csv("t.csv", &["a", "b"], &[vec![1.0]]).is_err());
        out.csv("u.csv", &["a"], &[vec![1.0], vec![f64::NAN]]).unwrap();
        let m = out.finish("x", 0, None, serde_json::Value::Null).unwrap();
        assert_eq!(m.files.len(), 1);
    }
}
