//! Stage artifacts on disk: directory layout, CSV tables and content
//! manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use liverfat_core::study::StudySplit;
use sha2::{Digest, Sha256};

pub const TRUTH_CSV: &str = "truth.csv";
pub const SPLITS_CSV: &str = "splits.csv";
pub const ATLAS_CSV: &str = "atlas.csv";
pub const CALIBRATION_TXT: &str = "calibration.txt";
pub const CV_PREDICTIONS_CSV: &str = "cv_predictions.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const MODEL_FILE: &str = "model.ffn";

pub fn subject_dir(cohort: &Path, id: &str) -> PathBuf {
    cohort.join("subjects").join(id)
}

pub fn input_pgm(work: &Path, id: &str) -> PathBuf {
    work.join("inputs").join(format!("{id}.pgm"))
}

pub fn fractions_rvf(work: &Path, id: &str) -> PathBuf {
    work.join("fractions").join(format!("{id}.rvf"))
}

/// Write `bytes` to `root/rel`, creating parent directories.
pub fn put(root: &Path, rel: &str, bytes: impl AsRef<[u8]>) -> Result<String> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(rel.to_string())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Sorted names of the entries of `dir` accepted by `keep`.
pub fn list_dir(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut names = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if keep(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// SHA-256 digests of files under one root, in `sha256sum` format.
#[derive(Debug)]
pub struct Manifest {
    root: PathBuf,
    files: Vec<String>,
}

impl Manifest {
    pub fn new(root: &Path) -> Self {
        Manifest {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn record(&mut self, rel: String) {
        self.files.push(rel);
    }

    pub fn put(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let rel = put(&self.root, rel, bytes)?;
        self.record(rel);
        Ok(())
    }

    pub fn write(mut self, name: &str) -> Result<()> {
        self.files.sort();
        self.files.dedup();
        let mut text = String::new();
        for rel in &self.files {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).with_context(|| format!("hashing {}", path.display()))?;
            text.push_str(&format!("{}  {rel}\n", hex::encode(Sha256::digest(&bytes))));
        }
        put(&self.root, name, text)?;
        Ok(())
    }
}

/// Header plus rows of a comma-separated file.
#[derive(Debug)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| anyhow!("{}: empty file", path.display()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                bail!("{}: row {} has {} fields, expected {}", path.display(), n + 2, row.len(), header.len());
            }
            rows.push(row);
        }
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: no column {name:?}", self.path.display()))
    }

    /// Numeric column keyed by the first column.
    pub fn column(&self, name: &str) -> Result<BTreeMap<String, f64>> {
        let i = self.index(name)?;
        let mut out = BTreeMap::new();
        for row in &self.rows {
            let v: f64 = row[i]
                .parse()
                .with_context(|| format!("{}: bad number {:?} for {}", self.path.display(), row[i], row[0]))?;
            if out.insert(row[0].clone(), v).is_some() {
                bail!("{}: duplicate subject {}", self.path.display(), row[0]);
            }
        }
        Ok(out)
    }
}

/// Read one numeric column of a subject table.
pub fn read_column(path: &Path, name: &str) -> Result<BTreeMap<String, f64>> {
    Table::read(path)?.column(name)
}

/// `subject_id,<name>` lines sorted by id.
pub fn series_csv(name: &str, values: &BTreeMap<String, f64>) -> String {
    let mut out = format!("subject_id,{name}\n");
    for (id, v) in values {
        out.push_str(&format!("{id},{v}\n"));
    }
    out
}

pub fn splits_csv(ids: &[String], split: &StudySplit) -> String {
    let mut out = String::from("subject_id,dataset,in_c\n");
    for id in ids {
        let dataset = if split.a.contains(id) {
            "A"
        } else if split.b.contains(id) {
            "B"
        } else {
            "none"
        };
        out.push_str(&format!("{id},{dataset},{}\n", u8::from(split.c.contains(id))));
    }
    out
}

pub fn read_splits(cohort: &Path) -> Result<StudySplit> {
    let table = Table::read(&cohort.join(SPLITS_CSV))?;
    let (d, c) = (table.index("dataset")?, table.index("in_c")?);
    let mut split = StudySplit {
        a: Vec::new(),
        b: Vec::new(),
        c: Vec::new(),
    };
    for row in &table.rows {
        match row[d].as_str() {
            "A" => split.a.push(row[0].clone()),
            "B" => split.b.push(row[0].clone()),
            "none" => {}
            other => bail!("{}: unknown dataset {other:?}", table.path.display()),
        }
        if row[c] == "1" {
            split.c.push(row[0].clone());
        }
    }
    split.a.sort();
    split.b.sort();
    split.c.sort();
    if split.c.iter().any(|id| split.b.binary_search(id).is_err()) {
        bail!("{}: subset C is not contained in B", table.path.display());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let split = StudySplit::new(&ids, 3, 3, 2, 5).unwrap();
        put(dir.path(), SPLITS_CSV, splits_csv(&ids, &split)).unwrap();
        assert_eq!(read_splits(dir.path()).unwrap(), split);
    }

    #[test]
    fn manifest_lists_sorted_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new(dir.path());
        m.put("b/x.txt", "hello").unwrap();
        m.put("a.txt", "").unwrap();
        m.write("manifest.sha256").unwrap();
        let text = fs::read_to_string(dir.path().join("manifest.sha256")).unwrap();
        assert_eq!(
            text,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a.txt\n\
             2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824  b/x.txt\n"
        );
    }

    #[test]
    fn table_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        put(dir.path(), "t.csv", "subject_id,v\na,1\nb,2,3\n").unwrap();
        assert!(Table::read(&dir.path().join("t.csv")).is_err());
        put(dir.path(), "u.csv", "subject_id,v\na,1\nb,x\n").unwrap();
        assert!(read_column(&dir.path().join("u.csv"), "v").is_err());
    }
}
