//! Dataset manifest: a CSV with header
//! `subject_id,image,labels,side,split`. Paths resolve against `data_root`
//! unless absolute; `side` is left/right; `split` is train/test/analysis.

use std::path::{Path, PathBuf};

use cmt_core::morph::Side;
use cmt_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Analysis,
}

impl Split {
    pub fn parse(s: &str) -> Result<Split> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "analysis" => Ok(Split::Analysis),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub image: PathBuf,
    pub labels: PathBuf,
    pub side: Side,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path, data_root: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text, data_root)
    }

    pub fn from_text(text: &str, data_root: &Path) -> Result<Manifest> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty manifest".into()))?;
        let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
        if cols != ["subject_id", "image", "labels", "side", "split"] {
            return Err(Error::InvalidConfig(format!(
                "manifest header must be subject_id,image,labels,side,split; got {header:?}"
            )));
        }
        let resolve = |p: &str| -> PathBuf {
            let path = PathBuf::from(p);
            if path.is_absolute() {
                path
            } else {
                data_root.join(path)
            }
        };
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
            if fields.len() != 5 {
                return Err(Error::InvalidConfig(format!(
                    "manifest line {}: expected 5 fields",
                    lineno + 2
                )));
            }
            entries.push(ManifestEntry {
                subject_id: fields[0].to_string(),
                image: resolve(fields[1]),
                labels: resolve(fields[2]),
                side: Side::parse(fields[3])?,
                split: Split::parse(fields[4])?,
            });
        }
        let m = Manifest { entries };
        m.validate_ids()?;
        Ok(m)
    }

    fn validate_ids(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.subject_id.is_empty() {
                return Err(Error::InvalidConfig("empty subject_id".into()));
            }
            if !seen.insert(&e.subject_id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate subject_id {:?}",
                    e.subject_id
                )));
            }
        }
        Ok(())
    }

    /// Check that every referenced file exists.
    pub fn validate_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.image, &e.labels] {
                if !p.exists() {
                    return Err(Error::MissingInputs(format!(
                        "{}: {}",
                        e.subject_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}
