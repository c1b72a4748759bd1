use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{read_features, FeatureSequence, Modality};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub modality: Modality,
    pub text: String,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub features: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            records,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id {}", r.id)));
            }
            if r.modality == Modality::Speech && r.features.is_none() {
                return Err(Error::invalid(format!("speech record {} has no feature path", r.id)));
            }
        }
        Ok(())
    }

    pub fn feature_path(&self, r: &ManifestRecord) -> Option<PathBuf> {
        r.features.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Loads the feature file of a speech record, naming the utterance on failure.
    pub fn load_features(&self, r: &ManifestRecord) -> Result<FeatureSequence> {
        let path = self
            .feature_path(r)
            .ok_or_else(|| Error::invalid(format!("utterance {} has no features", r.id)))?;
        read_features(&path).map_err(|e| Error::invalid(format!("utterance {}: {e}", r.id)))
    }

    pub fn texts(&self) -> Vec<String> {
        self.records.iter().map(|r| r.text.clone()).collect()
    }

    pub fn to_tsv(&self) -> String {
        self.records
            .iter()
            .map(|r| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    r.id,
                    r.modality.as_str(),
                    r.text,
                    r.features.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
                )
            })
            .collect()
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 || cols.len() > 4 {
                return Err(Error::invalid(format!(
                    "manifest line {}: expected 3 or 4 tab-separated fields, got {}",
                    n + 1,
                    cols.len()
                )));
            }
            let modality = Modality::parse(cols[1]).ok_or_else(|| {
                Error::invalid(format!("manifest line {}: unknown modality {:?}", n + 1, cols[1]))
            })?;
            let features = cols.get(3).filter(|s| !s.is_empty()).map(PathBuf::from);
            records.push(ManifestRecord {
                id: cols[0].to_string(),
                modality,
                text: cols[2].to_string(),
                features,
            });
        }
        Self::new(records, base_dir)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads an adaptation text file: one sentence per line, blank lines skipped.
pub fn read_text_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
