//! Dataset manifests.
//!
//! ```toml
//! dim = 64
//! classes = 2
//!
//! [[dataset]]
//! language = "de"
//! domain = "books"
//! split = "train"
//! embeddings = "de_books_train.ufde"
//! labels = "de_books_train.labels"
//! ```
//!
//! Relative paths resolve against the manifest's directory. `labels` is
//! required for every split except `unlabeled`, where it is forbidden.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Split};
use crate::data::io::{read_embeddings, read_labels};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub language: String,
    pub domain: String,
    pub split: Split,
    pub embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub dim: usize,
    pub classes: usize,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<ManifestEntry>,
}

impl ManifestFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// Every dataset of a manifest, loaded and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dim: usize,
    pub classes: usize,
    pub datasets: Vec<Dataset>,
}

impl Manifest {
    /// Reads the manifest and every file it references. Any failure aborts
    /// the whole load.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file =
            ManifestFile::parse(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Manifest::from_file(&file, base)
    }

    pub fn from_file(file: &ManifestFile, base: &Path) -> Result<Manifest> {
        if file.dim == 0 {
            return Err(Error::Manifest("dim must be positive".into()));
        }
        if file.classes < 2 {
            return Err(Error::Manifest(format!(
                "classes = {}, need at least 2",
                file.classes
            )));
        }
        let mut datasets: Vec<Dataset> = Vec::with_capacity(file.datasets.len());
        for entry in &file.datasets {
            let key = format!("{}/{}/{}", entry.language, entry.domain, entry.split);
            if datasets.iter().any(|d| d.key() == key) {
                return Err(Error::Manifest(format!("duplicate dataset {key}")));
            }
            let embeddings = read_embeddings(base.join(&entry.embeddings))?;
            if embeddings.cols() != file.dim {
                return Err(Error::dims(
                    "manifest",
                    format!("dim {} declared by the manifest", file.dim),
                    format!("dim {} in {}", embeddings.cols(), entry.embeddings.display()),
                ));
            }
            let labels = match (&entry.labels, entry.split.is_labeled()) {
                (Some(p), true) => Some(read_labels(base.join(p), Some(file.classes))?),
                (None, false) => None,
                (None, true) => return Err(Error::Manifest(format!("{key}: labeled split needs `labels`"))),
                (Some(_), false) => {
                    return Err(Error::Manifest(format!(
                        "{key}: unlabeled split cannot have `labels`"
                    )))
                }
            };
            datasets.push(Dataset::new(
                embeddings,
                labels,
                &entry.language,
                &entry.domain,
                entry.split,
            )?);
        }
        Ok(Manifest {
            dim: file.dim,
            classes: file.classes,
            datasets,
        })
    }

    pub fn find(&self, language: &str, domain: &str, split: Split) -> Option<&Dataset> {
        self.datasets
            .iter()
            .find(|d| d.language == language && d.domain == domain && d.split == split)
    }

    pub fn get(&self, language: &str, domain: &str, split: Split) -> Result<&Dataset> {
        self.find(language, domain, split)
            .ok_or_else(|| Error::Manifest(format!("missing dataset {language}/{domain}/{split}")))
    }

    /// Distinct languages in first-appearance order.
    pub fn languages(&self) -> Vec<String> {
        distinct(self.datasets.iter().map(|d| &d.language))
    }

    /// Distinct domains in first-appearance order.
    pub fn domains(&self) -> Vec<String> {
        distinct(self.datasets.iter().map(|d| &d.domain))
    }

    pub fn unlabeled(&self) -> Vec<&Dataset> {
        self.datasets
            .iter()
            .filter(|d| d.split == Split::Unlabeled)
            .collect()
    }
}

fn distinct<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    out
}
