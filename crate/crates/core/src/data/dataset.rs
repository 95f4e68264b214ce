use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unlabeled,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Validation, Split::Test, Split::Unlabeled];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Split::Unlabeled
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}")))
    }
}

/// Embeddings of one (language, domain, split), labeled unless the split is
/// `Unlabeled`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    embeddings: Matrix,
    labels: Option<Vec<usize>>,
    pub language: String,
    pub domain: String,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        embeddings: Matrix,
        labels: Option<Vec<usize>>,
        language: impl Into<String>,
        domain: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        let ds = Dataset {
            embeddings,
            labels,
            language: language.into(),
            domain: domain.into(),
            split,
        };
        match (&ds.labels, split.is_labeled()) {
            (Some(l), true) if l.len() == ds.embeddings.rows() => Ok(ds),
            (Some(l), true) => Err(Error::dims(
                "Dataset::new",
                format!("{} labels for {}", ds.embeddings.rows(), ds.key()),
                l.len(),
            )),
            (None, true) => Err(Error::InvalidArgument(format!(
                "{} is a labeled split but has no labels",
                ds.key()
            ))),
            (Some(_), false) => Err(Error::InvalidArgument(format!(
                "{} is unlabeled but carries labels",
                ds.key()
            ))),
            (None, false) => Ok(ds),
        }
    }

    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.language, self.domain, self.split)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn rows(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no labels", self.key())))
    }

    /// Rows `indices` in order, keeping tags and labels aligned.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let embeddings = self.embeddings.select_rows(indices)?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset::new(embeddings, labels, &self.language, &self.domain, self.split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_invariant() {
        let m = Matrix::zeros(3, 2);
        assert!(Dataset::new(m.clone(), Some(vec![0, 1, 0]), "en", "books", Split::Train).is_ok());
        assert!(Dataset::new(m.clone(), Some(vec![0, 1]), "en", "books", Split::Test).is_err());
        assert!(Dataset::new(m.clone(), None, "en", "books", Split::Validation).is_err());
        assert!(Dataset::new(m.clone(), Some(vec![0; 3]), "en", "books", Split::Unlabeled).is_err());
        assert!(Dataset::new(m, None, "en", "books", Split::Unlabeled).is_ok());
    }

    #[test]
    fn subset_keeps_labels_aligned() {
        let m = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let ds = Dataset::new(m, Some(vec![0, 1, 2]), "de", "dvd", Split::Train).unwrap();
        let s = ds.subset(&[2, 0]).unwrap();
        assert_eq!(s.embeddings().data(), &[2.0, 0.0]);
        assert_eq!(s.labels(), Some(&[2, 0][..]));
    }

    #[test]
    fn split_names() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("dev".parse::<Split>().is_err());
    }
}
