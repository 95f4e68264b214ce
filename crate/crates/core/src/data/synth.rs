//! Synthetic cross-lingual cross-domain data with known latent structure.
//!
//! Each row is `h = A·z_s + B_dom·z_d + σ·ε` where `z_s ~ N(0, I_k)` is shared
//! by all domains, `z_d ~ N(μ_dom, I_m)` is private to the domain, and the
//! label is `1[w·z_s > 0]`. `A` and every `B_dom` have orthonormal columns and
//! each `B_dom` is orthogonal to `A`. The domain means are `offset/√2` times
//! orthonormal directions, so every pair of means is `offset` apart.
//!
//! Languages are tags only: every language draws from the same distribution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Split};
use crate::data::io::{write_embeddings, write_labels};
use crate::data::manifest::{ManifestEntry, ManifestFile};
use crate::nn::{Matrix, Rng};
use crate::{Error, Result};

const DEFAULT_DOMAIN_NAMES: [&str; 3] = ["books", "dvd", "music"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RowCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub unlabeled: usize,
}

impl Default for RowCounts {
    fn default() -> Self {
        RowCounts {
            train: 1000,
            validation: 100,
            test: 1000,
            unlabeled: 2000,
        }
    }
}

impl RowCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
            Split::Unlabeled => self.unlabeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub domains: usize,
    /// Domain tags; empty means `books, dvd, music` then `domain3, ...`.
    pub domain_names: Vec<String>,
    pub languages: Vec<String>,
    pub rows: RowCounts,
    /// Distance between any two domain means of `z_d`.
    pub offset: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 64,
            k: 8,
            m: 8,
            domains: 2,
            domain_names: Vec::new(),
            languages: vec!["en".into()],
            rows: RowCounts::default(),
            offset: 6.0,
            sigma: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidArgument(s));
        if self.k == 0 || self.m == 0 {
            return bad(format!("k = {} and m = {} must be positive", self.k, self.m));
        }
        if self.k + self.m > self.d {
            return bad(format!("k + m = {} exceeds d = {}", self.k + self.m, self.d));
        }
        if self.domains == 0 || self.domains > self.m {
            return bad(format!("domains = {} must be in 1..={}", self.domains, self.m));
        }
        if !self.domain_names.is_empty() && self.domain_names.len() != self.domains {
            return bad(format!(
                "{} domain names for {} domains",
                self.domain_names.len(),
                self.domains
            ));
        }
        if self.languages.is_empty() {
            return bad("at least one language is needed".into());
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            return bad(format!("offset {} must be finite and non-negative", self.offset));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma {} must be finite and non-negative", self.sigma));
        }
        Ok(())
    }

    pub fn domain_name(&self, i: usize) -> String {
        match self.domain_names.get(i) {
            Some(n) => n.clone(),
            None => DEFAULT_DOMAIN_NAMES
                .get(i)
                .map_or_else(|| format!("domain{i}"), |s| s.to_string()),
        }
    }
}

/// One generated dataset with its latents.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSet {
    pub dataset: Dataset,
    pub domain_index: usize,
    /// Labels, present even for the unlabeled split.
    pub true_labels: Vec<usize>,
    pub z_s: Matrix,
    pub z_d: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub config: SynthConfig,
    /// `d × k`.
    pub shared_map: Matrix,
    /// One `d × m` map per domain.
    pub private_maps: Vec<Matrix>,
    pub label_direction: Vec<f64>,
    pub domain_means: Vec<Vec<f64>>,
    pub sets: Vec<SynthSet>,
}

impl SynthData {
    pub fn find(&self, language: &str, domain: &str, split: Split) -> Option<&SynthSet> {
        self.sets.iter().find(|s| {
            s.dataset.language == language && s.dataset.domain == domain && s.dataset.split == split
        })
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.sets.iter().map(|s| &s.dataset)
    }

    /// Writes `{language}_{domain}_{split}.ufde` (and `.labels`) plus
    /// `manifest.toml` into `dir`, returning the manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<ManifestFile> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.sets.len());
        for set in &self.sets {
            let ds = &set.dataset;
            let stem = format!("{}_{}_{}", ds.language, ds.domain, ds.split);
            let emb = format!("{stem}.ufde");
            write_embeddings(dir.join(&emb), ds.embeddings())?;
            let labels = match ds.labels() {
                Some(l) => {
                    let name = format!("{stem}.labels");
                    write_labels(dir.join(&name), l)?;
                    Some(name.into())
                }
                None => None,
            };
            entries.push(ManifestEntry {
                language: ds.language.clone(),
                domain: ds.domain.clone(),
                split: ds.split,
                embeddings: emb.into(),
                labels,
            });
        }
        let manifest = ManifestFile {
            dim: self.config.d,
            classes: 2,
            datasets: entries,
        };
        manifest.write(dir.join("manifest.toml"))?;
        Ok(manifest)
    }
}

// Stream ids for `Rng::derive`. Label-relevant draws never share a stream
// with offset- or noise-dependent ones.
const STREAM_SHARED_MAP: u64 = 1;
const STREAM_PRIVATE_MAPS: u64 = 2;
const STREAM_MEANS: u64 = 3;
const STREAM_SETS: u64 = 1 << 20;

fn set_stream(lang: usize, dom: usize, split: usize, kind: u64) -> u64 {
    STREAM_SETS + (((lang as u64 * 1024 + dom as u64) * 8 + split as u64) << 2) + kind
}

/// Columns of a fresh Gaussian `d × cols` matrix orthonormalised against
/// `basis` and each other.
fn orthonormal_columns(d: usize, cols: usize, basis: &[Vec<f64>], rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while out.len() < cols {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        // Two passes of modified Gram-Schmidt keep the columns orthogonal to
        // machine precision.
        for _ in 0..2 {
            for b in basis.iter().chain(out.iter()) {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

fn columns_to_matrix(d: usize, cols: &[Vec<f64>]) -> Matrix {
    let mut m = Matrix::zeros(d, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    m
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let (d, k, m) = (cfg.d, cfg.k, cfg.m);

    let mut shared_rng = root.derive(STREAM_SHARED_MAP);
    let a_cols = orthonormal_columns(d, k, &[], &mut shared_rng);
    let label_direction = {
        let w = orthonormal_columns(k, 1, &[], &mut shared_rng);
        w.into_iter().next().expect("one column")
    };
    let shared_map = columns_to_matrix(d, &a_cols);

    let mut private_rng = root.derive(STREAM_PRIVATE_MAPS);
    let private_maps: Vec<Matrix> = (0..cfg.domains)
        .map(|_| columns_to_matrix(d, &orthonormal_columns(d, m, &a_cols, &mut private_rng)))
        .collect();

    let mut means_rng = root.derive(STREAM_MEANS);
    let scale = cfg.offset / std::f64::consts::SQRT_2;
    let domain_means: Vec<Vec<f64>> = orthonormal_columns(m, cfg.domains, &[], &mut means_rng)
        .into_iter()
        .map(|q| q.into_iter().map(|v| v * scale).collect())
        .collect();

    let mut sets = Vec::new();
    for (li, lang) in cfg.languages.iter().enumerate() {
        for di in 0..cfg.domains {
            for (si, split) in Split::ALL.into_iter().enumerate() {
                let n = cfg.rows.get(split);
                let mut zs_rng = root.derive(set_stream(li, di, si, 0));
                let mut zd_rng = root.derive(set_stream(li, di, si, 1));
                let mut noise_rng = root.derive(set_stream(li, di, si, 2));

                let mut z_s = Matrix::zeros(n, k);
                z_s.data_mut().iter_mut().for_each(|v| *v = zs_rng.normal());
                let mut z_d = Matrix::zeros(n, m);
                for r in 0..n {
                    for (v, mu) in z_d.row_mut(r).iter_mut().zip(&domain_means[di]) {
                        *v = mu + zd_rng.normal();
                    }
                }
                let mut h = z_s
                    .matmul_transposed(&shared_map)?
                    .add(&z_d.matmul_transposed(&private_maps[di])?)?;
                if cfg.sigma > 0.0 {
                    h.data_mut()
                        .iter_mut()
                        .for_each(|v| *v += cfg.sigma * noise_rng.normal());
                }
                let true_labels: Vec<usize> = z_s
                    .iter_rows()
                    .map(|z| {
                        let s: f64 = z.iter().zip(&label_direction).map(|(a, b)| a * b).sum();
                        usize::from(s > 0.0)
                    })
                    .collect();
                let labels = split.is_labeled().then(|| true_labels.clone());
                let dataset = Dataset::new(h, labels, lang, cfg.domain_name(di), split)?;
                sets.push(SynthSet {
                    dataset,
                    domain_index: di,
                    true_labels,
                    z_s,
                    z_d,
                });
            }
        }
    }

    Ok(SynthData {
        config: cfg.clone(),
        shared_map,
        private_maps,
        label_direction,
        domain_means,
        sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            d: 12,
            k: 3,
            m: 4,
            rows: RowCounts {
                train: 40,
                validation: 10,
                test: 30,
                unlabeled: 50,
            },
            languages: vec!["en".into(), "de".into()],
            seed: 7,
            ..SynthConfig::default()
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn maps_are_orthonormal_and_private_maps_avoid_the_shared_space() {
        let data = synth_generate(&small()).unwrap();
        let a = data.shared_map.transpose();
        for b in &data.private_maps {
            let bt = b.transpose();
            let cols: Vec<&[f64]> = a.iter_rows().chain(bt.iter_rows()).collect();
            for i in 0..cols.len() {
                for j in 0..cols.len() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(cols[i], cols[j]) - expect).abs() < 1e-12);
                }
            }
        }
        assert!((dot(&data.label_direction, &data.label_direction) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn domain_means_are_offset_apart() {
        let cfg = SynthConfig {
            domains: 3,
            ..small()
        };
        let data = synth_generate(&cfg).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let dist: f64 = data.domain_means[i]
                    .iter()
                    .zip(&data.domain_means[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((dist - 6.0).abs() < 1e-12, "{dist}");
            }
        }
    }

    #[test]
    fn noiseless_rows_decompose_exactly() {
        let cfg = SynthConfig {
            sigma: 0.0,
            ..small()
        };
        let data = synth_generate(&cfg).unwrap();
        for set in &data.sets {
            let b = &data.private_maps[set.domain_index];
            let rebuilt = set
                .z_s
                .matmul_transposed(&data.shared_map)
                .unwrap()
                .add(&set.z_d.matmul_transposed(b).unwrap())
                .unwrap();
            assert!(rebuilt.max_abs_diff(set.dataset.embeddings()) < 1e-12);
            for (z, &y) in set.z_s.iter_rows().zip(&set.true_labels) {
                assert_eq!(usize::from(dot(z, &data.label_direction) > 0.0), y);
            }
        }
    }

    #[test]
    fn layout_and_tags() {
        let data = synth_generate(&small()).unwrap();
        assert_eq!(data.sets.len(), 2 * 2 * 4);
        let train = data.find("de", "dvd", Split::Train).unwrap();
        assert_eq!(train.dataset.rows(), 40);
        assert_eq!(train.dataset.dim(), 12);
        assert!(data
            .find("en", "books", Split::Unlabeled)
            .unwrap()
            .dataset
            .labels()
            .is_none());
    }

    #[test]
    fn labels_ignore_offset_and_noise() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&SynthConfig {
            offset: 1.5,
            sigma: 2.0,
            ..small()
        })
        .unwrap();
        for (x, y) in a.sets.iter().zip(&b.sets) {
            assert_eq!(x.true_labels, y.true_labels);
            assert_eq!(x.z_s, y.z_s);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(
            synth_generate(&small()).unwrap(),
            synth_generate(&small()).unwrap()
        );
        let other = synth_generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(other.sets[0].z_s, synth_generate(&small()).unwrap().sets[0].z_s);
    }

    #[test]
    fn invalid_configs() {
        assert!(synth_generate(&SynthConfig {
            k: 9,
            m: 4,
            d: 12,
            ..small()
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            domains: 5,
            ..small()
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            sigma: -1.0,
            ..small()
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            languages: vec![],
            ..small()
        })
        .is_err());
    }

    #[test]
    fn write_produces_a_loadable_manifest() {
        let data = synth_generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write(dir.path()).unwrap();
        let m = crate::data::Manifest::load(dir.path().join("manifest.toml")).unwrap();
        assert_eq!(m.datasets.len(), data.sets.len());
        for (loaded, set) in m.datasets.iter().zip(&data.sets) {
            assert_eq!(loaded, &set.dataset);
        }
    }
}
