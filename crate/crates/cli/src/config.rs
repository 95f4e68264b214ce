//! Run configuration: an optional TOML file, then command-line overrides.
//!
//! ```toml
//! manifest = "data/manifest.toml"
//! out = "runs/a"
//!
//! [experiment]
//! seeds = 5
//! ablation = "2max-min-mi"
//!
//! [synth]
//! d = 32
//!
//! [bench]
//! steps = 500
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use ufd::bench::GaussianBenchConfig;
use ufd::data::SynthConfig;
use ufd::head::InputMode;
use ufd::mi::Estimator;
use ufd::model::{AblationMode, PrivateDiscriminator};
use ufd::pipeline::{ExperimentConfig, Selection};

pub const EFFECTIVE_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub synth: SynthConfig,
    pub bench: GaussianBenchConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<CliConfig> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .context("no manifest given; pass --manifest or set `manifest` in the config")
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("no output directory given; pass --out or set `out` in the config")
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn write_effective(&self) -> Result<PathBuf> {
        let out = self.out()?.to_path_buf();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let text = toml::to_string(self).context("serializing the effective config")?;
        let path = out.join(EFFECTIVE_CONFIG);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw of the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentOverrides {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of consecutive seeds to run, starting at the master seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Expected embedding dimension; a mismatch with the data is an error.
    #[arg(long)]
    pub d: Option<usize>,
    /// max-mi, max-min-mi, 2max-min-mi, max-2min or 2max-2min.
    #[arg(long)]
    pub ablation: Option<AblationMode>,
    /// invariant or invariant-specific.
    #[arg(long)]
    pub input_mode: Option<InputMode>,
    /// joint or adversarial.
    #[arg(long)]
    pub t_p_update: Option<PrivateDiscriminator>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub ufd_epochs: Option<usize>,
    #[arg(long)]
    pub task_epochs: Option<usize>,
    #[arg(long)]
    pub ufd_batch: Option<usize>,
    #[arg(long)]
    pub task_batch: Option<usize>,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    /// Upper bound on unlabeled rows drawn from each source domain.
    #[arg(long)]
    pub unlabeled_per_domain: Option<usize>,
    #[arg(long)]
    pub validation_size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// loss or accuracy.
    #[arg(long)]
    pub selection: Option<Selection>,
    #[arg(long)]
    pub source_language: Option<String>,
    /// Restrict targets to this language; repeat for several.
    #[arg(long = "target-language")]
    pub target_languages: Vec<String>,
    /// Also train and report the raw-embedding baseline.
    #[arg(long)]
    pub baseline: bool,
}

impl ExperimentOverrides {
    pub fn apply(&self, cfg: &mut CliConfig) {
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        let e = &mut cfg.experiment;
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { e.$field = v; })*
            };
        }
        set!(
            seeds,
            ablation,
            input_mode,
            t_p_update,
            ufd_epochs,
            task_epochs,
            ufd_batch,
            task_batch,
            learning_rate,
            unlabeled_per_domain,
            validation_size,
            classes,
            selection,
            source_language
        );
        if self.d.is_some() {
            e.d = self.d;
        }
        if let Some(v) = self.alpha {
            e.weights.alpha = v;
        }
        if let Some(v) = self.beta {
            e.weights.beta = v;
        }
        if let Some(v) = self.gamma {
            e.weights.gamma = v;
        }
        if self.delta.is_some() {
            e.weights.delta = self.delta;
        }
        if !self.target_languages.is_empty() {
            e.target_languages = self.target_languages.clone();
        }
        if self.baseline {
            e.baseline = true;
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthOverrides {
    #[arg(long)]
    pub d: Option<usize>,
    /// Dimension of the shared latent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Dimension of the domain latent.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub domains: Option<usize>,
    /// Comma-separated language tags.
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<String>,
    /// Comma-separated domain names.
    #[arg(long, value_delimiter = ',')]
    pub domain_names: Vec<String>,
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub train_rows: Option<usize>,
    #[arg(long)]
    pub validation_rows: Option<usize>,
    #[arg(long)]
    pub test_rows: Option<usize>,
    #[arg(long)]
    pub unlabeled_rows: Option<usize>,
}

impl SynthOverrides {
    pub fn apply(&self, s: &mut SynthConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { s.$field = v; })*
            };
        }
        set!(d, k, m, domains, offset, sigma);
        if !self.languages.is_empty() {
            s.languages = self.languages.clone();
        }
        if !self.domain_names.is_empty() {
            s.domain_names = self.domain_names.clone();
        }
        let r = &mut s.rows;
        for (flag, slot) in [
            (self.train_rows, &mut r.train),
            (self.validation_rows, &mut r.validation),
            (self.test_rows, &mut r.test),
            (self.unlabeled_rows, &mut r.unlabeled),
        ] {
            if let Some(v) = flag {
                *slot = v;
            }
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct BenchOverrides {
    /// Comma-separated correlations.
    #[arg(long, value_delimiter = ',')]
    pub rhos: Vec<f64>,
    /// Comma-separated estimators (jsd, dv).
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<Estimator>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub eval_rows: Option<usize>,
}

impl BenchOverrides {
    pub fn apply(&self, b: &mut GaussianBenchConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { b.$field = v; })*
            };
        }
        set!(steps, batch, learning_rate, seeds, hidden, eval_rows);
        if !self.rhos.is_empty() {
            b.rhos = self.rhos.clone();
        }
        if !self.estimators.is_empty() {
            b.estimators = self.estimators.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = CliConfig {
            manifest: Some("m.toml".into()),
            out: Some("o".into()),
            ..CliConfig::default()
        };
        cfg.experiment.d = Some(32);
        cfg.experiment.target_languages = vec!["de".into()];
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<CliConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg: CliConfig = toml::from_str("[experiment]\nseeds = 7\nablation = \"max-mi\"\n").unwrap();
        let o = ExperimentOverrides {
            ablation: Some(AblationMode::TwoMaxTwoMin),
            beta: Some(0.5),
            ..ExperimentOverrides::default()
        };
        o.apply(&mut cfg);
        assert_eq!(cfg.experiment.seeds, 7);
        assert_eq!(cfg.experiment.ablation, AblationMode::TwoMaxTwoMin);
        assert_eq!(cfg.experiment.weights.beta, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<CliConfig>("[experiment]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<CliConfig>("nope = 1\n").is_err());
    }
}
