//! Sanity suite for the MI estimators on correlated Gaussian pairs, where the
//! true MI is `-½ ln(1 - ρ²)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mi::{sample_derangement, Discriminator, Estimator};
use crate::nn::{Adam, Matrix, Rng, DEFAULT_LEARNING_RATE};
use crate::{Error, Result};

pub fn analytic_gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

/// `n` draws of `(x, y)` with unit variances and correlation `rho`.
pub fn sample_bivariate(n: usize, rho: f64, rng: &mut Rng) -> (Matrix, Matrix) {
    let c = (1.0 - rho * rho).sqrt();
    let mut x = Matrix::zeros(n, 1);
    let mut y = Matrix::zeros(n, 1);
    for i in 0..n {
        let a = rng.normal();
        let b = rng.normal();
        x.set(i, 0, a);
        y.set(i, 0, rho * a + c * b);
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianBenchConfig {
    pub rhos: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seeds: usize,
    pub seed: u64,
    /// Hidden width of the discriminator.
    pub hidden: usize,
    /// Fresh rows used to read off the trained estimate.
    pub eval_rows: usize,
}

impl Default for GaussianBenchConfig {
    fn default() -> Self {
        GaussianBenchConfig {
            rhos: vec![0.0, 0.5, 0.9],
            estimators: vec![Estimator::Jsd, Estimator::Dv],
            steps: 2000,
            batch: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            seeds: 5,
            seed: 0,
            hidden: 64,
            eval_rows: 8192,
        }
    }
}

impl GaussianBenchConfig {
    fn validate(&self) -> Result<()> {
        if self.batch < 2 || self.eval_rows < 2 {
            return Err(Error::InvalidArgument(
                "batch and eval_rows need at least 2 rows".into(),
            ));
        }
        if self.seeds == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("seeds and hidden must be positive".into()));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(r.abs() < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "correlation {r} must be in (-1, 1)"
            )));
        }
        Ok(())
    }
}

/// Trains a fresh discriminator to maximise `estimator` on draws with
/// correlation `rho`, then evaluates it on `eval_rows` fresh draws.
pub fn train_gaussian_estimator(
    estimator: Estimator,
    rho: f64,
    config: &GaussianBenchConfig,
    rng: &mut Rng,
) -> Result<f64> {
    config.validate()?;
    let mut t = Discriminator::new(1, 1, config.hidden, rng);
    let mut adam = Adam::new(config.learning_rate);
    for _ in 0..config.steps {
        let (x, y) = sample_bivariate(config.batch, rho, rng);
        let neg = sample_derangement(config.batch, rng)?;
        t.zero_grads();
        estimator.backward(&mut t, &x, &y, &neg, -1.0)?;
        adam.step_layers(&mut t.layers_mut())?;
    }
    let (x, y) = sample_bivariate(config.eval_rows, rho, rng);
    let neg = sample_derangement(config.eval_rows, rng)?;
    estimator.estimate(&t, &x, &y, &neg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub estimator: Estimator,
    pub rho: f64,
    pub analytic: f64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianBenchReport {
    pub config: GaussianBenchConfig,
    pub rows: Vec<BenchRow>,
}

impl GaussianBenchReport {
    pub fn row(&self, estimator: Estimator, rho: f64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.rho == rho)
    }

    /// Means for `estimator` in the configured order of correlations.
    pub fn means(&self, estimator: Estimator) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .map(|r| r.mean)
            .collect()
    }

    /// Whether the means rise strictly with correlation for `estimator`.
    pub fn strictly_increasing(&self, estimator: Estimator) -> bool {
        let mut rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.estimator == estimator).collect();
        rows.sort_by(|a, b| a.rho.total_cmp(&b.rho));
        rows.windows(2).all(|w| w[1].mean > w[0].mean)
    }

    pub const CSV_HEADER: &'static str = "estimator,rho,analytic,mean,per_seed";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.estimator.name(),
                r.rho,
                r.analytic,
                r.mean,
                seeds.join(" ")
            )
            .expect("String write");
        }
        out
    }
}

/// Every (estimator, correlation) combination over `config.seeds` seeds.
/// Seed `i` uses stream `i` of the master seed, shared across combinations.
pub fn run_gaussian_bench(config: &GaussianBenchConfig) -> Result<GaussianBenchReport> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut rows = Vec::new();
    for &estimator in &config.estimators {
        for &rho in &config.rhos {
            let per_seed = (0..config.seeds as u64)
                .map(|s| train_gaussian_estimator(estimator, rho, config, &mut root.derive(s)))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(BenchRow {
                estimator,
                rho,
                analytic: analytic_gaussian_mi(rho),
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            });
        }
    }
    Ok(GaussianBenchReport {
        config: config.clone(),
        rows,
    })
}
