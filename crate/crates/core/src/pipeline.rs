//! Two-stage cross-lingual cross-domain training and evaluation.
//!
//! Stage 1 trains the decomposition model on the source language's unlabeled
//! data from every domain. Stage 2 freezes it and trains a task classifier on
//! the source-language, source-domain training set, keeping the epoch with the
//! best score on a validation set drawn from the TARGET language and domain.
//! Those validation labels therefore leak into model selection; this mirrors
//! the reference protocol and is kept on purpose.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use crate::data::{Dataset, Manifest, Split};
use crate::head::{InputMode, TaskClassifier, DEFAULT_TASK_BATCH};
use crate::model::{
    AblationMode, FrozenUfd, LossBreakdown, LossWeights, PrivateDiscriminator, UfdModel, DEFAULT_UFD_BATCH,
};
use crate::nn::{argmax, Matrix, Rng, DEFAULT_LEARNING_RATE};
use crate::{Error, Result};

const STREAM_UFD: u64 = 1;
const STREAM_SUBSAMPLE: u64 = 2;
const STREAM_HEAD: u64 = 1 << 16;
const STREAM_BASELINE: u64 = 1 << 24;

/// How the task stage picks its checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Lowest validation cross-entropy.
    #[default]
    Loss,
    /// Highest validation accuracy.
    Accuracy,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Loss => "loss",
            Selection::Accuracy => "accuracy",
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loss" => Ok(Selection::Loss),
            "accuracy" => Ok(Selection::Accuracy),
            _ => Err(Error::InvalidArgument(format!(
                "unknown selection {s:?}; expected loss or accuracy"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; run `i` of a grid uses `seed + i`.
    pub seed: u64,
    /// Number of seeds per grid cell.
    pub seeds: usize,
    /// Expected embedding dimension; taken from the data when absent.
    pub d: Option<usize>,
    pub ablation: AblationMode,
    pub input_mode: InputMode,
    pub weights: LossWeights,
    pub t_p_update: PrivateDiscriminator,
    pub ufd_epochs: usize,
    pub task_epochs: usize,
    pub ufd_batch: usize,
    pub task_batch: usize,
    pub learning_rate: f64,
    /// Upper bound on unlabeled rows used per domain.
    pub unlabeled_per_domain: usize,
    pub validation_size: usize,
    pub classes: usize,
    pub selection: Selection,
    pub source_language: String,
    /// Target languages for the grid; empty means every other language.
    pub target_languages: Vec<String>,
    /// Also train a classifier on raw embeddings with the same budget.
    pub baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            seeds: 3,
            d: None,
            ablation: AblationMode::default(),
            input_mode: InputMode::default(),
            weights: LossWeights::default(),
            t_p_update: PrivateDiscriminator::Joint,
            ufd_epochs: 10,
            task_epochs: 50,
            ufd_batch: DEFAULT_UFD_BATCH,
            task_batch: DEFAULT_TASK_BATCH,
            learning_rate: DEFAULT_LEARNING_RATE,
            unlabeled_per_domain: 50_000,
            validation_size: 100,
            classes: 2,
            selection: Selection::Loss,
            source_language: "en".into(),
            target_languages: Vec::new(),
            baseline: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidArgument(s));
        if self.ufd_batch < 2 {
            return bad(format!(
                "ufd_batch = {} but negatives need at least 2 rows",
                self.ufd_batch
            ));
        }
        if self.task_batch == 0 {
            return bad("task_batch must be positive".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be positive".into());
        }
        if self.task_epochs == 0 {
            return bad("task_epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.classes < 2 {
            return bad(format!("classes = {} but at least 2 are needed", self.classes));
        }
        if self.validation_size == 0 {
            return bad("validation_size must be positive".into());
        }
        self.weights.validate()
    }

    /// Checks `found` against the configured dimension, if any.
    pub fn check_dim(&self, found: usize, what: &str) -> Result<()> {
        match self.d {
            Some(d) if d != found => Err(Error::dims(
                "experiment",
                format!("d = {d} from the config"),
                format!("d = {found} in {what}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Result of stage 1.
#[derive(Debug, Clone)]
pub struct UfdRun {
    pub model: UfdModel,
    /// One entry per optimizer step.
    pub history: Vec<LossBreakdown>,
    pub rows: usize,
}

impl UfdRun {
    /// Mean total loss of each epoch.
    pub fn epoch_means(&self, epochs: usize) -> Vec<f64> {
        if epochs == 0 || self.history.is_empty() {
            return Vec::new();
        }
        let per = self.history.len() / epochs;
        self.history
            .chunks(per.max(1))
            .map(|c| c.iter().map(|b| b.total).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Contiguous batches of a shuffled order. A trailing single row is paired
/// with the row before it so every batch can draw negatives.
fn ufd_batches(order: &[usize], batch: usize) -> Vec<&[usize]> {
    let n = order.len();
    let mut out = Vec::with_capacity(n.div_ceil(batch));
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        if end - start == 1 && n >= 2 {
            out.push(&order[n - 2..n]);
        } else {
            out.push(&order[start..end]);
        }
        start = end;
    }
    out
}

/// Concatenates `unlabeled`, then runs `ufd_epochs` shuffled passes of
/// joint updates. The history holds `ufd_epochs · ⌈N / ufd_batch⌉` entries.
pub fn train_ufd_stage(config: &ExperimentConfig, unlabeled: &[&Dataset], rng: &mut Rng) -> Result<UfdRun> {
    config.validate()?;
    let first = unlabeled
        .first()
        .ok_or_else(|| Error::InvalidArgument("no unlabeled data for the decomposition stage".into()))?;
    let d = first.dim();
    config.check_dim(d, &first.key())?;
    for ds in unlabeled {
        if ds.dim() != d {
            return Err(Error::dims(
                "train_ufd_stage",
                format!("d = {d}"),
                format!("d = {} in {}", ds.dim(), ds.key()),
            ));
        }
    }
    let parts: Vec<&Matrix> = unlabeled.iter().map(|ds| ds.embeddings()).collect();
    let all = Matrix::vstack(&parts)?;
    if all.rows() < config.ufd_batch {
        return Err(Error::InvalidArgument(format!(
            "{} unlabeled rows, fewer than one batch of {}",
            all.rows(),
            config.ufd_batch
        )));
    }
    let mut model = UfdModel::new(d, config.learning_rate, rng);
    model.t_p_update = config.t_p_update;
    let mut history = Vec::with_capacity(config.ufd_epochs * all.rows().div_ceil(config.ufd_batch));
    for _ in 0..config.ufd_epochs {
        let order = rng.permutation(all.rows());
        for idx in ufd_batches(&order, config.ufd_batch) {
            let batch = all.select_rows(idx)?;
            history.push(model.train_step(&batch, &config.weights, config.ablation, rng)?);
        }
    }
    Ok(UfdRun {
        model,
        history,
        rows: all.rows(),
    })
}

/// Index of the epoch to keep: lowest score for [`Selection::Loss`], highest
/// for [`Selection::Accuracy`], earliest on ties.
pub fn select_epoch(scores: &[f64], selection: Selection) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => match selection {
                Selection::Loss => s < scores[b],
                Selection::Accuracy => s > scores[b],
            },
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Features seen by the task classifier.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    Decomposed(&'a FrozenUfd),
    /// The embeddings themselves, for the baseline.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadInputs {
    pub f_s: Matrix,
    pub f_p: Option<Matrix>,
}

impl HeadInputs {
    pub fn compute(source: FeatureSource<'_>, mode: InputMode, h: &Matrix) -> Result<HeadInputs> {
        match source {
            FeatureSource::Raw => Ok(HeadInputs {
                f_s: h.clone(),
                f_p: None,
            }),
            FeatureSource::Decomposed(ufd) => {
                let (f_s, f_p) = ufd.extract(h)?;
                Ok(HeadInputs {
                    f_s,
                    f_p: (mode == InputMode::InvariantSpecific).then_some(f_p),
                })
            }
        }
    }

    fn rows(&self, idx: &[usize]) -> Result<HeadInputs> {
        Ok(HeadInputs {
            f_s: self.f_s.select_rows(idx)?,
            f_p: self.f_p.as_ref().map(|m| m.select_rows(idx)).transpose()?,
        })
    }
}

/// Result of stage 2.
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub classifier: TaskClassifier,
    /// Zero-based epoch of the kept checkpoint.
    pub selected_epoch: usize,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub validation_accuracies: Vec<f64>,
}

impl TaskRun {
    pub fn selected_validation_loss(&self) -> f64 {
        self.validation_losses[self.selected_epoch]
    }

    pub fn selected_train_loss(&self) -> f64 {
        self.train_losses[self.selected_epoch]
    }
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

fn validation_rows<'a>(config: &ExperimentConfig, validation: &'a Dataset) -> Result<(Matrix, &'a [usize])> {
    let labels = validation.require_labels()?;
    let n = config.validation_size;
    if validation.rows() < n {
        return Err(Error::InvalidArgument(format!(
            "{} has {} rows, validation needs {n}",
            validation.key(),
            validation.rows()
        )));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok((validation.embeddings().select_rows(&idx)?, &labels[..n]))
}

fn train_head(
    config: &ExperimentConfig,
    source: FeatureSource<'_>,
    mode: InputMode,
    train: &Dataset,
    validation: &Dataset,
    rng: &mut Rng,
) -> Result<TaskRun> {
    config.validate()?;
    let train_labels = train.require_labels()?;
    if train.rows() == 0 {
        return Err(Error::InvalidArgument(format!("{} is empty", train.key())));
    }
    let (val_h, val_labels) = validation_rows(config, validation)?;
    let d = train.dim();
    if let FeatureSource::Decomposed(ufd) = source {
        if ufd.dim() != d {
            return Err(Error::dims(
                "task stage",
                format!("d = {} from the decomposition model", ufd.dim()),
                format!("d = {d} in {}", train.key()),
            ));
        }
    }
    let train_x = HeadInputs::compute(source, mode, train.embeddings())?;
    let val_x = HeadInputs::compute(source, mode, &val_h)?;

    let mut clf = TaskClassifier::new(d, config.classes, mode, config.learning_rate, rng)?;
    let mut best: Option<TaskClassifier> = None;
    let mut train_losses = Vec::with_capacity(config.task_epochs);
    let mut validation_losses = Vec::with_capacity(config.task_epochs);
    let mut validation_accuracies = Vec::with_capacity(config.task_epochs);
    for _ in 0..config.task_epochs {
        let order = rng.permutation(train.rows());
        let mut sum = 0.0;
        for idx in order.chunks(config.task_batch) {
            let batch = train_x.rows(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            sum += clf.train_step_on_features(&batch.f_s, batch.f_p.as_ref(), &labels)? * idx.len() as f64;
        }
        train_losses.push(sum / train.rows() as f64);
        let probs = clf.classify(&val_x.f_s, val_x.f_p.as_ref())?;
        validation_losses.push(crate::nn::cross_entropy(&probs, val_labels)?);
        let preds: Vec<usize> = probs.iter_rows().map(argmax).collect();
        validation_accuracies.push(accuracy(&preds, val_labels));

        let scores = match config.selection {
            Selection::Loss => &validation_losses,
            Selection::Accuracy => &validation_accuracies,
        };
        if select_epoch(scores, config.selection) == Some(scores.len() - 1) {
            best = Some(clf.clone());
        }
    }
    let scores = match config.selection {
        Selection::Loss => &validation_losses,
        Selection::Accuracy => &validation_accuracies,
    };
    let selected_epoch = select_epoch(scores, config.selection).expect("at least one epoch");
    Ok(TaskRun {
        classifier: best.expect("selected epoch was stored"),
        selected_epoch,
        train_losses,
        validation_losses,
        validation_accuracies,
    })
}

/// Trains a classifier on features of the frozen model, keeping the
/// validation-selected epoch.
pub fn train_task_stage(
    config: &ExperimentConfig,
    ufd: &FrozenUfd,
    source_train: &Dataset,
    validation: &Dataset,
    rng: &mut Rng,
) -> Result<TaskRun> {
    train_head(
        config,
        FeatureSource::Decomposed(ufd),
        config.input_mode,
        source_train,
        validation,
        rng,
    )
}

/// The same budget and selection, but on raw embeddings with a linear head.
pub fn train_baseline(
    config: &ExperimentConfig,
    source_train: &Dataset,
    validation: &Dataset,
    rng: &mut Rng,
) -> Result<TaskRun> {
    train_head(
        config,
        FeatureSource::Raw,
        InputMode::InvariantOnly,
        source_train,
        validation,
        rng,
    )
}

/// Fraction of `test` rows whose argmax prediction matches the label.
pub fn evaluate_with(source: FeatureSource<'_>, clf: &TaskClassifier, test: &Dataset) -> Result<f64> {
    let labels = test.require_labels()?;
    if test.rows() == 0 {
        return Err(Error::InvalidArgument(format!("{} is empty", test.key())));
    }
    let x = HeadInputs::compute(source, clf.mode(), test.embeddings())?;
    let preds = clf.predict(&x.f_s, x.f_p.as_ref())?;
    Ok(accuracy(&preds, labels))
}

pub fn evaluate(ufd: &FrozenUfd, clf: &TaskClassifier, test: &Dataset) -> Result<f64> {
    if ufd.dim() != test.dim() {
        return Err(Error::dims(
            "evaluate",
            format!("d = {} from the decomposition model", ufd.dim()),
            format!("d = {} in {}", test.dim(), test.key()),
        ));
    }
    evaluate_with(FeatureSource::Decomposed(ufd), clf, test)
}

/// First `n` rows of a seeded shuffle of `ds`, so smaller sizes are prefixes
/// of larger ones under the same seed.
pub fn subsample_prefix(ds: &Dataset, n: usize, rng: &Rng) -> Result<Dataset> {
    if n > ds.rows() {
        return Err(Error::InvalidArgument(format!(
            "requested {n} rows from {}, which has {}",
            ds.key(),
            ds.rows()
        )));
    }
    let mut r = rng.clone();
    let order = r.permutation(ds.rows());
    ds.subset(&order[..n])
}

/// One (source domain → target language, target domain) transfer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pair {
    pub source_language: String,
    pub source_domain: String,
    pub target_language: String,
    pub target_domain: String,
}

impl Pair {
    pub fn name(&self) -> String {
        format!(
            "{}-{}>{}-{}",
            self.source_language, self.source_domain, self.target_language, self.target_domain
        )
    }

    pub fn cell(&self) -> (String, String) {
        (self.target_language.clone(), self.target_domain.clone())
    }
}

/// Every pair the manifest supports: source domains with a source-language
/// training set, against every other domain of each target language that has
/// a test set.
pub fn enumerate_pairs(config: &ExperimentConfig, manifest: &Manifest) -> Result<Vec<Pair>> {
    let src = &config.source_language;
    let targets: Vec<String> = if config.target_languages.is_empty() {
        manifest.languages().into_iter().filter(|l| l != src).collect()
    } else {
        config.target_languages.clone()
    };
    if targets.is_empty() {
        return Err(Error::Manifest(format!("no target language other than {src}")));
    }
    let domains = manifest.domains();
    let mut pairs = Vec::new();
    for tl in &targets {
        for td in &domains {
            if manifest.find(tl, td, Split::Test).is_none() {
                continue;
            }
            for sd in &domains {
                if sd == td || manifest.find(src, sd, Split::Train).is_none() {
                    continue;
                }
                manifest.get(tl, td, Split::Validation)?;
                pairs.push(Pair {
                    source_language: src.clone(),
                    source_domain: sd.clone(),
                    target_language: tl.clone(),
                    target_domain: td.clone(),
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Manifest(format!(
            "no runnable pair: need {src}/<domain>/train and <language>/<other domain>/test"
        )));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub pair: Pair,
    pub seed: u64,
    /// Mean total decomposition loss over the final epoch.
    pub ufd_loss: f64,
    pub task_loss: f64,
    pub validation_loss: f64,
    pub selected_epoch: usize,
    pub accuracy: f64,
    pub baseline_accuracy: Option<f64>,
}

/// Target cell averaged over its source domains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub target_language: String,
    pub target_domain: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub baseline_per_seed: Option<Vec<f64>>,
    pub baseline_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub unlabeled_per_domain: usize,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    /// Per seed, the mean decomposition loss of each epoch.
    pub ufd_curves: Vec<(u64, Vec<f64>)>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ExperimentReport {
    fn summarize(config: &ExperimentConfig, runs: &[RunRecord]) -> Vec<CellSummary> {
        let mut cells: Vec<(String, String)> = Vec::new();
        for r in runs {
            if !cells.contains(&r.pair.cell()) {
                cells.push(r.pair.cell());
            }
        }
        let seeds: Vec<u64> = (0..config.seeds as u64).map(|i| config.seed + i).collect();
        cells
            .into_iter()
            .map(|(tl, td)| {
                let of_seed = |seed: u64| -> Vec<&RunRecord> {
                    runs.iter()
                        .filter(|r| r.seed == seed && r.pair.cell() == (tl.clone(), td.clone()))
                        .collect()
                };
                let per_seed: Vec<f64> = seeds
                    .iter()
                    .map(|&s| mean(&of_seed(s).iter().map(|r| r.accuracy).collect::<Vec<_>>()))
                    .collect();
                let baseline_per_seed: Option<Vec<f64>> = seeds
                    .iter()
                    .map(|&s| {
                        let b: Option<Vec<f64>> = of_seed(s).iter().map(|r| r.baseline_accuracy).collect();
                        b.map(|b| mean(&b))
                    })
                    .collect();
                CellSummary {
                    mean: mean(&per_seed),
                    baseline_mean: baseline_per_seed.as_deref().map(mean),
                    target_language: tl,
                    target_domain: td,
                    seeds: seeds.clone(),
                    per_seed,
                    baseline_per_seed,
                }
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str = "pair,seed,ufd_loss,task_loss,validation_loss,accuracy";

    /// One row per run. A `baseline_accuracy` column is appended when the
    /// baseline was trained.
    pub fn to_csv(&self) -> String {
        let with_baseline = self.runs.iter().any(|r| r.baseline_accuracy.is_some());
        let mut out = String::from(Self::CSV_HEADER);
        if with_baseline {
            out.push_str(",baseline_accuracy");
        }
        out.push('\n');
        for r in &self.runs {
            write!(
                out,
                "{},{},{},{},{},{}",
                r.pair.name(),
                r.seed,
                r.ufd_loss,
                r.task_loss,
                r.validation_loss,
                r.accuracy
            )
            .expect("String write");
            if let Some(b) = r.baseline_accuracy {
                write!(out, ",{b}").expect("String write");
            }
            out.push('\n');
        }
        out
    }

    /// `key = value` header lines followed by a per-cell table.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let kv = [
            ("ablation", c.ablation.name().to_string()),
            ("input_mode", c.input_mode.name().to_string()),
            ("seed", c.seed.to_string()),
            ("seeds", c.seeds.to_string()),
            ("ufd_epochs", c.ufd_epochs.to_string()),
            ("task_epochs", c.task_epochs.to_string()),
            ("unlabeled_per_domain", self.unlabeled_per_domain.to_string()),
            ("selection", format!("{:?}", c.selection).to_lowercase()),
            ("runs", self.runs.len().to_string()),
        ];
        for (k, v) in kv {
            writeln!(out, "{k} = {v}").expect("String write");
        }
        out.push('\n');
        let with_baseline = self.cells.iter().any(|c| c.baseline_mean.is_some());
        write!(out, "{:<10} {:<10} {:>8}", "language", "domain", "mean").expect("String write");
        if with_baseline {
            write!(out, " {:>8}", "baseline").expect("String write");
        }
        writeln!(out, "  per-seed").expect("String write");
        for cell in &self.cells {
            write!(
                out,
                "{:<10} {:<10} {:>8.4}",
                cell.target_language, cell.target_domain, cell.mean
            )
            .expect("String write");
            if let Some(b) = cell.baseline_mean {
                write!(out, " {b:>8.4}").expect("String write");
            }
            let seeds: Vec<String> = cell.per_seed.iter().map(|a| format!("{a:.4}")).collect();
            writeln!(out, "  {}", seeds.join(" ")).expect("String write");
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum UnlabeledBudget {
    /// Use up to this many rows per domain.
    Cap(usize),
    /// Exactly this many; fewer available is an error.
    Exact(usize),
}

fn source_unlabeled(
    config: &ExperimentConfig,
    manifest: &Manifest,
    budget: UnlabeledBudget,
    seed: u64,
) -> Result<(Vec<Dataset>, usize)> {
    let sets: Vec<&Dataset> = manifest
        .unlabeled()
        .into_iter()
        .filter(|d| d.language == config.source_language)
        .collect();
    if sets.is_empty() {
        return Err(Error::Manifest(format!(
            "no unlabeled data for source language {}",
            config.source_language
        )));
    }
    let base = Rng::new(seed).derive(STREAM_SUBSAMPLE);
    let mut out = Vec::with_capacity(sets.len());
    let mut used = 0;
    for (i, ds) in sets.into_iter().enumerate() {
        let n = match budget {
            UnlabeledBudget::Cap(c) => c.min(ds.rows()),
            UnlabeledBudget::Exact(n) => n,
        };
        used = used.max(n);
        out.push(subsample_prefix(ds, n, &base.derive(i as u64))?);
    }
    Ok((out, used))
}

fn ufd_for_seed(
    config: &ExperimentConfig,
    manifest: &Manifest,
    budget: UnlabeledBudget,
    seed: u64,
) -> Result<(UfdRun, usize)> {
    let (unlabeled, used) = source_unlabeled(config, manifest, budget, seed)?;
    let refs: Vec<&Dataset> = unlabeled.iter().collect();
    let run = train_ufd_stage(config, &refs, &mut Rng::new(seed).derive(STREAM_UFD))?;
    Ok((run, used))
}

/// Stage 1 exactly as the grid runs it for `seed`: the source language's
/// unlabeled sets, each capped at `unlabeled_per_domain` rows.
pub fn train_ufd_for_seed(config: &ExperimentConfig, manifest: &Manifest, seed: u64) -> Result<UfdRun> {
    config.validate()?;
    config.check_dim(manifest.dim, "the manifest")?;
    Ok(ufd_for_seed(
        config,
        manifest,
        UnlabeledBudget::Cap(config.unlabeled_per_domain),
        seed,
    )?
    .0)
}

/// Generator the grid uses for the task stage of pair `pair_index` under `seed`.
pub fn head_rng(seed: u64, pair_index: usize) -> Rng {
    Rng::new(seed).derive(STREAM_HEAD + pair_index as u64)
}

fn run_grid(
    config: &ExperimentConfig,
    manifest: &Manifest,
    budget: UnlabeledBudget,
) -> Result<ExperimentReport> {
    config.validate()?;
    config.check_dim(manifest.dim, "the manifest")?;
    if manifest.classes != config.classes {
        return Err(Error::InvalidArgument(format!(
            "config has {} classes, manifest has {}",
            config.classes, manifest.classes
        )));
    }
    let pairs = enumerate_pairs(config, manifest)?;
    let mut runs = Vec::new();
    let mut ufd_curves = Vec::new();
    let mut unlabeled_used = 0;
    for s in 0..config.seeds as u64 {
        let seed = config.seed + s;
        let root = Rng::new(seed);
        let (stage1, used) = ufd_for_seed(config, manifest, budget, seed)?;
        unlabeled_used = used;
        let curve = stage1.epoch_means(config.ufd_epochs);
        let ufd_loss = curve.last().copied().unwrap_or(f64::NAN);
        ufd_curves.push((seed, curve));
        let ufd = stage1.model.freeze();
        for (i, pair) in pairs.iter().enumerate() {
            let train = manifest.get(&pair.source_language, &pair.source_domain, Split::Train)?;
            let validation = manifest.get(&pair.target_language, &pair.target_domain, Split::Validation)?;
            let test = manifest.get(&pair.target_language, &pair.target_domain, Split::Test)?;
            let task = train_task_stage(config, &ufd, train, validation, &mut head_rng(seed, i))?;
            let acc = evaluate(&ufd, &task.classifier, test)?;
            let baseline_accuracy = if config.baseline {
                let b = train_baseline(
                    config,
                    train,
                    validation,
                    &mut root.derive(STREAM_BASELINE + i as u64),
                )?;
                Some(evaluate_with(FeatureSource::Raw, &b.classifier, test)?)
            } else {
                None
            };
            runs.push(RunRecord {
                pair: pair.clone(),
                seed,
                ufd_loss,
                task_loss: task.selected_train_loss(),
                validation_loss: task.selected_validation_loss(),
                selected_epoch: task.selected_epoch,
                accuracy: acc,
                baseline_accuracy,
            });
        }
    }
    let cells = ExperimentReport::summarize(config, &runs);
    Ok(ExperimentReport {
        config: config.clone(),
        unlabeled_per_domain: unlabeled_used,
        runs,
        cells,
        ufd_curves,
    })
}

/// Runs every pair of the manifest for `config.seeds` seeds. The
/// decomposition model is trained once per seed and shared by all pairs.
pub fn run_experiment_grid(config: &ExperimentConfig, manifest: &Manifest) -> Result<ExperimentReport> {
    run_grid(
        config,
        manifest,
        UnlabeledBudget::Cap(config.unlabeled_per_domain),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSweepReport {
    pub sizes: Vec<usize>,
    pub reports: Vec<ExperimentReport>,
}

impl SizeSweepReport {
    pub const CSV_HEADER: &'static str = "unlabeled_per_domain,language,domain,mean";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (size, report) in self.sizes.iter().zip(&self.reports) {
            for c in &report.cells {
                writeln!(out, "{size},{},{},{}", c.target_language, c.target_domain, c.mean)
                    .expect("String write");
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (size, report) in self.sizes.iter().zip(&self.reports) {
            writeln!(out, "## unlabeled_per_domain = {size}\n").expect("String write");
            out.push_str(&report.to_text());
            out.push('\n');
        }
        out
    }
}

/// Reruns the grid with each domain's unlabeled set cut to every size in
/// `sizes`. Subsets are prefixes of one seeded shuffle, so they nest.
pub fn run_size_sweep(
    config: &ExperimentConfig,
    manifest: &Manifest,
    sizes: &[usize],
) -> Result<SizeSweepReport> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no sweep sizes given".into()));
    }
    for ds in manifest
        .unlabeled()
        .iter()
        .filter(|d| d.language == config.source_language)
    {
        if let Some(&too_big) = sizes.iter().find(|&&s| s > ds.rows()) {
            return Err(Error::InvalidArgument(format!(
                "sweep size {too_big} exceeds the {} rows of {}",
                ds.rows(),
                ds.key()
            )));
        }
    }
    let reports = sizes
        .iter()
        .map(|&n| run_grid(config, manifest, UnlabeledBudget::Exact(n)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SizeSweepReport {
        sizes: sizes.to_vec(),
        reports,
    })
}
