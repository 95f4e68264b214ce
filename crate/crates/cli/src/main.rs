//! `ufd`: synthetic data, two-stage training, evaluation, experiment grids,
//! the Gaussian estimator suite and PCA export.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ufd::bench::run_gaussian_bench;
use ufd::data::{
    load_classifier, load_ufd, pca_project_2d, read_embeddings, read_labels, save_classifier, save_ufd,
    synth_generate, Manifest, Split,
};
use ufd::model::{FrozenUfd, LossTerm};
use ufd::pipeline::{
    enumerate_pairs, evaluate, head_rng, run_experiment_grid, run_size_sweep, train_task_stage,
    train_ufd_for_seed, UfdRun,
};

use config::{BenchOverrides, CliConfig, Common, ExperimentOverrides, SynthOverrides};

pub const UFD_CHECKPOINT: &str = "ufd.ckpt";
pub const CLASSIFIER_CHECKPOINT: &str = "classifier.ckpt";

#[derive(Debug, Parser)]
#[command(
    name = "ufd",
    version,
    about = "Unsupervised feature decomposition of document embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic two-factor datasets and their manifest.
    SynthGen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthOverrides,
    },
    /// Train the decomposition stage on the source language's unlabeled data.
    TrainUfd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        experiment: ExperimentOverrides,
    },
    /// Train the task classifier on top of a frozen decomposition checkpoint.
    /// The pair is the first one matching the domain filters and `--target-language`.
    TrainTask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        experiment: ExperimentOverrides,
        /// Decomposition checkpoint written by train-ufd.
        #[arg(long)]
        ufd: PathBuf,
        /// Source domain with a labeled training set; default is the first pair.
        #[arg(long)]
        source_domain: Option<String>,
        #[arg(long)]
        target_domain: Option<String>,
    },
    /// Print the accuracy of a checkpoint pair on every test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Optional directory for eval.csv and the effective config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        experiment: ExperimentOverrides,
        #[arg(long)]
        ufd: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Only evaluate test sets of this language.
        #[arg(long)]
        language: Option<String>,
    },
    /// Run every transfer pair of the manifest, or a sweep over unlabeled sizes.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        experiment: ExperimentOverrides,
        /// Comma-separated unlabeled rows per domain; runs one grid per size.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Train both estimators on correlated Gaussians and report the means.
    MiBench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        bench: BenchOverrides,
    },
    /// Project an embedding file, or its decomposed features, onto two principal axes.
    Project {
        /// Embedding file to project.
        #[arg(long)]
        features: PathBuf,
        /// Output CSV with columns x, y, tag.
        #[arg(long)]
        out: PathBuf,
        /// Label file whose values tag each row.
        #[arg(long, conflicts_with = "tag")]
        labels: Option<PathBuf>,
        /// Tag for every row when no label file is given.
        #[arg(long, default_value = "all")]
        tag: String,
        /// Project features of this decomposition checkpoint instead of the raw rows.
        #[arg(long)]
        ufd: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Part::Invariant, requires = "ufd")]
        part: Part,
        /// Seed for the power-method start vectors.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    Invariant,
    Specific,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen { common, out, synth } => synth_gen(&common, out, &synth),
        Command::TrainUfd {
            common,
            out,
            experiment,
        } => train_ufd(&common, out, &experiment),
        Command::TrainTask {
            common,
            out,
            experiment,
            ufd,
            source_domain,
            target_domain,
        } => train_task(
            &common,
            out,
            &experiment,
            &ufd,
            PairFilter {
                source_domain,
                target_domain,
            },
        ),
        Command::Eval {
            common,
            out,
            experiment,
            ufd,
            classifier,
            language,
        } => eval(&common, out, &experiment, &ufd, &classifier, language.as_deref()),
        Command::Grid {
            common,
            out,
            experiment,
            sizes,
        } => grid(&common, out, &experiment, &sizes),
        Command::MiBench { common, out, bench } => mi_bench(&common, out, &bench),
        Command::Project {
            features,
            out,
            labels,
            tag,
            ufd,
            part,
            seed,
        } => project(
            &features,
            &out,
            labels.as_deref(),
            &tag,
            ufd.as_deref(),
            part,
            seed,
        ),
    }
}

fn base_config(common: &Common, out: Option<PathBuf>) -> Result<CliConfig> {
    let mut cfg = CliConfig::load(common.config.as_deref())?;
    if out.is_some() {
        cfg.out = out;
    }
    Ok(cfg)
}

fn experiment_config(common: &Common, out: Option<PathBuf>, o: &ExperimentOverrides) -> Result<CliConfig> {
    let mut cfg = base_config(common, out)?;
    o.apply(&mut cfg);
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    cfg.experiment.validate()?;
    Ok(cfg)
}

fn load_manifest(cfg: &CliConfig) -> Result<Manifest> {
    let path = cfg.manifest()?;
    let manifest = Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
    cfg.experiment.check_dim(manifest.dim, "the manifest")?;
    Ok(manifest)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Loads a decomposition checkpoint and checks its width against the manifest.
fn load_frozen(path: &Path, cfg: &CliConfig, manifest: &Manifest) -> Result<FrozenUfd> {
    let model = load_ufd(path, cfg.experiment.learning_rate)
        .with_context(|| format!("loading decomposition checkpoint {}", path.display()))?;
    ensure!(
        model.dim() == manifest.dim,
        "checkpoint {} has d = {} but manifest {} has d = {}",
        path.display(),
        model.dim(),
        cfg.manifest()?.display(),
        manifest.dim
    );
    Ok(model.freeze())
}

fn synth_gen(common: &Common, out: Option<PathBuf>, o: &SynthOverrides) -> Result<()> {
    let mut cfg = base_config(common, out)?;
    o.apply(&mut cfg.synth);
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
    }
    let data = synth_generate(&cfg.synth)?;
    let dir = cfg.out()?.to_path_buf();
    cfg.manifest = Some(dir.join("manifest.toml"));
    cfg.write_effective()?;
    let manifest = data.write(&dir)?;
    println!(
        "wrote {} datasets (d = {}) and {}",
        manifest.datasets.len(),
        manifest.dim,
        dir.join("manifest.toml").display()
    );
    Ok(())
}

fn history_csv(run: &UfdRun) -> String {
    let mut out = String::from("step,loss_s,loss_r,loss_p,loss_m,total\n");
    for (i, b) in run.history.iter().enumerate() {
        write!(out, "{i}").expect("String write");
        for term in LossTerm::ALL {
            match b.get(term) {
                Some(v) => write!(out, ",{v}"),
                None => write!(out, ","),
            }
            .expect("String write");
        }
        writeln!(out, ",{}", b.total).expect("String write");
    }
    out
}

fn train_ufd(common: &Common, out: Option<PathBuf>, o: &ExperimentOverrides) -> Result<()> {
    let cfg = experiment_config(common, out, o)?;
    let manifest = load_manifest(&cfg)?;
    let dir = cfg.write_effective()?;
    let run = train_ufd_for_seed(&cfg.experiment, &manifest, cfg.experiment.seed)?;
    let ckpt = dir.join(UFD_CHECKPOINT);
    save_ufd(&ckpt, &run.model)?;
    write_file(&dir.join("ufd_history.csv"), &history_csv(&run))?;
    let last = run.history.last().map_or(f64::NAN, |b| b.total);
    println!(
        "trained on {} rows for {} steps, final loss {last:.6}; wrote {}",
        run.rows,
        run.history.len(),
        ckpt.display()
    );
    Ok(())
}

struct PairFilter {
    source_domain: Option<String>,
    target_domain: Option<String>,
}

fn train_task(
    common: &Common,
    out: Option<PathBuf>,
    o: &ExperimentOverrides,
    ufd_path: &Path,
    filter: PairFilter,
) -> Result<()> {
    let cfg = experiment_config(common, out, o)?;
    let manifest = load_manifest(&cfg)?;
    let ufd = load_frozen(ufd_path, &cfg, &manifest)?;
    let pairs = enumerate_pairs(&cfg.experiment, &manifest)?;
    let matches = |want: &Option<String>, have: &String| want.as_ref().is_none_or(|w| w == have);
    let (index, pair) = pairs
        .iter()
        .enumerate()
        .find(|(_, p)| {
            matches(&filter.source_domain, &p.source_domain)
                && matches(&filter.target_domain, &p.target_domain)
        })
        .context("no transfer pair matches the requested domains and language")?;
    let dir = cfg.write_effective()?;
    let e = &cfg.experiment;
    let train = manifest.get(&pair.source_language, &pair.source_domain, Split::Train)?;
    let validation = manifest.get(&pair.target_language, &pair.target_domain, Split::Validation)?;
    let run = train_task_stage(e, &ufd, train, validation, &mut head_rng(e.seed, index))?;
    let ckpt = dir.join(CLASSIFIER_CHECKPOINT);
    save_classifier(&ckpt, &run.classifier)?;
    let mut hist = String::from("epoch,train_loss,validation_loss,validation_accuracy\n");
    for i in 0..run.train_losses.len() {
        writeln!(
            hist,
            "{i},{},{},{}",
            run.train_losses[i], run.validation_losses[i], run.validation_accuracies[i]
        )
        .expect("String write");
    }
    write_file(&dir.join("task_history.csv"), &hist)?;
    println!(
        "pair {}: kept epoch {} (validation loss {:.6}); wrote {}",
        pair.name(),
        run.selected_epoch,
        run.selected_validation_loss(),
        ckpt.display()
    );
    Ok(())
}

fn eval(
    common: &Common,
    out: Option<PathBuf>,
    o: &ExperimentOverrides,
    ufd_path: &Path,
    clf_path: &Path,
    language: Option<&str>,
) -> Result<()> {
    let cfg = experiment_config(common, out, o)?;
    let manifest = load_manifest(&cfg)?;
    let ufd = load_frozen(ufd_path, &cfg, &manifest)?;
    let clf = load_classifier(clf_path, cfg.experiment.learning_rate)
        .with_context(|| format!("loading classifier checkpoint {}", clf_path.display()))?;
    ensure!(
        clf.dim() == ufd.dim(),
        "classifier {} has d = {} but decomposition checkpoint {} has d = {}",
        clf_path.display(),
        clf.dim(),
        ufd_path.display(),
        ufd.dim()
    );
    let tests: Vec<_> = manifest
        .datasets
        .iter()
        .filter(|d| d.split == Split::Test && language.is_none_or(|l| d.language == l))
        .collect();
    if tests.is_empty() {
        bail!("the manifest has no matching test set");
    }
    let mut table = format!("{:<24} {:>6} {:>9}\n", "dataset", "rows", "accuracy");
    let mut csv = String::from("language,domain,rows,accuracy\n");
    let mut sum = 0.0;
    for ds in &tests {
        let acc = evaluate(&ufd, &clf, ds)?;
        sum += acc;
        writeln!(table, "{:<24} {:>6} {:>9.4}", ds.key(), ds.rows(), acc).expect("String write");
        writeln!(csv, "{},{},{},{acc}", ds.language, ds.domain, ds.rows()).expect("String write");
    }
    writeln!(
        table,
        "{:<24} {:>6} {:>9.4}",
        "mean",
        "",
        sum / tests.len() as f64
    )
    .expect("String write");
    print!("{table}");
    if cfg.out.is_some() {
        let dir = cfg.write_effective()?;
        write_file(&dir.join("eval.csv"), &csv)?;
    }
    Ok(())
}

fn grid(common: &Common, out: Option<PathBuf>, o: &ExperimentOverrides, sizes: &[usize]) -> Result<()> {
    let cfg = experiment_config(common, out, o)?;
    let manifest = load_manifest(&cfg)?;
    let dir = cfg.write_effective()?;
    let (text, csv) = if sizes.is_empty() {
        let report = run_experiment_grid(&cfg.experiment, &manifest)?;
        let mut curves = String::from("seed,epoch,mean_loss\n");
        for (seed, curve) in &report.ufd_curves {
            for (i, v) in curve.iter().enumerate() {
                writeln!(curves, "{seed},{i},{v}").expect("String write");
            }
        }
        write_file(&dir.join("ufd_curves.csv"), &curves)?;
        (report.to_text(), report.to_csv())
    } else {
        let sweep = run_size_sweep(&cfg.experiment, &manifest, sizes)?;
        (sweep.to_text(), sweep.to_csv())
    };
    write_file(&dir.join("report.txt"), &text)?;
    write_file(&dir.join("report.csv"), &csv)?;
    print!("{text}");
    Ok(())
}

fn mi_bench(common: &Common, out: Option<PathBuf>, o: &BenchOverrides) -> Result<()> {
    let mut cfg = base_config(common, out)?;
    o.apply(&mut cfg.bench);
    if let Some(seed) = common.seed {
        cfg.bench.seed = seed;
    }
    let report = run_gaussian_bench(&cfg.bench)?;
    let csv = report.to_csv();
    if cfg.out.is_some() {
        let dir = cfg.write_effective()?;
        write_file(&dir.join("mi_bench.csv"), &csv)?;
    }
    print!("{csv}");
    for e in &cfg.bench.estimators {
        println!(
            "{} strictly increasing: {}",
            e.name(),
            report.strictly_increasing(*e)
        );
    }
    Ok(())
}

fn project(
    features: &Path,
    out: &Path,
    labels: Option<&Path>,
    tag: &str,
    ufd: Option<&Path>,
    part: Part,
    seed: u64,
) -> Result<()> {
    let h = read_embeddings(features)?;
    let x = match ufd {
        None => h,
        Some(path) => {
            let frozen = load_ufd(path, 1e-4)
                .with_context(|| format!("loading decomposition checkpoint {}", path.display()))?
                .freeze();
            ensure!(
                frozen.dim() == h.cols(),
                "checkpoint {} has d = {} but {} has d = {}",
                path.display(),
                frozen.dim(),
                features.display(),
                h.cols()
            );
            let (f_s, f_p) = frozen.extract(&h)?;
            match part {
                Part::Invariant => f_s,
                Part::Specific => f_p,
            }
        }
    };
    let tags: Vec<String> = match labels {
        Some(p) => read_labels(p, None)?.iter().map(|l| l.to_string()).collect(),
        None => vec![tag.to_string(); x.rows()],
    };
    let projection = pca_project_2d(&x, &tags, seed)?;
    projection.write_csv(out)?;
    println!(
        "projected {} rows; component variances {:.6} {:.6}; wrote {}",
        x.rows(),
        projection.variances[0],
        projection.variances[1],
        out.display()
    );
    Ok(())
}
