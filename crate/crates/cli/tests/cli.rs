use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn ufd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ufd"))
        .args(args)
        .output()
        .expect("spawn ufd")
}

fn ok(args: &[&str]) -> String {
    let out = ufd(args);
    assert!(
        out.status.success(),
        "ufd {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small two-language synthetic set; returns the manifest path.
fn small_data(dir: &Path, d: usize) -> PathBuf {
    let out = dir.join(format!("data{d}"));
    let d = d.to_string();
    ok(&[
        "synth-gen",
        "--out",
        p(&out),
        "--d",
        &d,
        "--k",
        "2",
        "--m",
        "2",
        "--languages",
        "en,de",
        "--train-rows",
        "40",
        "--validation-rows",
        "20",
        "--test-rows",
        "40",
        "--unlabeled-rows",
        "64",
        "--seed",
        "3",
    ]);
    out.join("manifest.toml")
}

#[test]
fn end_to_end_on_d32_within_a_minute() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let start = Instant::now();
    ok(&[
        "synth-gen",
        "--out",
        p(&t.join("data")),
        "--d",
        "32",
        "--languages",
        "en,de",
        "--seed",
        "1",
    ]);
    let manifest = t.join("data/manifest.toml");
    ok(&[
        "train-ufd",
        "--manifest",
        p(&manifest),
        "--out",
        p(&t.join("ufd")),
        "--seed",
        "1",
    ]);
    let ckpt = t.join("ufd/ufd.ckpt");
    ok(&[
        "train-task",
        "--manifest",
        p(&manifest),
        "--ufd",
        p(&ckpt),
        "--out",
        p(&t.join("task")),
        "--seed",
        "1",
    ]);
    let table = ok(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--ufd",
        p(&ckpt),
        "--classifier",
        p(&t.join("task/classifier.ckpt")),
        "--out",
        p(&t.join("eval")),
    ]);
    assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());

    assert!(
        table.contains("de/books/test") && table.contains("mean"),
        "{table}"
    );
    for dir in ["data", "ufd", "task", "eval"] {
        assert!(
            t.join(dir).join("config.toml").is_file(),
            "{dir} lacks its effective config"
        );
    }
    assert!(t.join("ufd/ufd_history.csv").is_file());
    assert!(t.join("task/task_history.csv").is_file());
    let csv = fs::read_to_string(t.join("eval/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn eval_with_mismatched_dims_names_both() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let m8 = small_data(t, 8);
    let m6 = small_data(t, 6);
    ok(&[
        "train-ufd",
        "--manifest",
        p(&m8),
        "--out",
        p(&t.join("ufd")),
        "--ufd-epochs",
        "1",
    ]);
    let ckpt = t.join("ufd/ufd.ckpt");
    ok(&[
        "train-task",
        "--manifest",
        p(&m8),
        "--ufd",
        p(&ckpt),
        "--out",
        p(&t.join("task")),
        "--task-epochs",
        "2",
        "--validation-size",
        "20",
    ]);
    let out = ufd(&[
        "eval",
        "--manifest",
        p(&m6),
        "--ufd",
        p(&ckpt),
        "--classifier",
        p(&t.join("task/classifier.ckpt")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d = 8") && err.contains("d = 6"), "{err}");
}

#[test]
fn grid_ablation_flag_selects_the_mode_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let m = small_data(t, 8);
    let run = |name: &str| {
        let out = t.join(name);
        ok(&[
            "grid",
            "--manifest",
            p(&m),
            "--out",
            p(&out),
            "--ablation",
            "2max-min-mi",
            "--seeds",
            "2",
            "--ufd-epochs",
            "2",
            "--task-epochs",
            "3",
            "--baseline",
            "--seed",
            "9",
            "--validation-size",
            "20",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let cfg = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(cfg.contains("ablation = \"2max-min-mi\""), "{cfg}");
    assert!(cfg.contains("seed = 9"));
    for f in ["report.csv", "report.txt", "ufd_curves.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(csv.starts_with("pair,seed,ufd_loss,task_loss,validation_loss,accuracy,baseline_accuracy"));
}

#[test]
fn repeated_training_writes_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let m = small_data(t, 8);
    for name in ["a", "b"] {
        ok(&[
            "train-ufd",
            "--manifest",
            p(&m),
            "--out",
            p(&t.join(name)),
            "--ufd-epochs",
            "2",
            "--seed",
            "4",
        ]);
    }
    for f in ["ufd.ckpt", "ufd.ckpt.index", "ufd_history.csv"] {
        assert_eq!(
            fs::read(t.join("a").join(f)).unwrap(),
            fs::read(t.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    ok(&[
        "train-ufd",
        "--manifest",
        p(&m),
        "--out",
        p(&t.join("c")),
        "--ufd-epochs",
        "2",
        "--seed",
        "5",
    ]);
    assert_ne!(
        fs::read(t.join("a/ufd.ckpt")).unwrap(),
        fs::read(t.join("c/ufd.ckpt")).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let m = small_data(t, 8);
    let cfg = t.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "manifest = {:?}\nout = {:?}\n\n[experiment]\nufd_epochs = 1\nablation = \"max-mi\"\n",
            p(&m),
            p(&t.join("from-file"))
        ),
    )
    .unwrap();
    ok(&[
        "train-ufd",
        "--config",
        p(&cfg),
        "--ablation",
        "2max-2min",
        "--out",
        p(&t.join("run")),
    ]);
    let eff = fs::read_to_string(t.join("run/config.toml")).unwrap();
    assert!(eff.contains("ablation = \"2max-2min\""), "{eff}");
    assert!(eff.contains("ufd_epochs = 1"), "{eff}");
    assert!(!t.join("from-file").exists());
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert!(!ufd(&["grid", "--no-such-flag"]).status.success());
    assert!(!ufd(&["grid", "--ablation", "min-max"]).status.success());
    let missing = ufd(&[
        "train-ufd",
        "--manifest",
        p(&t.join("nope.toml")),
        "--out",
        p(&t.join("o")),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.toml"));
    let m = small_data(t, 8);
    let wrong_d = ufd(&[
        "train-ufd",
        "--manifest",
        p(&m),
        "--out",
        p(&t.join("o")),
        "--d",
        "9",
    ]);
    assert!(!wrong_d.status.success());
    let no_pair = ufd(&[
        "grid",
        "--manifest",
        p(&m),
        "--out",
        p(&t.join("g")),
        "--target-language",
        "fr",
    ]);
    assert!(!no_pair.status.success());
}

#[test]
fn mi_bench_and_project_write_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let text = ok(&[
        "mi-bench",
        "--steps",
        "5",
        "--seeds",
        "1",
        "--hidden",
        "4",
        "--eval-rows",
        "32",
        "--out",
        p(&t.join("mi")),
    ]);
    assert!(
        text.starts_with("estimator,rho,analytic,mean,per_seed\n"),
        "{text}"
    );
    assert_eq!(
        fs::read_to_string(t.join("mi/mi_bench.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );

    let m = small_data(t, 8);
    let emb = m.parent().unwrap().join("en_books_test.ufde");
    let labels = m.parent().unwrap().join("en_books_test.labels");
    let out = t.join("proj.csv");
    ok(&[
        "project",
        "--features",
        p(&emb),
        "--labels",
        p(&labels),
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("x,y,tag\n"));
    assert_eq!(csv.lines().count(), 41);

    ok(&[
        "train-ufd",
        "--manifest",
        p(&m),
        "--out",
        p(&t.join("u")),
        "--ufd-epochs",
        "1",
    ]);
    let out2 = t.join("proj_fp.csv");
    ok(&[
        "project",
        "--features",
        p(&emb),
        "--ufd",
        p(&t.join("u/ufd.ckpt")),
        "--part",
        "specific",
        "--out",
        p(&out2),
    ]);
    assert!(fs::read_to_string(&out2)
        .unwrap()
        .lines()
        .skip(1)
        .all(|l| l.ends_with(",all")));
}
