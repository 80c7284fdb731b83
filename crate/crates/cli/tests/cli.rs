use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use featlik::features::{write_feature_dump, FeatureSet};
use featlik::scoring;
use featlik::syngen::{generate, GeneratorKind, GeneratorSpec};
use tempfile::TempDir;

fn featlik(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featlik")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dump(dir: &TempDir, name: &str, dims: usize, separation: f64, seed: u64) -> PathBuf {
    let fs = generate(&GeneratorSpec {
        kind: GeneratorKind::GaussianClasses { class_scales: vec![] },
        dims,
        n_classes: 2,
        samples_per_class: 150,
        separation,
        noise: 1.0,
        seed,
    })
    .unwrap();
    let path = dir.path().join(name);
    write_feature_dump(&fs, &path).unwrap();
    path
}

fn fit(input: &Path, model: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--input", p(input), "--model", p(model)];
    args.extend_from_slice(extra);
    featlik(&args)
}

#[test]
fn fit_tied_smoke() {
    let dir = TempDir::new().unwrap();
    let train = dump(&dir, "train.fdmp", 16, 4.0, 1);
    let model = dir.path().join("m.fmod");
    let out = fit(&train, &model, &["--kind", "tied"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(model.exists());
    let text = stdout(&out);
    assert!(text.contains("class 0: 150 samples"));
    assert!(text.contains("class 1: 150 samples"));
    let pca = text.lines().find(|l| l.starts_with("pca:")).unwrap();
    let d: usize = pca.split(" -> ").nth(2).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((1..=16).contains(&d));
}

#[test]
fn gmm_with_one_component_matches_separate() {
    let dir = TempDir::new().unwrap();
    let train = dump(&dir, "train.fdmp", 8, 3.0, 2);
    let (gmm, sep) = (dir.path().join("g.fmod"), dir.path().join("s.fmod"));
    let out = fit(&train, &gmm, &["--kind", "gmm", "--gmm-max-k", "1", "--pool", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("class 1: selected K = 1"));
    assert!(fit(&train, &sep, &["--kind", "sep", "--pool", "1"]).status.success());

    let score = |model: &Path, name: &str| {
        let path = dir.path().join(name);
        let o = featlik(&["score", "--input", p(&train), "--model", p(model), "--out", p(&path)]);
        assert!(o.status.success(), "{}", stderr(&o));
        scoring::import_scores(&path).unwrap()
    };
    let (a, b) = (score(&gmm, "g.csv"), score(&sep, "s.csv"));
    for (x, y) in a.loglik.iter().zip(&b.loglik) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
}

#[test]
fn all_unlabeled_input_is_a_fit_failure() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64 % 7.0, 1.0, 0.5]).collect();
    let fs = FeatureSet::from_rows("l", &rows, vec![-1; 20]).unwrap();
    let path = dir.path().join("u.fdmp");
    write_feature_dump(&fs, &path).unwrap();
    let out = fit(&path, &dir.path().join("m.fmod"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no labeled samples"));
    assert!(!dir.path().join("m.fmod").exists());
}

#[test]
fn classify_separated_training_set() {
    let dir = TempDir::new().unwrap();
    let train = dump(&dir, "train.fdmp", 8, 12.0, 3);
    let model = dir.path().join("m.fmod");
    assert!(fit(&train, &model, &["--kind", "sep", "--pool", "1"]).status.success());
    let scores = dir.path().join("c.csv");
    let out = featlik(&["classify", "--input", p(&train), "--model", p(&model), "--out", p(&scores)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let pct: f64 = text.trim_start_matches("accuracy ").split('%').next().unwrap().parse().unwrap();
    assert!(pct >= 99.0, "{text}");
    assert_eq!(scoring::import_scores(&scores).unwrap().n_samples(), 300);
}

#[test]
fn mismatched_dimension_exits_4() {
    let dir = TempDir::new().unwrap();
    let train = dump(&dir, "train.fdmp", 16, 4.0, 4);
    let other = dump(&dir, "other.fdmp", 12, 4.0, 5);
    let model = dir.path().join("m.fmod");
    assert!(fit(&train, &model, &[]).status.success());
    for cmd in ["score", "classify"] {
        let out = featlik(&[cmd, "--input", p(&other), "--model", p(&model)]);
        assert_eq!(out.status.code(), Some(4), "{cmd}: {}", stderr(&out));
    }
    let out = featlik(&["fit", "--input", p(&train), "--input", p(&other), "--model", p(&model)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let train = dump(&dir, "train.fdmp", 8, 3.0, 6);
    let run = |tag: &str| {
        let model = dir.path().join(format!("{tag}.fmod"));
        let scores = dir.path().join(format!("{tag}.csv"));
        let out = fit(&train, &model, &["--kind", "gmm", "--gmm-max-k", "3", "--seed", "11", "--pool", "2"]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(featlik(&["score", "--input", p(&train), "--model", p(&model), "--out", p(&scores)])
            .status
            .success());
        (std::fs::read(model).unwrap(), std::fs::read(scores).unwrap())
    };
    let (m1, s1) = run("a");
    let (m2, s2) = run("b");
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);
}

fn score_file(dir: &TempDir, name: &str, values: &[f64]) -> PathBuf {
    let mut text = String::from("index,true_label,predicted,uncertainty,loglik_0\n");
    for (i, v) in values.iter().enumerate() {
        text.push_str(&format!("{i},0,0,{v},{v}\n"));
    }
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn eval_perfect_separation() {
    let dir = TempDir::new().unwrap();
    let ins = score_file(&dir, "in.csv", &[5.0, 6.0, 7.5]);
    let ood = score_file(&dir, "ood.csv", &[-1.0, 0.0, 2.0, 4.9]);
    for positive in ["in", "ood"] {
        let out = featlik(&["eval", "--input", p(&ins), "--input", p(&ood), "--positive", positive]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).contains("AUROC 100.0 / AUPR 100.0"));
    }
    let sweep = dir.path().join("sweep.csv");
    let out = featlik(&["eval", "--input", p(&ins), "--input", p(&ood), "--format", "tsv", "--out", p(&sweep)]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("auroc\t1.0"));
    assert_eq!(std::fs::read_to_string(sweep).unwrap().lines().count(), 8);
}

#[test]
fn error_paths_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let train = dump(&dir, "train.fdmp", 8, 3.0, 7);
    let model = dir.path().join("m.fmod");
    assert!(fit(&train, &model, &["--pool", "2"]).status.success());
    let missing = dir.path().join("missing");
    let garbage = dir.path().join("garbage");
    std::fs::write(&garbage, b"not a dump at all").unwrap();
    let ins = score_file(&dir, "in.csv", &[1.0, 2.0]);
    let empty = score_file(&dir, "empty.csv", &[]);

    let tiny = FeatureSet::from_rows("l", &[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]], vec![0, 0, 1]).unwrap();
    let tiny_path = dir.path().join("tiny.fdmp");
    write_feature_dump(&tiny, &tiny_path).unwrap();
    let unlabeled = FeatureSet::from_rows("l", &[vec![0.0; 8]], vec![-1]).unwrap();
    let unlabeled_path = dir.path().join("unlabeled.fdmp");
    write_feature_dump(&unlabeled, &unlabeled_path).unwrap();
    let odd = dump(&dir, "odd.fdmp", 7, 3.0, 8);

    let nowhere = dir.path().join("no/such/dir/x");
    let m = p(&model);
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["fit", "--input", p(&missing), "--model", m], 2),
        (vec!["fit", "--input", p(&garbage), "--model", m], 2),
        (vec!["fit", "--input", p(&train), "--model", m, "--retain", "0"], 2),
        (vec!["fit", "--input", p(&train), "--model", m, "--retain", "1.5"], 2),
        (vec!["fit", "--input", p(&train), "--model", m, "--pool", "0"], 2),
        (vec!["fit", "--input", p(&train), "--model", m, "--gmm-max-k", "0"], 2),
        (vec!["fit", "--input", p(&train), "--model", m, "--kind", "nope"], 2),
        (vec!["fit", "--input", p(&train), "--model", p(&nowhere)], 2),
        (vec!["fit", "--input", p(&tiny_path), "--model", m, "--pool", "1", "--kind", "sep"], 3),
        (vec!["fit", "--input", p(&odd), "--model", m, "--pool", "2"], 3),
        (vec!["fit", "--model", m], 2),
        (vec!["score", "--input", p(&missing), "--model", m], 2),
        (vec!["score", "--input", p(&train), "--model", p(&missing)], 2),
        (vec!["score", "--input", p(&train), "--model", p(&garbage)], 2),
        (vec!["score", "--input", p(&garbage), "--model", m], 2),
        (vec!["score", "--input", p(&train), "--model", m, "--out", p(&nowhere)], 2),
        (vec!["classify", "--input", p(&unlabeled_path), "--model", m], 2),
        (vec!["classify", "--input", p(&missing), "--model", m], 2),
        (vec!["eval", "--input", p(&ins)], 2),
        (vec!["eval", "--input", p(&ins), "--input", p(&ins), "--input", p(&ins)], 2),
        (vec!["eval", "--input", p(&ins), "--input", p(&missing)], 2),
        (vec!["eval", "--input", p(&ins), "--input", p(&garbage)], 2),
        (vec!["eval", "--input", p(&ins), "--input", p(&empty)], 2),
        (vec!["eval", "--input", p(&ins), "--input", p(&ins), "--positive", "both"], 2),
        (vec!["frobnicate"], 2),
    ];
    for (args, code) in cases {
        let out = featlik(&args);
        assert_eq!(out.status.code(), Some(code), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty(), "{args:?}");
    }

    let out = fit(&tiny_path, &model, &["--pool", "1", "--kind", "sep"]);
    assert!(stderr(&out).contains("class 1"), "{}", stderr(&out));
}
