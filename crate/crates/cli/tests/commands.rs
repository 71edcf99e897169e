use std::path::Path;
use std::process::{Command, Output};

use identikit::bioeval::{embed_dataset, identification_top1, parse_kv};
use identikit::datagen::{read_csv, Provenance};
use identikit::embedder::load_model;

const TINY_EXPERIMENT: &str = r#"
num_classes = 4
per_class = 6
input_dim = 8
heldout_classes = 3
heldout_per_class = 4
hidden_dims = [8]
embedding_dim = 4
teacher_epochs = 2
teacher_milestones = [1]
teacher_batch_size = 8
student_epochs = 2
student_milestones = [1]
student_batch_size = 8
subsets = [3, 6]
histogram_bins = 10
"#;

/// Same student hyperparameters as `TINY_EXPERIMENT`.
const TINY_TRAIN: &str = r#"
learning_rate = 0.1
batch_size = 8
epochs = 2
milestones = [1]
hidden_dims = [8]
embedding_dim = 4
"#;

fn identikit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_identikit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = identikit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn kv(path: &Path) -> Vec<(String, String)> {
    parse_kv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> &'a str {
    &pairs.iter().find(|(k, _)| k == key).unwrap().1
}

/// gen + a short CLS model in `dir`; returns the data and model paths.
fn small_world(dir: &Path, sigma: f64) -> (std::path::PathBuf, std::path::PathBuf) {
    let cfg = dir.join("gen.toml");
    std::fs::write(
        &cfg,
        format!(
            "num_classes = 5\nper_class = 8\ninput_dim = 8\nsubsets = [8]\nsigma_authentic = {sigma}\nsigma_synthetic = {sigma}\n"
        ),
    )
    .unwrap();
    let data = dir.join("data");
    ok(&["gen", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    let train_cfg = dir.join("train.toml");
    std::fs::write(
        &train_cfg,
        "epochs = 8\nmilestones = [6]\nbatch_size = 8\nembedding_dim = 8\n",
    )
    .unwrap();
    let model_dir = dir.join("model");
    ok(&[
        "train",
        "--data",
        s(&data.join("authentic.csv")),
        "--config",
        s(&train_cfg),
        "--out",
        s(&model_dir),
    ]);
    (data, model_dir.join("model.idk"))
}

#[test]
fn gen_creates_missing_dirs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.toml");
    std::fs::write(&cfg, "num_classes = 10\nper_class = 60\n").unwrap();
    let a = tmp.path().join("nested/a");
    let b = tmp.path().join("b");
    ok(&["gen", "--config", s(&cfg), "--seed", "9", "--out", s(&a)]);
    ok(&["gen", "--config", s(&cfg), "--seed", "9", "--out", s(&b)]);
    for f in ["authentic.csv", "synthetic.csv", "manifest.txt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let rows = std::fs::read_to_string(a.join("synthetic.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 600 + 1);
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("sha256.synthetic.csv = "));
    assert!(manifest.contains("complete = true"));
}

#[test]
fn teacher_strategies_demand_the_teacher_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = small_world(tmp.path(), 1.0);
    for strategy in ["kt", "cl"] {
        let out = identikit(&[
            "train",
            "--data",
            s(&data.join("synthetic.csv")),
            "--strategy",
            strategy,
            "--out",
            s(&tmp.path().join("x")),
        ]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("--teacher"));
    }
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(identikit(&["train", "--bogus"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = identikit(&[
        "embed",
        "--model",
        s(&tmp.path().join("missing.idk")),
        "--data",
        s(&tmp.path().join("missing.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_report_has_one_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, model) = small_world(tmp.path(), 1.0);
    let csv = std::fs::read_to_string(model.with_file_name("train.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8 + 1);
}

#[test]
fn verify_on_separable_data_has_zero_eer() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = small_world(tmp.path(), 0.0);
    let out = tmp.path().join("eval");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--mode",
        "verify",
        "--data",
        s(&data.join("authentic.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(lookup(&kv(&out.join("verify.txt")), "eer_exact"), "0/1");
}

#[test]
fn identify_matches_the_library_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = small_world(tmp.path(), 1.0);
    let train = data.join("authentic.csv");
    let out = tmp.path().join("eval");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--mode",
        "identify",
        "--data",
        s(&train),
        "--out",
        s(&out),
    ]);
    let (m, head) = load_model(&model).unwrap();
    let ds = read_csv(&train, Provenance::Authentic).unwrap();
    let (emb, labels) = embed_dataset(&m, &ds).unwrap();
    let expected = identification_top1(&emb, &labels, &head.unwrap()).unwrap();
    assert_eq!(
        lookup(&kv(&out.join("identify.txt")), "id_top1_exact"),
        expected.to_string()
    );
}

#[test]
fn link_mode_reports_three_sets_and_the_operating_point() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = small_world(tmp.path(), 1.0);
    let out = tmp.path().join("eval");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--mode",
        "link",
        "--data",
        s(&data.join("authentic.csv")),
        "--synthetic",
        s(&data.join("synthetic.csv")),
        "--out",
        s(&out),
    ]);
    let pairs = kv(&out.join("link.txt"));
    for prefix in ["intra_authentic_", "intra_synthetic_", "cross_"] {
        assert!(pairs.iter().any(|(k, _)| k == &format!("{prefix}eer")));
    }
    assert!(pairs
        .iter()
        .any(|(k, _)| k == "expected_nonmatches_per_100"));

    let linked = tmp.path().join("link");
    ok(&[
        "link",
        "--model",
        s(&model),
        "--authentic",
        s(&data.join("authentic.csv")),
        "--synthetic",
        s(&data.join("synthetic.csv")),
        "--bins",
        "10",
        "--out",
        s(&linked),
    ]);
    assert_eq!(
        std::fs::read(linked.join("link.txt")).unwrap(),
        std::fs::read(out.join("link.txt")).unwrap()
    );
    assert!(linked.join("link_cross_hist.csv").exists());
}

#[test]
fn train_with_master_seed_reproduces_an_experiment_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(&cfg, TINY_EXPERIMENT).unwrap();
    let run = tmp.path().join("run");
    ok(&[
        "experiment",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--out",
        s(&run),
    ]);
    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 1 + 2 * 4);

    let train_cfg = tmp.path().join("train.toml");
    std::fs::write(&train_cfg, TINY_TRAIN).unwrap();
    let out = tmp.path().join("kt");
    ok(&[
        "train",
        "--data",
        s(&run.join("data/synthetic.csv")),
        "--subset",
        "3",
        "--strategy",
        "kt",
        "--teacher",
        s(&run.join("models/teacher.idk")),
        "--config",
        s(&train_cfg),
        "--seed",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        std::fs::read(out.join("model.idk")).unwrap(),
        std::fs::read(run.join("models/synthetic-3_kt.idk")).unwrap()
    );

    let report = ok(&["report", "--out", s(&run)]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.starts_with("dataset"));
    assert!(text.contains("expected_nonmatches_per_100"));
    assert!(run.join("report.txt").exists());
}
