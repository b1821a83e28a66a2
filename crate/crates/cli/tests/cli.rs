use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn milbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_milbo"))
        .args(args)
        .env_remove("MILBO_THREADS")
        .output()
        .expect("spawn milbo")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn missing_features_is_a_data_format_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("graph.edges"), "0 1\n").unwrap();
    let out = milbo(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[data-format]:"), "{err}");
}

#[test]
fn unknown_flag_is_rejected() {
    let out = milbo(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[usage]:"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = milbo(&[
        "train",
        "--data",
        p(&fixture("sbm10")),
        "--out",
        p(dir.path()),
        "--set",
        "lamda=0.3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[config]:"), "{}", stderr(&out));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = milbo(&[
        "train",
        "--data",
        p(&fixture("sbm10")),
        "--out",
        p(&out_dir),
        "--set",
        "epochs=0",
        "--set",
        "d_hidden=8",
        "--set",
        "d_out=4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"epochs\": 0"));
    let ckpt = milbo::Checkpoint::load(&out_dir.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.epoch, 0);
    assert!(out_dir.join("config.resolved.json").is_file());
    assert_eq!(fs::read_to_string(out_dir.join("embeddings.csv")).unwrap().lines().count(), 10);
}

#[test]
fn training_on_fixture_lowers_the_loss_and_embed_matches() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = milbo(&[
        "train",
        "--data",
        p(&fixture("sbm90")),
        "--config",
        p(&fixture("../configs/sbm90-train.json")),
        "--out",
        p(&run),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = milbo::train::read_log(&run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.len(), 200);
    assert!(log.last().unwrap().loss.total < log[0].loss.total);

    let again = dir.path().join("again.csv");
    let out = milbo(&[
        "embed",
        "--data",
        p(&fixture("sbm90")),
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--out",
        p(&again),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&again).unwrap(),
        fs::read_to_string(run.join("embeddings.csv")).unwrap()
    );

    let report = dir.path().join("report.json");
    let out = milbo(&[
        "eval",
        "--embeddings",
        p(&again),
        "--data",
        p(&fixture("sbm90")),
        "--out",
        p(&report),
        "--set",
        "repeats=3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: milbo::EvalReport =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report.accuracies.len(), 3);
    assert!(report.mean >= 0.9, "{report:?}");
}

#[test]
fn synth_round_trips_through_loader() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"blocks": [30, 30, 30], "p_in": 0.3, "p_out": 0.02, "feature_noise": 0.5, "seed": 7}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let out = milbo(&["synth", "--spec", p(&spec), "--out", p(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let g = milbo::load_graph(&data).unwrap();
    assert_eq!(g.num_nodes(), 90);
    assert_eq!(g.num_classes(), Some(3));
    // Same spec and seed as the committed fixture.
    let committed = milbo::load_graph(&fixture("sbm90")).unwrap();
    assert_eq!(g.edges(), committed.edges());
    assert_eq!(g.features(), committed.features());
}

#[test]
fn gradcheck_passes_on_default_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let out = milbo(&["gradcheck", "--out", p(&report)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max relative error"));
    assert!(text.contains("PASS"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(json["max_rel_error"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn lambda_sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"lambda": [0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0]}"#).unwrap();
    let probe = dir.path().join("probe.json");
    fs::write(&probe, r#"{"epochs": 50, "repeats": 1}"#).unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = milbo(&[
        "sweep",
        "--grid",
        p(&grid),
        "--data",
        p(&fixture("sbm10")),
        "--probe-config",
        p(&probe),
        "--set",
        "epochs=3",
        "--set",
        "d_hidden=8",
        "--set",
        "d_out=4",
        "--out",
        p(&csv),
        "--workers",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("lambda,"));
    assert!(lines[1].starts_with("0.1,"));
    assert!(lines[10].starts_with("1,"));
}
