use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use affect_forge::model::load_weights;

fn af(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affect-forge"))
        .args(args)
        .env_remove("AFFECT_FORGE_THREADS")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A synthetic corpus and one-epoch weights, built once per test binary.
fn trained() -> &'static (PathBuf, PathBuf) {
    static CELL: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{}", std::process::id()));
        let data = root.join("data");
        let o = af(&["synth", "--out-dir", p(&data), "--synth-levels", "3", "--synth-players", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let run = root.join("run");
        let o = af(&["train", "--config", p(&data.join("train.cfg")), "--epochs", "1", "--out-dir", p(&run)]);
        assert!(o.status.success(), "{}", stderr(&o));
        (data, run)
    })
}

#[test]
fn train_writes_weights_history_and_report() {
    let (_, run) = trained();
    for f in ["weights.afw", "history.tsv", "metrics.tsv", "metrics.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history = std::fs::read_to_string(run.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("metrics.json")).unwrap()).unwrap();
    let n = 904 * 3 - 9;
    let (train, val) = ((n as f64 * 0.8).round() as usize, (n as f64 * 0.1).round() as usize);
    assert_eq!(json["count"], n - train - val);
}

#[test]
fn missing_labels_exit_two_naming_the_path() {
    let (data, _) = trained();
    let o = af(&["train", "--config", p(&data.join("train.cfg")), "--labels", "/nowhere/labels.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("/nowhere/labels.tsv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn bad_hyperparameter_and_unknown_metric_are_config_failures() {
    assert_eq!(af(&["train", "--lr", "-1"]).status.code(), Some(2));
    assert_eq!(af(&["train", "--metric", "joy"]).status.code(), Some(2));
    assert_eq!(af(&["eval"]).status.code(), Some(2));
}

#[test]
fn level_only_variant_has_600_wide_concat() {
    let (data, _) = trained();
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("lo-{}", std::process::id()));
    let o = af(&[
        "train",
        "--config",
        p(&data.join("train.cfg")),
        "--variant",
        "level-only",
        "--epochs",
        "1",
        "--out-dir",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let w = load_weights(&out.join("weights.afw")).unwrap();
    assert_eq!(w.config.concat_width().unwrap(), 600);
}

#[test]
fn eval_reproduces_the_training_test_report() {
    let (data, run) = trained();
    let out = run.with_file_name("eval");
    let o = af(&[
        "eval",
        "--config",
        p(&data.join("train.cfg")),
        "--weights",
        p(&run.join("weights.afw")),
        "--out-dir",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out.join("metrics.tsv")).unwrap(),
        std::fs::read(run.join("metrics.tsv")).unwrap()
    );
    let o = af(&[
        "eval",
        "--config",
        p(&data.join("train.cfg")),
        "--weights",
        p(&run.join("weights.afw")),
        "--metric",
        "challenge",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn crosseval_gwario_and_ordered_levels() {
    let (_, run) = trained();
    let root = run.with_file_name("cross");
    let weights = run.join("weights.afw");
    assert!(af(&["synth", "--synth-kind", "gwario", "--out-dir", p(&root.join("gw"))]).status.success());
    assert!(af(&["synth", "--synth-kind", "smb", "--out-dir", p(&root.join("smb"))]).status.success());

    let o = af(&[
        "crosseval",
        "--config",
        p(&root.join("gw/crosseval.cfg")),
        "--weights",
        p(&weights),
        "--out-dir",
        p(&root.join("gw-out")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("gw-out/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["count"], 688);
    assert_eq!(json["support"], serde_json::json!([172, 344, 172]));

    let o = af(&[
        "crosseval",
        "--config",
        p(&root.join("smb/crosseval.cfg")),
        "--weights",
        p(&weights),
        "--out-dir",
        p(&root.join("smb-out")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let corr = std::fs::read_to_string(root.join("smb-out/correlations.tsv")).unwrap();
    let rows: Vec<&str> = corr.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, class) in rows.iter().zip(["most", "mid", "least"]) {
        assert!(row.starts_with(class), "{row}");
    }
    let rates = std::fs::read_to_string(root.join("smb-out/level_rates.tsv")).unwrap();
    assert_eq!(rates.lines().count(), 16);
}

#[test]
fn crosseval_rejects_weights_from_another_palette() {
    let (_, run) = trained();
    let root = run.with_file_name("palette");
    assert!(af(&["synth", "--synth-kind", "gwario", "--out-dir", p(&root)]).status.success());
    let palette = affect_forge::levels::Palette::infinite_mario().to_config_text().replace("#5c94fc", "#000000");
    std::fs::write(root.join("other.palette"), palette).unwrap();
    let o = af(&[
        "crosseval",
        "--config",
        p(&root.join("crosseval.cfg")),
        "--weights",
        p(&run.join("weights.afw")),
        "--palette",
        p(&root.join("other.palette")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("incompatible"), "{}", stderr(&o));
}

#[test]
fn analyze_writes_one_record_and_image_per_filter_and_level() {
    let (data, run) = trained();
    let out = run.with_file_name("analyze");
    let o = af(&[
        "analyze",
        "--levels-dir",
        p(&data.join("levels")),
        "--weights",
        p(&run.join("weights.afw")),
        "--out-dir",
        p(&out),
        "--scale",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index = std::fs::read_to_string(out.join("activations.tsv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 8 * 3);
    let ppm = std::fs::read(out.join("chunks/level02_filter7.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n10 10\n255\n"));
    assert_eq!(ppm.len(), b"P6\n10 10\n255\n".len() + 10 * 10 * 3);
}

#[test]
fn selftest_passes_and_names_a_corrupt_weights_file() {
    let o = af(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let (_, run) = trained();
    let bad = run.with_file_name("bad.afw");
    let mut bytes = std::fs::read(run.join("weights.afw")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&bad, bytes).unwrap();
    let o = af(&["selftest", "--weights", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL weights file"), "{stdout}");
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let o = Command::new(env!("CARGO_BIN_EXE_affect-forge"))
        .arg("selftest")
        .env("AFFECT_FORGE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
