use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn replab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"{{
  "name": "tiny",
  "dataset": {{"source": "synthetic", "d": 4, "classes": 3, "samples": 300, "ambient_dim": 20, "seed": 2,
               "split": {{"train_n": 200, "val_n": 50}}}},
  "architecture": {{"hidden": [12, 12]}},
  "optimizer": {{"kind": "adam", "learning_rate": 0.001}},
  "epochs": 2, "batch": 50, "trials": 2, "capture_layers": [1, 2]{extra}
}}"#
    );
    let path = dir.join("tiny.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    for (out, workers) in [("a", "1"), ("b", "2")] {
        let o = replab(dir.path(), &["train", "--config", &cfg, "--out", out, "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trials.csv", "characteristics.csv", "history.csv", "summary.txt", "report.json", "checkpoints/trial_0.rlnn"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert!(dir.path().join("a/run.log").is_file());

    let o = replab(dir.path(), &["train", "--config", &cfg, "--out", "runs/l1r", "--regularizer", "L1R", "--loss-weight", "0.01", "--target-layer", "2"]);
    assert!(o.status.success());
    fs::rename(dir.path().join("a"), dir.path().join("runs/base")).unwrap();
    let o = replab(dir.path(), &["report", "--out", "runs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("selected") && text.contains("improvement"), "{text}");

    let ck = dir.path().join("runs/base/checkpoints/trial_0.rlnn");
    let ck = ck.to_str().unwrap();
    for args in [
        vec!["analyze", "--config", &cfg, "--checkpoint", ck, "--out", "an"],
        vec!["mi", "--config", &cfg, "--checkpoint", ck, "--out", "mi", "--layers", "2"],
        vec!["ion", "--config", &cfg, "--checkpoint", ck, "--layer", "1", "--out", "ion"],
        vec!["cpn", "--config", &cfg, "--checkpoint", ck, "--layer", "2", "--trials", "3", "--out", "cpn"],
    ] {
        let o = replab(dir.path(), &args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let ion = String::from_utf8_lossy(&replab(dir.path(), &["ion", "--config", &cfg, "--checkpoint", ck, "--layer", "1", "--out", "ion"]).stdout).into_owned();
    let dev: f64 = ion.rsplit(' ').next().unwrap().trim().parse().unwrap();
    assert!(dev <= 1e-10, "{ion}");
    assert!(fs::read_to_string(dir.path().join("mi/mi.csv")).unwrap().starts_with("layer,mi_x_lo"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    for args in [
        vec!["train", "--config", "missing.json"],
        vec!["train", "--config", &cfg, "--regularizer", "XYZ"],
        vec!["train", "--config", &cfg, "--trials", "0"],
        vec!["train", "--config", &cfg, "--regularizer", "CR", "--target-layer", "9"],
        vec!["train", "--preset", "huge"],
        vec!["sweep", "--axis", "loss-weight"],
    ] {
        let o = replab(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    fs::write(dir.path().join("bad.json"), "{\"dataset\": 3}").unwrap();
    assert_eq!(replab(dir.path(), &["train", "--config", "bad.json"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3_with_config_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(
        dir.path(),
        r#", "regularizer": {"method": "VR", "loss_weight": 1e300, "target_layer": 2}"#,
    );
    let text = fs::read_to_string(&cfg).unwrap().replace(r#""kind": "adam""#, r#""kind": "momentum", "momentum": 0.9"#);
    fs::write(&cfg, text).unwrap();
    let o = replab(dir.path(), &["train", "--config", &cfg, "--out", "d"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("diverged") && err.contains("\"loss_weight\""), "{err}");
}

#[test]
fn sweep_and_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let base: serde_json::Value = serde_json::from_str(&fs::read_to_string(tiny_config(dir.path(), "")).unwrap()).unwrap();
    let spec = serde_json::json!({
        "base": base,
        "axis": "layer_width",
        "values": [4, 8],
        "regularizers": [{"method": "RR", "loss_weight": 0.1, "target_layer": 2}],
    });
    fs::write(dir.path().join("sweep.json"), spec.to_string()).unwrap();
    let o = replab(dir.path(), &["sweep", "--config", "sweep.json", "--out", "sw"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("layer_width,4,4,RR,0.1,2,false,"));

    let o = replab(dir.path(), &["gen-data", "--d", "3", "--samples", "60", "--ambient", "8", "--classes", "4", "--seed", "5", "--out", "g"]);
    assert!(o.status.success());
    let ds = replab_core::data::read_container(&dir.path().join("g/data.rlds")).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.k), (60, 8, 4));
}
