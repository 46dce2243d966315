use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clause(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clause")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = clause(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"{
  "dataset": {"synthetic": {"entities": 60, "train": 24, "eval": 8}},
  "train": {"iterations": 2, "episodes_per_iter": 8, "epochs": 1, "minibatch": 64},
  "traces": 3
}"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("run.json");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_eval_sweep_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    ok(&["train", "--config", &cfg, "--out-dir", out_s]);
    for f in ["config.json", "metrics.csv", "checkpoint.bin", "eval.json", "traces/0000.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let eval_dir = dir.path().join("eval");
    let ck = out.join("checkpoint.bin");
    let ck_s = ck.to_str().unwrap();
    let text = ok(&["eval", "--config", &cfg, "--out-dir", eval_dir.to_str().unwrap(), "--checkpoint", ck_s, "--beta-tok=512"]);
    assert!(text.contains("em "), "{text}");
    let recorded: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(recorded["budgets"]["beta_tok"], 512.0);

    let sweep_dir = dir.path().join("sweep");
    ok(&["sweep", "--config", &cfg, "--out-dir", sweep_dir.to_str().unwrap(), "--checkpoint", ck_s, "--sweep-values", "16,32,64,128"]);
    let frontier = fs::read_to_string(sweep_dir.join("frontier.csv")).unwrap();
    let lines: Vec<&str> = frontier.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("axis,value,seeds,em_mean"));
    let sums: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(sums.iter().all(|s| *s == sums[0] && s.len() == 64));

    let trace = out.join("traces/0000.json");
    let shown = ok(&["trace", "--config", &cfg, "--trace-file", trace.to_str().unwrap()]);
    assert!(shown.contains("question:") && shown.contains("final:"), "{shown}");

    let mut tampered: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    tampered["summary"]["counters"]["c_tok"] = serde_json::json!(9999);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&tampered).unwrap()).unwrap();
    let res = clause(&["trace", "--config", &cfg, "--trace-file", bad.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("AUDIT FAILURE"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", &cfg, "--out-dir", a.to_str().unwrap()]);
    ok(&["train", "--config", &cfg, "--out-dir", b.to_str().unwrap()]);
    for f in ["metrics.csv", "checkpoint.bin", "eval.json", "traces/0001.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn gen_data_output_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("g");
    let text = ok(&["gen-data", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(text.contains("24 train"), "{text}");
    let ds = clause::cli::read_dataset(&out.join("data")).unwrap();
    assert_eq!((ds.train.len(), ds.eval.len()), (24, 8));

    let cfg2 = dir.path().join("dir.json");
    let data = out.join("data");
    fs::write(&cfg2, format!(r#"{{"dataset": {{"dir": {{"path": {:?}}}}}, "train": {{"iterations": 1, "episodes_per_iter": 4, "epochs": 1}}}}"#, data.to_str().unwrap())).unwrap();
    ok(&["train", "--config", cfg2.to_str().unwrap(), "--out-dir", dir.path().join("t").to_str().unwrap()]);
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, r#"{"mode": "cap", "prices": {"lambda_edge": 1, "lambda_lat": 0, "lambda_tok": 0}}"#).unwrap();
    let res = clause(&["eval", "--config", p.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("mode/field mismatch"));

    fs::write(&p, r#"{"unknown_key": true}"#).unwrap();
    assert_eq!(clause(&["eval", "--config", p.to_str().unwrap()]).status.code(), Some(2));

    let res = clause(&["sweep", "--out-dir", dir.path().join("s").to_str().unwrap(), "--checkpoint", "/nonexistent.bin"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing checkpoint"));
}
