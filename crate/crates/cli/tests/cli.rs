use std::process::{Command, Output};

use meanba::archive::{archive_write, NamedTensor};
use meanba::model::{build_toy_model, ToyConfig};
use meanba::{Tensor3, Tensor4};

fn meanba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meanba"))
        .args(args)
        .env_remove("MEANBA_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_config(dir: &std::path::Path) -> String {
    let cfg = ToyConfig { depths: vec![1, 2], base_channels: 4, base_height: 4, base_width: 4, state: 2, num_classes: 3 };
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn flops_calculator() {
    let o = meanba(&["flops", "--b", "1", "--d", "512", "--l", "3136"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "original 14450688\nreduced 1636992\nratio 0.8867\n");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(meanba(&[]).status.code(), Some(1));
    assert_eq!(meanba(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(meanba(&["flops", "--b", "x", "--d", "1", "--l", "1"]).status.code(), Some(1));
    assert_eq!(meanba(&["scan-bench", "--shape", "12"]).status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    for sub in ["scan-bench", "analyze", "select-layers", "eval", "prune", "flops"] {
        let o = meanba(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn runtime_errors_exit_2() {
    assert_eq!(meanba(&["flops", "--b", "0", "--d", "1", "--l", "1"]).status.code(), Some(2));
    assert_eq!(meanba(&["analyze", "/definitely/not/here.mbt"]).status.code(), Some(2));
    assert_eq!(meanba(&["scan-bench", "--iters", "0", "--shape", "2x2"]).status.code(), Some(2));
}

#[test]
fn select_layers_k0_is_empty_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = meanba(&["select-layers", "--k", "0", "--config", &cfg, "--samples", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(plan["selected"], serde_json::json!([]));
    assert_eq!(plan["scores"].as_array().unwrap().len(), 3);

    let o = meanba(&["select-layers", "--k", "2", "--config", &cfg, "--samples", "8"]);
    let plan: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(plan["selected"].as_array().unwrap().len(), 2);
    assert_eq!(meanba(&["select-layers", "--k", "4", "--config", &cfg, "--samples", "8"]).status.code(), Some(2));
}

#[test]
fn scan_bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = meanba(&[
        "scan-bench", "--shape", "4x8", "--shape", "2x16", "--warmup", "1", "--iters", "2", "--format", "csv",
        "--out", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(text.starts_with("inner_dim,seq_len,"));

    let o = Command::new(env!("CARGO_BIN_EXE_meanba"))
        .args(["scan-bench", "--shape", "3x5", "--iters", "1", "--warmup", "1", "--dtype", "f64"])
        .env("MEANBA_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    assert_eq!(rows[2]["mode"], "vmeanba");
    assert_eq!(rows[2]["dtype"], "f64");
}

#[test]
fn analyze_archived_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (b, d, l, n) = (1, 3, 6, 2);
    let set = vec![
        NamedTensor::from_tensor4("a_bar", &Tensor4::from_fn([b, d, l, n], |_, di, _, ni| 0.5 + 0.1 * (di + ni) as f32).unwrap()),
        NamedTensor::from_tensor4("b_bar_u", &Tensor4::from_fn([b, d, l, n], |_, di, li, _| (di as f32 - 1.0) * li as f32).unwrap()),
        NamedTensor::from_tensor3("c", &Tensor3::from_fn([b, n, l], |_, _, _| 1.0f32).unwrap()),
        NamedTensor::from_tensor3("u", &Tensor3::from_fn([b, d, l], |_, _, _| 0.0f32).unwrap()),
        NamedTensor::from_vec("skip_gain", vec![d], vec![1.0f32; d]).unwrap(),
    ];
    let path = dir.path().join("acts.mbt");
    archive_write(&set, &path).unwrap();
    let o = meanba(&["analyze", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["shape"], serde_json::json!([1, 3, 6, 2]));
    assert!(v["channel_stats"]["max_variance"].as_f64().unwrap() > 0.0);
    assert!(v["approximation_error"]["rel_l2"].as_f64().unwrap() > 0.0);

    archive_write(&set[..2], &path).unwrap();
    let o = meanba(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`c`"));
}

#[test]
fn eval_and_prune() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = meanba(&["eval", "--config", &cfg, "--samples", "8", "--k", "0,1,3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    assert_eq!(rows[0]["accuracy"], 1.0);

    let saved = dir.path().join("pruned.mbt");
    let out = dir.path().join("sweep.json");
    let o = meanba(&[
        "prune", "--config", &cfg, "--samples", "8", "--ratio", "0.4", "--save", saved.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);

    // the saved model loads back and evaluates
    let o = meanba(&["eval", "--model", saved.to_str().unwrap(), "--samples", "4", "--k", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(meanba(&["prune", "--config", &cfg, "--ratio", "1.5"]).status.code(), Some(2));

    let model = build_toy_model(0, &ToyConfig::tiny()).unwrap();
    assert_eq!(model.num_layers(), 14);
}
