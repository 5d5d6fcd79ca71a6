use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taborder_cli::exit;

const TINY: &str = r#"{
  "model": {"h": 8, "heads": 2, "blocks_ord": 1, "blocks_pred": 1},
  "train": {"total_steps": 4, "eval_every": 0, "data": {"d_min": 3, "d_max": 4, "n_min": 32, "n_max": 48, "features": 32}}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_taborder"));
    c.env_remove("TABORDER_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_owned()).collect()
}

#[test]
fn generate_writes_tables_sidecars_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    ok(&["generate", "--num", "4", "--seed", "1", "--additive", "--out", s(&out)]);
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".dag.json")).count(), 4);
    assert!(names.contains(&"manifest.json".to_owned()));
    let m = manifest(&out);
    assert_eq!(m["command"], "generate");
    assert_eq!(m["seed"], 1);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 8);
    for a in outputs {
        let bytes = fs::read(a["path"].as_str().unwrap()).unwrap();
        assert_eq!(a["sha256"], taborder::training::sha256_hex(&bytes));
    }
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("dataset_0002.dag.json")).unwrap()).unwrap();
    assert_eq!(side["index"], 2);
    assert_eq!(side["generator"]["additive"], true);
    let t = taborder::Table::load(&out.join("dataset_0000.csv")).unwrap();
    assert_eq!(t.d(), side["d"].as_u64().map(|_| t.d()).unwrap());
}

#[test]
fn generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        ok(&["generate", "--num", "3", "--seed", "9", "--missing", "0.2", "--out", s(o)]);
    }
    for f in ["dataset_0000.csv", "dataset_0001.truth.csv", "dataset_0002.dag.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let masked = taborder::Table::load(&a.join("dataset_0000.csv")).unwrap();
    assert!(masked.missing_count() > 0);
    ok(&["generate", "--num", "1", "--seed", "10", "--out", s(&b)]);
    assert_ne!(fs::read(a.join("dataset_0000.csv")).unwrap(), fs::read(b.join("dataset_0000.csv")).unwrap());
}

#[test]
fn random_orders_score_about_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("gen");
    ok(&["generate", "--num", "60", "--seed", "2", "--d-min", "6", "--d-max", "8", "--rows", "40", "--out", s(&data)]);
    let out = dir.path().join("eval");
    let stdout = ok(&["eval-order", "--method", "random", "--datasets", s(&data), "--out", s(&out)]);
    assert!(stdout.contains("60 datasets"));
    let vals: Vec<f64> = csv_column(&out.join("eval_order.csv"), "normalized").iter().map(|v| v.parse().unwrap()).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((mean - 0.5).abs() < 0.08, "{mean}");
    for method in ["varsort", "greedy"] {
        ok(&["eval-order", "--method", method, "--datasets", s(&data), "--compare", "--out", s(&out)]);
        assert!(out.join("compare.csv").exists());
    }
}

#[test]
fn sachs_comparison_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval-order", "--sachs", "--compare", "--out", s(dir.path())]);
    let raw = csv_column(&dir.path().join("eval_order.csv"), "raw");
    assert_eq!(raw, ["3", "3", "4", "5", "1", "13", "8", "3", "3"]);
    let shifts = csv_column(&dir.path().join("compare.csv"), "rank_shift");
    assert_eq!(shifts.len(), 99);
    assert!(shifts[..11].iter().all(|v| v == "0"));
    assert_eq!(run(&["eval-order", "--sachs", "--base", "nope", "--out", s(dir.path())]).status.code(), Some(exit::USAGE));
}

fn train_tiny(dir: &Path) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join("train");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    out.join("model.ck")
}

#[test]
fn train_writes_checkpoint_trace_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_tiny(dir.path());
    let trace = fs::read_to_string(ck.with_file_name("loss.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,nll,beta,tau"));
    assert_eq!(trace.lines().count(), 5);
    let cfg = tiny_config(dir.path());
    let part = dir.path().join("part");
    ok(&["train", "--config", s(&cfg), "--stop-after", "2", "--out", s(&part)]);
    let rest = dir.path().join("rest");
    ok(&["train", "--resume", s(&part.join("model.ck")), "--out", s(&rest)]);
    assert_eq!(fs::read(&ck).unwrap(), fs::read(rest.join("model.ck")).unwrap());
    let again = dir.path().join("again");
    ok(&["train", "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(fs::read(&ck).unwrap(), fs::read(again.join("model.ck")).unwrap());
}

#[test]
fn config_precedence_and_manifest_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"seed": 5, "total_steps": 2, "data": {"n_min": 16, "n_max": 16, "d_min": 3, "d_max": 3}}, "model": {"h": 8, "heads": 2, "blocks_ord": 1, "blocks_pred": 1}}"#).unwrap();
    let a = dir.path().join("a");
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    let m = manifest(&a);
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["run"]["train"]["total_steps"], 2);
    assert_eq!(m["config"]["run"]["model"]["h"], 8);
    assert_eq!(m["config"]["run"]["train"]["lr"], 3e-3);
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&cfg), "--seed", "7", "--steps", "1", "--out", s(&b)]);
    let m = manifest(&b);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["run"]["train"]["total_steps"], 1);
    assert_eq!(m["inputs"][0]["path"], s(&cfg));
    fs::write(&cfg, r#"{"train": {"sede": 5}}"#).unwrap();
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&b)]).status.code(), Some(exit::IO));
    fs::write(&cfg, r#"{"model": {"h": 10, "heads": 4}}"#).unwrap();
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&b)]).status.code(), Some(exit::USAGE));
}

#[test]
fn ablation_finetune_impute_and_intervene_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_tiny(dir.path());
    let data = dir.path().join("gen");
    ok(&["generate", "--num", "2", "--seed", "3", "--rows", "30", "--d-min", "3", "--d-max", "3", "--missing", "0.2", "--out", s(&data)]);
    let ab = dir.path().join("ab");
    ok(&["order-ablation", "--checkpoint", s(&ck), "--datasets", s(&data), "--order", "correct", "--order", "reversed", "--order", "random:3", "--order", "3,1,2", "--out", s(&ab)]);
    let labels = csv_column(&ab.join("ablation.csv"), "order");
    assert_eq!(labels.len(), 12);
    assert_eq!(&labels[..6], ["correct", "reversed", "random:1", "random:2", "random:3", "3 1 2"]);
    let dtop = csv_column(&ab.join("ablation.csv"), "imposed_dtop");
    assert_eq!(dtop[0], "0");
    assert_eq!(dtop[1], "1");

    let ft = dir.path().join("ft");
    let table = data.join("dataset_0000.csv");
    ok(&["finetune", "--checkpoint", s(&ck), "--data", s(&table), "--order", "correct", "--steps", "2", "--out", s(&ft)]);
    assert!(ft.join("finetuned.ck").exists());
    assert_eq!(fs::read_to_string(ft.join("loss.csv")).unwrap().lines().count(), 3);

    let truth = data.join("dataset_0000.truth.csv");
    for method in ["mean", "knn", "taborder"] {
        let out = dir.path().join(format!("imp_{method}"));
        ok(&["impute", "--data", s(&table), "--method", method, "--checkpoint", s(&ck), "--finetune-steps", "2", "--truth", s(&truth), "--out", s(&out)]);
        let filled = taborder::Table::load(&out.join("imputed.csv")).unwrap();
        let orig = taborder::Table::load(&table).unwrap();
        assert_eq!(filled.missing_count(), 0);
        for i in 0..orig.values().len() {
            if !orig.mask()[i] {
                assert_eq!(filled.values()[i], orig.values()[i]);
            }
        }
        let rmse: f64 = csv_column(&out.join("impute_report.csv"), "rmse")[0].parse().unwrap();
        assert!(rmse.is_finite() && rmse > 0.0);
    }

    let iv = dir.path().join("iv");
    ok(&["intervene", "--checkpoint", s(&ck), "--n-train", "64", "--n-test", "40", "--finetune-steps", "1", "--context-rows", "32", "--chunk", "16", "--predictions", "--out", s(&iv)]);
    assert_eq!(csv_column(&iv.join("intervene.csv"), "config"), ["correct", "correct", "all-ones", "all-ones"]);
    assert_eq!(csv_column(&iv.join("intervene_predictions.csv"), "row").len(), 80);
}

#[test]
fn theory_and_grad_check_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        ok(&["theory-check", "--instances", "4", "--seed", "3", "--out", s(o)]);
    }
    assert_eq!(fs::read(a.join("theory.json")).unwrap(), fs::read(b.join("theory.json")).unwrap());
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("theory.json")).unwrap()).unwrap();
    for key in ["Rf", "Rb", "G_fwd", "G_bwd", "delta", "amplified"] {
        assert!(reports[0].get(key).is_some(), "{key}");
    }
    assert_eq!(csv_column(&a.join("theory_summary.csv"), "instance").len(), 4);
    let g = dir.path().join("g");
    ok(&["grad-check", "--out", s(&g)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(g.join("grad_check.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["max_relative_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(run(&["grad-check", "--tolerance", "0", "--out", s(&g)]).status.code(), Some(exit::NUMERIC));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["generate", "--bogus", "--out", s(&out)]).status.code(), Some(exit::USAGE));
    assert_eq!(run(&[]).status.code(), Some(exit::USAGE));
    assert_eq!(run(&["--help"]).status.code(), Some(exit::OK));
    let missing = run(&["impute", "--data", "/definitely/not/here.csv", "--method", "mean", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(exit::IO));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/definitely/not/here.csv"));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,NaN\n").unwrap();
    assert_eq!(run(&["impute", "--data", s(&bad), "--method", "mean", "--out", s(&out)]).status.code(), Some(exit::IO));
    let ck = dir.path().join("fake.ck");
    fs::write(&ck, b"TABORDCK garbage").unwrap();
    assert_eq!(run(&["impute", "--data", s(&bad), "--checkpoint", s(&ck), "--out", s(&out)]).status.code(), Some(exit::IO));
    let ck = train_tiny(dir.path());
    let data = dir.path().join("gen");
    ok(&["generate", "--num", "1", "--rows", "10", "--out", s(&data)]);
    let bad_order = run(&["order-ablation", "--checkpoint", s(&ck), "--datasets", s(&data), "--order", "1,1,2", "--out", s(&out)]);
    assert_eq!(bad_order.status.code(), Some(exit::USAGE));
    let threads = bin().env("TABORDER_THREADS", "zero").args(["grad-check", "--out", s(&out)]).output().unwrap();
    assert_eq!(threads.status.code(), Some(exit::USAGE));
    let one = bin().env("TABORDER_THREADS", "1").args(["theory-check", "--instances", "2", "--out", s(&out)]).output().unwrap();
    assert!(one.status.success());
    assert_eq!(manifest(&out)["threads"], 1);
}
