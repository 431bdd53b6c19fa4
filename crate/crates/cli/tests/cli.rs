use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use railinspect_cli::{run, EXIT_NOT_SAFE, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use tempfile::TempDir;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("railinspect").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn experiment(dir: &Path) -> PathBuf {
    let exp = dir.join("exp");
    assert_eq!(cli(&["generate", "--experiment", "--out", p(&exp), "--quiet"]), EXIT_OK);
    exp
}

fn stdout_of(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_railinspect")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn generate_writes_75_frames_and_truth() {
    let tmp = TempDir::new().unwrap();
    let exp = experiment(tmp.path());
    let pngs = fs::read_dir(&exp).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 75);
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(exp.join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth["04_F_T3"], serde_json::json!(["1-7S"]));
    assert!(exp.join("config.ini").exists());
}

#[test]
fn inspect_exit_codes_and_final_line() {
    let tmp = TempDir::new().unwrap();
    let exp = experiment(tmp.path());
    let control = exp.join("01_F_T5.png");
    let out = tmp.path().join("i");
    let (code, text) = stdout_of(&["inspect", "--control", p(&control), "--test", p(&exp.join("15_F_T5.png")), "--out", p(&out)]);
    assert_eq!(code, EXIT_NOT_SAFE);
    assert_eq!(text.lines().last().unwrap(), ">> Prediction of Final Decision: DANGER: ***TRACK IS NOT SAFE!***");
    assert!(out.join("report.json").exists() && out.join("report_overlay.png").exists());

    let (code, text) = stdout_of(&["inspect", "--control", p(&control), "--test", p(&control), "--out", p(&out), "--threshold", "10"]);
    assert_eq!(code, EXIT_OK);
    assert!(text.trim_end().ends_with("TRACK IS SAFE"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["diff_threshold"], 10);

    let (code, text) = stdout_of(&["inspect", "--control", p(&control), "--test", p(&control), "--out", p(&out), "--quiet"]);
    assert_eq!((code, text.as_str()), (EXIT_OK, ""));
}

#[test]
fn inspect_rejects_mismatched_sizes() {
    let tmp = TempDir::new().unwrap();
    let exp = experiment(tmp.path());
    let small = tmp.path().join("small.png");
    image::GrayImage::new(100, 80).save(&small).unwrap();
    let code = cli(&["inspect", "--control", p(&exp.join("01_F_T1.png")), "--test", p(&small), "--out", p(&tmp.path().join("o")), "--quiet"]);
    assert_eq!(code, EXIT_RUNTIME);
    let code = cli(&["inspect", "--control", p(&tmp.path().join("nope.png")), "--test", p(&small), "--quiet"]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&[]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["generate", "--bogus"]), EXIT_USAGE);
    assert_eq!(cli(&["generate", "--out", "/tmp/unused-railinspect"]), EXIT_USAGE);
    assert_eq!(cli(&["inspect-batch", "--experiment", "x", "--cases", ""]), EXIT_USAGE);
    assert_eq!(cli(&["inspect-batch", "--experiment", "x", "--cases", "0-3"]), EXIT_USAGE);
    assert_eq!(cli(&["inspect-batch", "--experiment", "x", "--pairing", "sideways"]), EXIT_USAGE);
    assert_eq!(cli(&["roc", "--experiment", "x", "--thresholds", "ten"]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--data", "x", "--freeze", "3"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn batch_shifted_pairing_and_missing_files() {
    let tmp = TempDir::new().unwrap();
    let exp = experiment(tmp.path());
    let out = tmp.path().join("shifted");
    assert_eq!(cli(&["inspect-batch", "--experiment", p(&exp), "--pairing", "shifted", "--cases", "15", "--out", p(&out), "--quiet"]), EXIT_OK);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pairs"][0]["variable"], "15_F_T1");
    assert_eq!(manifest["pairs"][0]["control"], "01_F_T2");
    assert_eq!(manifest["pairs"][4]["control"], "01_F_T1");
    assert_eq!(fs::read_dir(out.join("reports")).unwrap().count(), 15);

    fs::remove_file(exp.join("07_F_T2.png")).unwrap();
    let out = tmp.path().join("partial");
    assert_eq!(cli(&["inspect-batch", "--experiment", p(&exp), "--cases", "6-8", "--out", p(&out), "--quiet"]), EXIT_RUNTIME);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 14);
    assert!(summary["missing"][0].as_str().unwrap().ends_with("07_F_T2.png"));
    assert_eq!(fs::read_to_string(out.join("confusion.csv")).unwrap().lines().count(), 15);
}

#[test]
fn config_file_precedence_and_echo_rerun() {
    let tmp = TempDir::new().unwrap();
    let exp = experiment(tmp.path());
    let ini = tmp.path().join("run.ini");
    fs::write(&ini, "[pipeline]\ndiff_threshold = 20\nmin_blob_area = 10\n").unwrap();
    let args = |out: &Path| -> Vec<String> {
        ["inspect", "--control", p(&exp.join("01_F_T2.png")), "--test", p(&exp.join("05_F_T2.png")), "--out", p(out), "--quiet", "--config", p(&ini)]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    let threshold = |out: &Path| {
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        (r["config"]["diff_threshold"].as_u64().unwrap(), r["config"]["min_blob_area"].as_u64().unwrap())
    };
    let a = tmp.path().join("a");
    assert_eq!(run(std::iter::once("railinspect".to_string()).chain(args(&a))), EXIT_NOT_SAFE);
    assert_eq!(threshold(&a), (20, 10));

    let b = tmp.path().join("b");
    let mut with_flag = args(&b);
    with_flag.extend(["--threshold".to_string(), "15".to_string()]);
    assert_eq!(run(std::iter::once("railinspect".to_string()).chain(with_flag)), EXIT_NOT_SAFE);
    assert_eq!(threshold(&b), (15, 10));

    // re-running from the echoed config reproduces the report
    let echo = b.join("config.ini");
    let before = fs::read(b.join("report.json")).unwrap();
    fs::remove_file(b.join("report.json")).unwrap();
    assert_eq!(
        cli(&["inspect", "--config", p(&echo), "--control", p(&exp.join("01_F_T2.png")), "--test", p(&exp.join("05_F_T2.png")), "--quiet"]),
        EXIT_NOT_SAFE
    );
    assert_eq!(fs::read(b.join("report.json")).unwrap(), before);

    fs::write(&ini, "[pipeline]\nthreshold = 20\n").unwrap();
    assert_eq!(run(std::iter::once("railinspect".to_string()).chain(args(&a))), EXIT_USAGE);
}

#[test]
fn roc_and_report_commands() {
    let tmp = TempDir::new().unwrap();
    let exp = experiment(tmp.path());
    let roc = tmp.path().join("roc");
    assert_eq!(cli(&["roc", "--experiment", p(&exp), "--thresholds", "5,10,40", "--cases", "1-4", "--out", p(&roc), "--quiet"]), EXIT_OK);
    let text = fs::read_to_string(roc.join("roc.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("threshold,tpr,fpr\n"));
    assert_eq!(cli(&["roc", "--experiment", p(&exp), "--thresholds", "0:3", "--out", p(&roc), "--quiet"]), EXIT_USAGE);

    let batch = tmp.path().join("batch");
    assert_eq!(cli(&["inspect-batch", "--experiment", p(&exp), "--cases", "2,4", "--out", p(&batch), "--quiet"]), EXIT_OK);
    let rep = tmp.path().join("rep");
    assert_eq!(cli(&["report", "--run", p(&batch), "--out", p(&rep), "--quiet"]), EXIT_OK);
    let hist = fs::read_to_string(rep.join("histogram.csv")).unwrap();
    assert!(hist.contains("5,10"), "{hist}");
    // a partial grid has no overall acceptance row
    assert!(!fs::read_to_string(rep.join("stats.csv")).unwrap().contains("acceptance"));
}

#[test]
fn train_predict_evaluate_round() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("ds");
    assert_eq!(cli(&["generate", "--dataset", "--kinds", "block", "--counts", "40,20,20", "--size", "32", "--out", p(&data), "--quiet"]), EXIT_OK);
    let model_dir = tmp.path().join("m");
    assert_eq!(cli(&["train", "--data", p(&data), "--epochs", "2", "--batch", "10", "--dropout", "0", "--out", p(&model_dir), "--quiet"]), EXIT_OK);
    let history = fs::read_to_string(model_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(history.lines().count(), 3);
    assert!(fs::read_to_string(model_dir.join("config.ini")).unwrap().contains("steps_per_epoch=4"));

    let model = model_dir.join("model.rcnn");
    let (code, text) = stdout_of(&["predict", "--model", p(&model), "--image", p(&data.join("test/safe/0000.png"))]);
    assert_eq!(code, EXIT_OK);
    let class = text.split_whitespace().next().unwrap();
    assert!(class == "safe" || class == "defective", "{text}");

    let ev = tmp.path().join("ev");
    assert_eq!(cli(&["evaluate", "--model", p(&model), "--data", p(&data), "--out", p(&ev), "--quiet"]), EXIT_OK);
    let row = fs::read_to_string(ev.join("confusion.csv")).unwrap().lines().nth(1).unwrap().to_string();
    let counts: u32 = row.split(',').skip(1).map(|v| v.parse::<u32>().unwrap()).sum();
    assert_eq!(counts, 20);

    let tuned = tmp.path().join("tuned");
    assert_eq!(cli(&["train", "--data", p(&data), "--epochs", "1", "--base", p(&model), "--out", p(&tuned), "--quiet"]), EXIT_OK);
    assert_eq!(cli(&["train", "--data", p(&data), "--epochs", "1", "--base", p(&model), "--freeze", "99", "--out", p(&tuned), "--quiet"]), EXIT_RUNTIME);
    assert_eq!(cli(&["evaluate", "--model", p(&model), "--data", p(&data), "--split", "holdout", "--quiet"]), EXIT_USAGE);
}
