use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_arterymatch"));
    c.env_remove("MGM_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

const TINY: &str = r#"{"d_intra":8,"d_cross":8,"L":2,"C":1,"lr":0.001,"epochs":1,"max_tuples_per_graph":2}"#;

#[test]
fn generate_train_label_eval() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let g = ok(d, &["generate", "--count", "8", "--splits", "4/2/2", "--seed", "2", "--out", "data"]);
    assert_eq!(g["counts"]["train"], 4);
    assert_eq!(fs::read_dir(d.join("data/graphs")).unwrap().count(), 8);

    fs::write(d.join("cfg.json"), TINY).unwrap();
    let tr = ok(d, &["train", "--data", "data", "--config", "cfg.json", "--out", "ck.json"]);
    assert_eq!(tr["epochs"].as_array().unwrap().len(), 1);
    assert!(d.join("ck.json.metrics.jsonl").is_file());

    ok(d, &["label", "--data", "data", "--checkpoint", "ck.json", "--out", "lab", "--mode", "soft", "--debug-csv"]);
    assert!(d.join("lab/matchings.csv").is_file());
    let m = ok(d, &["eval", "--pred", "lab/predictions.json", "--truth", "data", "--out", "metrics.json"]);
    assert!(m["weighted"]["acc"].as_f64().unwrap() > 0.0);
    assert!(d.join("metrics.json").is_file());

    let s = ok(d, &["stenosis", "--data", "data", "--pred", "lab/predictions.json"]);
    assert_eq!(s["labels_from_predictions"], true);

    let mm = ok(d, &[
        "match", "--graphs", "data/graphs/g000.json", "data/graphs/g001.json", "data/graphs/g002.json",
        "--checkpoint", "ck.json", "--dump-debug", "dbg.json",
    ]);
    assert_eq!(mm["cycle_defect_direct"], 0.0);
    let dbg: Value = serde_json::from_str(&fs::read_to_string(d.join("dbg.json")).unwrap()).unwrap();
    assert!(dbg["affinities"]["0,1"].is_object() || dbg["affinities"]["0,1"].is_array());
}

#[test]
fn same_seed_same_dataset() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--count", "6", "--splits", "2/2/2", "--out", "a", "--seed", "9"]);
    let env_run = bin().current_dir(d).env("MGM_SEED", "9").args(["generate", "--count", "6", "--splits", "2/2/2", "--out", "b"]).output().unwrap();
    assert!(env_run.status.success());
    for name in ["manifest.json", "graphs/g000.json", "graphs/g005.json"] {
        assert_eq!(fs::read(d.join("a").join(name)).unwrap(), fs::read(d.join("b").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn errors_are_json() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let e = error_of(&run(d, &["generate", "--count", "6", "--splits", "2/2/1", "--out", "x"]));
    assert_eq!(e["error"], "validation");
    let e = error_of(&run(d, &["train", "--data", "nowhere", "--out", "ck.json", "--frobnicate"]));
    assert_eq!(e["error"], "usage");
    let e = error_of(&run(d, &["train", "--data", "nowhere", "--out", "ck.json"]));
    assert_eq!(e["error"], "validation");
    let e = error_of(&run(d, &["stenosis"]));
    assert_eq!(e["error"], "usage");
    fs::write(d.join("bad.json"), r#"{"epochs": 1, "momentum": 0.9}"#).unwrap();
    let e = error_of(&run(d, &["train", "--data", "nowhere", "--config", "bad.json", "--out", "ck.json"]));
    assert_eq!(e["error"], "parse");
}

#[test]
fn eval_matches_hand_computed_fixture() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    // 4 nodes: LMA, LAD, LAD, LCX predicted as LMA, LAD, LCX, LCX.
    fs::write(d.join("truth.json"), r#"{"graphs":[{"id":"a","labels":["LMA","LAD","LAD","LCX"]}]}"#).unwrap();
    fs::write(d.join("pred.json"), r#"{"graphs":[{"id":"a","labels":["LMA","LAD","LCX","LCX"]}]}"#).unwrap();
    let m = ok(d, &["eval", "--pred", "pred.json", "--truth", "truth.json"]);
    assert_eq!(m["accuracy"], 0.75);
    // recall: LMA 1 (w .25), LAD 1/2 (w .5), LCX 1 (w .25)
    assert!((m["weighted"]["rec"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    // precision: LMA 1, LAD 1, LCX 1/2
    assert!((m["weighted"]["prec"].as_f64().unwrap() - 0.875).abs() < 1e-12);
    fs::write(d.join("pred.json"), r#"{"graphs":[{"id":"a","labels":["LMA",null,"LCX","LCX"]}]}"#).unwrap();
    assert_eq!(error_of(&run(d, &["eval", "--pred", "pred.json", "--truth", "truth.json"]))["error"], "validation");
}

#[test]
fn stenosis_from_mask_and_centerline() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    // horizontal vessel: two 9 px bulges around a 3 px pinch, 7 px elsewhere
    let (w, h) = (60usize, 15usize);
    let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let half = match x {
                5..17 | 37..49 => 4,
                25..31 => 1,
                _ => 3,
            };
            pgm.push(if (y as i64 - 7).abs() <= half { 255 } else { 0 });
        }
    }
    fs::write(d.join("m.pgm"), pgm).unwrap();
    let pts: Vec<[f64; 2]> = (2..58).map(|x| [x as f64, 7.0]).collect();
    fs::write(d.join("c.json"), serde_json::to_string(&pts).unwrap()).unwrap();
    let v = ok(d, &["stenosis", "--mask", "m.pgm", "--centerline", "c.json"]);
    let f = &v["finding"];
    assert_eq!(f["degenerate"], false);
    assert!((f["percent"].as_f64().unwrap() - 60.0).abs() < 1e-9, "{f}");
    assert_eq!(f["grade"], "Moderate");
}
