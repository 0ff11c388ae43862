use std::path::Path;
use std::process::{Command, Output};

use trackforge::io::sequence::write_masks;
use trackforge::Bitmask;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trackforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn strip(k: usize) -> Bitmask {
    Bitmask::from_pixels(20, 1, &(0..k).map(|x| (x, 0)).collect::<Vec<_>>()).unwrap()
}

#[test]
fn golden_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    std::fs::create_dir_all(&gt).unwrap();
    std::fs::create_dir_all(&pred).unwrap();
    let empty = Bitmask::empty(20, 1).unwrap();
    let elsewhere = Bitmask::from_pixels(20, 1, &[(15, 0)]).unwrap();
    // overlaps 0.9, 0.8, 0, missed, 0.7, 0.6, then four correctly empty frames
    let preds = [strip(9), strip(8), elsewhere, empty.clone(), strip(7), strip(6)];
    for t in 0..10 {
        let (g, p) = if t < 6 { (strip(10), preds[t].clone()) } else { (empty.clone(), empty.clone()) };
        write_masks(&gt, t, &[g]).unwrap();
        write_masks(&pred, t, &[p]).unwrap();
    }
    let out = ok(&["eval", s(&pred), s(&gt)]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // 101-threshold hits: 4 * 101 + 91 + 81 + 71 + 61 + 2 zeros = 710
    let expected = [
        ("auc", 710.0 / 1010.0),
        ("accuracy", 0.6),
        ("robustness", 4.0 / 6.0),
        ("nre", 1.0 / 6.0),
        ("dre", 1.0 / 6.0),
        ("adq", 1.0),
        ("quality", 0.7),
    ];
    for (k, v) in expected {
        assert_eq!(m[k].as_f64().unwrap(), v, "{k}");
    }
    let scores: Vec<f64> = m["per_object"][0]["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(scores, vec![0.9, 0.8, 0.0, 0.0, 0.7, 0.6, 1.0, 1.0, 1.0, 1.0]);

    let out_file = dir.path().join("m.json");
    ok(&["eval", s(&pred), s(&gt), "--out", s(&out_file)]);
    assert_eq!(std::fs::read(&out_file).unwrap(), out.stdout);
}

#[test]
fn eval_self_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["synth", "distractor", s(&seq)]);
    let out = ok(&["eval", s(&seq), s(&seq)]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["quality"].as_f64(), Some(1.0));

    let blank = dir.path().join("blank");
    std::fs::create_dir_all(&blank).unwrap();
    let empty = Bitmask::empty(64, 48).unwrap();
    for t in 0..40 {
        write_masks(&blank, t, std::slice::from_ref(&empty)).unwrap();
    }
    let out = ok(&["eval", s(&blank), s(&seq)]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["nre"].as_f64(), Some(1.0));

    // one frame short
    std::fs::remove_file(blank.join("000039.rle")).unwrap();
    assert_eq!(run(&["eval", s(&blank), s(&seq)]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    assert_eq!(run(&["track", s(&seq)]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "no-such-preset", s(&seq)]).status.code(), Some(2));
    ok(&["synth", "tiny", s(&seq)]);

    // oracle modes must be requested explicitly
    assert_eq!(run(&["track", s(&seq), "--predictor", "oracle"]).status.code(), Some(2));
    assert_eq!(run(&["track", s(&seq), "--refiner", "oracle:0.3:0.3:1"]).status.code(), Some(2));
    assert_eq!(run(&["track", s(&seq), "--tau", "0.5"]).status.code(), Some(2));
    assert_eq!(run(&["track", s(&seq), "--refiner", "blur:2"]).status.code(), Some(2));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"long_term_capacity": 0}"#).unwrap();
    assert_eq!(run(&["track", s(&seq), "--config", s(&cfg)]).status.code(), Some(3));
    std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    assert_eq!(run(&["track", s(&seq), "--config", s(&cfg)]).status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_trackforge"))
        .args(["eval", s(&seq), s(&seq)])
        .env("TRACKFORGE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn track_writes_masks_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["synth", "tiny", s(&seq)]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["track", s(&seq), "--tau", "1.0", "--refiner", "noise:0.2:4", "--out", s(&a)]);
    ok(&["track", s(&seq), "--refiner", "identity", "--out", s(&b)]);
    for t in 0..40 {
        let name = format!("masks/{t:06}.rle");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    // frame 0 is the annotation
    assert_eq!(
        std::fs::read(a.join("masks/000000.rle")).unwrap(),
        std::fs::read(seq.join("gt/000000.rle")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["gt_used_for_prediction"], false);
    assert_eq!(report["refiner"]["kind"], "noise");
    assert!(report["metrics"]["auc"].is_f64());

    let csv = dir.path().join("plot.csv");
    ok(&["plot-data", s(&a.join("report.json")), s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frame,object,score,chosen_source"));
    assert_eq!(lines.next(), Some("0,1,1,annotation"));
    assert_eq!(text.lines().count(), 1 + 40 * 3);
    assert!(text.lines().skip(4).all(|l| l.ends_with(",vmos")));

    let o = dir.path().join("o");
    ok(&[
        "track", s(&seq), "--predictor", "oracle", "--oracle", "--erosion", "1", "--refiner", "oracle:0.3:0.3:2",
        "--out", s(&o),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["gt_used_for_prediction"], true);
    assert_eq!(report["predictor"]["kind"], "oracle");
}

#[test]
fn ablation_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["synth", "reappear", s(&seq)]);
    let oracle = ["--predictor", "oracle", "--oracle", "--erosion", "1", "--miss-prob", "0.1", "--noise-seed", "3"];

    let gap = |gaps: &str| {
        let mut args = vec!["ablate-gap", s(&seq), "--gaps", gaps];
        args.extend(oracle);
        let out = ok(&args);
        (String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
    };
    let (fwd, _) = gap("10,20,30");
    let (rev, _) = gap("30,20,10");
    let fl: Vec<&str> = fwd.lines().collect();
    let rl: Vec<&str> = rev.lines().collect();
    assert_eq!(fl[0], "gap,AUC,A,R,NRE,DRE,ADQ");
    assert_eq!((fl[1], fl[2], fl[3]), (rl[3], rl[2], rl[1]));
    let (single, _) = gap("20");
    assert_eq!(single.lines().nth(1), Some(fl[2]));

    let out = Command::new(env!("CARGO_BIN_EXE_trackforge"))
        .args(["ablate-gap", s(&seq), "--gaps", "5,10,20,40"])
        .args(oracle)
        .env("RUST_LOG", "info")
        .env("TRACKFORGE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let log = String::from_utf8(out.stderr).unwrap();
    let stored: Vec<usize> = log
        .lines()
        .filter_map(|l| l.split(": ").nth(1)?.strip_suffix(" stored entries")?.parse().ok())
        .collect();
    assert_eq!(stored, vec![11, 5, 2, 1]);

    let mut args = vec!["ablate-tau", s(&seq), "--taus", "0.1,1,0.1", "--refiner", "oracle:0.3:0.3:9", "--refine-all"];
    args.extend(oracle);
    let text = String::from_utf8(ok(&args).stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "tau,AUC,A,R,NRE,DRE,ADQ,Q");
    assert_eq!(rows.len(), 5);
    assert!(rows[4].starts_with("refine-all,"));
    assert_eq!(rows[1], rows[3]);

    // tau 1 equals the unrefined baseline
    let base = dir.path().join("base");
    let mut args = vec!["track", s(&seq), "--out", s(&base)];
    args.extend(oracle);
    ok(&args);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(base.join("report.json")).unwrap()).unwrap();
    let m = &report["metrics"];
    let baseline: Vec<String> = ["auc", "accuracy", "robustness", "nre", "dre", "adq", "quality"]
        .iter()
        .map(|k| m[k].as_f64().unwrap().to_string())
        .collect();
    assert_eq!(rows[2], format!("1,{}", baseline.join(",")));
}
