use std::path::Path;
use std::process::{Command, Output};

fn wrin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrin"))
        .args(args)
        .env_remove("WRIN_DATA_DIR")
        .output()
        .expect("run wrin")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad json ({e}): {}", stdout(o)))
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn analyze_reports_builtin_parameter_counts() {
    let o = wrin(&["analyze", "--net", "wr-inception", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    let params = v["totals"]["params"].as_u64().unwrap();
    assert!((params as f64 / 2.7e6 - 1.0).abs() <= 0.02, "{params}");
    assert!(v["comparisons"][0]["ratio"].as_f64().unwrap() > 0.9);

    let o = wrin(&["analyze", "--net", "wrn-16-4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("total params"));
}

#[test]
fn analyze_accepts_config_files_and_input_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = wrin_core::NetworkConfig::miniature();
    write(dir.path(), "mini.json", &cfg.to_json());
    let path = dir.path().join("mini.json");
    let o = wrin(&[
        "analyze",
        "--net",
        path.to_str().unwrap(),
        "--input-shape",
        "3,16,16",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&o)["input_shape"], serde_json::json!([3, 16, 16]));
}

#[test]
fn analyze_rejects_bad_input() {
    assert_eq!(wrin(&["analyze", "--net", "no-such-net"]).status.code(), Some(2));
    assert_eq!(
        wrin(&["analyze", "--net", "wrn-16-4", "--input-shape", "3,32"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(wrin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_corrupted_gradients() {
    let o = wrin(&[
        "gradcheck",
        "--seeds",
        "2",
        "--item",
        "conv2d",
        "--item",
        "inception_unit",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let v = json(&o);
    assert_eq!(v["passed"], true);
    assert_eq!(v["items"].as_array().unwrap().len(), 2);

    let o = wrin(&["gradcheck", "--seeds", "1", "--item", "conv2d", "--corrupt"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));

    assert_eq!(wrin(&["gradcheck", "--precision", "32"]).status.code(), Some(2));
    assert_eq!(wrin(&["gradcheck", "--item", "nope"]).status.code(), Some(2));
}

#[test]
fn train_resume_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let mut cfg = wrin_core::NetworkConfig::miniature().with_input([3, 32, 32]);
    cfg.num_classes = 10;
    std::fs::write(&net, cfg.to_json()).unwrap();
    let out = dir.path().join("run");
    let common = ["--net", net.to_str().unwrap(), "--synthetic", "40"];
    let o = wrin(
        &[
            &["train"][..],
            &common,
            &[
                "--epochs",
                "2",
                "--batch-size",
                "8",
                "--checkpoint-every",
                "1",
                "--out",
                out.to_str().unwrap(),
                "--json",
            ],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&o)["epochs_run"], 2);
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,step,lr,loss,acc"));
    assert_eq!(log.lines().count(), 3);
    for f in ["epoch_0001.ckpt", "epoch_0002.ckpt", "final.ckpt", "stats.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    let resumed = dir.path().join("resumed");
    let ckpt = out.join("epoch_0001.ckpt");
    let o = wrin(
        &[
            &["train"][..],
            &common,
            &[
                "--epochs",
                "2",
                "--batch-size",
                "8",
                "--resume",
                ckpt.to_str().unwrap(),
                "--out",
                resumed.to_str().unwrap(),
            ],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out.join("final.ckpt")).unwrap(),
        std::fs::read(resumed.join("final.ckpt")).unwrap(),
        "resuming after epoch 1 must reproduce the uninterrupted run"
    );

    let final_ckpt = out.join("final.ckpt");
    let o = wrin(
        &[
            &["eval"][..],
            &common,
            &["--checkpoint", final_ckpt.to_str().unwrap(), "--json"],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    let err = v["error"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&err));
    assert_eq!(v["samples"], 10);
}

#[test]
fn train_config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let mut cfg = wrin_core::NetworkConfig::miniature().with_input([3, 32, 32]);
    cfg.num_classes = 10;
    std::fs::write(&net, cfg.to_json()).unwrap();
    write(dir.path(), "train.json", r#"{"epochs": 1, "batch_size": 16}"#);
    let out = dir.path().join("run");
    let o = wrin(&[
        "train",
        "--net",
        net.to_str().unwrap(),
        "--synthetic",
        "16",
        "--epochs",
        "5",
        "--config",
        dir.path().join("train.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&o)["epochs_run"], 1);

    write(dir.path(), "bad.json", r#"{"epoch": 1}"#);
    let o = wrin(&[
        "train",
        "--net",
        net.to_str().unwrap(),
        "--synthetic",
        "16",
        "--config",
        dir.path().join("bad.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown training option"));
}

#[test]
fn train_reports_missing_data_and_diverging_runs() {
    let o = wrin(&["train", "--net", "wr-inception", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("WRIN_DATA_DIR"));

    let dir = tempfile::tempdir().unwrap();
    let o = wrin(&[
        "train",
        "--net",
        "wr-inception",
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let net = dir.path().join("net.json");
    let mut cfg = wrin_core::NetworkConfig::miniature().with_input([3, 32, 32]);
    cfg.num_classes = 10;
    std::fs::write(&net, cfg.to_json()).unwrap();
    let o = wrin(&[
        "train",
        "--net",
        net.to_str().unwrap(),
        "--synthetic",
        "16",
        "--epochs",
        "3",
        "--lr",
        "1e30",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

const GT_0: &str = "Car 0.00 0 -1.58 0.00 0.00 50.00 50.00 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n\
                    DontCare -1 -1 -10 400.00 0.00 450.00 50.00 -1 -1 -1 -1000 -1000 -1000 -10\n";
const GT_1: &str = "Car 0.00 0 -1.58 100.00 100.00 160.00 160.00 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n";

fn kitti_fixture(dets: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("gt")).unwrap();
    std::fs::create_dir(dir.path().join("det")).unwrap();
    write(&dir.path().join("gt"), "000000.txt", GT_0);
    write(&dir.path().join("gt"), "000001.txt", GT_1);
    for (name, text) in dets {
        write(&dir.path().join("det"), name, text);
    }
    dir
}

fn detect_eval(dir: &Path, extra: &[&str]) -> Output {
    let gt = dir.join("gt");
    let det = dir.join("det");
    wrin(
        &[
            &[
                "detect-eval",
                "--gt-dir",
                gt.to_str().unwrap(),
                "--det-dir",
                det.to_str().unwrap(),
            ][..],
            extra,
        ]
        .concat(),
    )
}

#[test]
fn detect_eval_reproduces_the_ap_fixture() {
    let dir = kitti_fixture(&[
        (
            "000000.txt",
            "Car -1 -1 -10 0.00 0.00 50.00 50.00 -1 -1 -1 -1000 -1000 -1000 -10 0.9\n\
             Car -1 -1 -10 300.00 0.00 350.00 50.00 -1 -1 -1 -1000 -1000 -1000 -10 0.8\n\
             Car -1 -1 -10 400.00 0.00 450.00 50.00 -1 -1 -1 -1000 -1000 -1000 -10 0.95\n",
        ),
        (
            "000001.txt",
            "Car -1 -1 -10 100.00 100.00 160.00 160.00 -1 -1 -1 -1000 -1000 -1000 -10 0.7\n",
        ),
    ]);
    let o = detect_eval(dir.path(), &["--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    let summary = v["summary"].as_array().unwrap();
    assert_eq!(summary.len(), 3);
    for s in summary {
        assert_eq!(s["map"].as_f64().unwrap(), 28.0 / 33.0);
        assert_eq!(s["mar"].as_f64().unwrap(), 1.0);
    }

    let o = detect_eval(dir.path(), &["--difficulty", "moderate"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("AVERAGE PRECISION(%) & AVERAGE RECALL(%)"), "{text}");
    assert!(text.contains("84.85"), "{text}");
}

#[test]
fn detect_eval_self_match_is_perfect() {
    let with_score = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("DontCare"))
            .map(|l| format!("{l} 0.5\n"))
            .collect::<String>()
    };
    let dir = kitti_fixture(&[("000000.txt", &with_score(GT_0)), ("000001.txt", &with_score(GT_1))]);
    let o = detect_eval(dir.path(), &["--json", "--ap-mode", "all-point"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for s in json(&o)["summary"].as_array().unwrap() {
        assert_eq!((s["map"].as_f64(), s["mar"].as_f64()), (Some(1.0), Some(1.0)));
    }
}

#[test]
fn detect_eval_input_errors() {
    let dir = kitti_fixture(&[]);
    let o = detect_eval(dir.path(), &["--json"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "empty detection dir means no detections: {}",
        stderr(&o)
    );
    assert_eq!(json(&o)["summary"][0]["map"].as_f64(), Some(0.0));

    let dir = kitti_fixture(&[(
        "999999.txt",
        "Car -1 -1 -10 0 0 5 5 -1 -1 -1 -1000 -1000 -1000 -10 0.5\n",
    )]);
    let o = detect_eval(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("999999"));

    let dir = kitti_fixture(&[("000000.txt", "Car -1 -1 -10 0 0 5 5 -1 -1 -1 -1000 -1000 -1000 -10\n")]);
    assert_eq!(detect_eval(dir.path(), &[]).status.code(), Some(2));

    let dir = kitti_fixture(&[("000000.txt", "Car 0 0\n")]);
    assert_eq!(detect_eval(dir.path(), &[]).status.code(), Some(2));

    let dir = kitti_fixture(&[]);
    assert_eq!(detect_eval(dir.path(), &["--iou", "1.5"]).status.code(), Some(2));
    std::fs::remove_dir(dir.path().join("det")).unwrap();
    assert_eq!(detect_eval(dir.path(), &[]).status.code(), Some(2));
}
