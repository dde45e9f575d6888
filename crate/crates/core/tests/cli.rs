use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_cascade-seg");

fn desk() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.json")
}

// Small enough to train every network in seconds.
const TINY: &[&str] = &[
    "data.seeds=[1,2,3,4,5,6]",
    "data.split=[0.5,0.17]",
    "data.phantom.shape=[16,64,64]",
    "data.phantom.lesion_radius_range=[4.2,4.8]",
    "liver.net.stage_channels=[4,8,8,8]",
    "lesion.net.stage_channels=[4,8,8,8]",
    "baseline.net.stage_channels=[4,8,8,8]",
    "liver.train.epochs=1",
    "lesion.train.epochs=1",
    "baseline.train.epochs=1",
    "detector.train.steps=3",
    "detector.train.per_class=4",
];

fn run(args: &[&str], extra: &[&str]) -> (i32, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.args(extra);
    let out = cmd.output().expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn ok(args: &[&str]) -> String {
    let (code, text) = run(args, &[]);
    assert_eq!(code, 0, "{args:?} failed:\n{text}");
    text
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn full_command_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let cfg = desk().to_string_lossy().into_owned();
    let (data, data2, ck, pred) = (t("data"), t("data2"), t("ck"), t("pred"));

    ok(&["gen-data", "--config", &cfg, "--out", &data]);
    let (code, _) = run(&["gen-data", "--config", &cfg, "--out", &data2], &["--threads", "1"]);
    assert_eq!(code, 0);
    assert_eq!(dir_bytes(Path::new(&data)), dir_bytes(Path::new(&data2)));
    assert!(Path::new(&data).join("run_config.json").exists());

    let (code, text) = run(&["predict", "--config", &cfg, "--data", &data, "--out", &pred], &[]);
    assert_eq!(code, 3, "{text}");
    let (code, _) = run(&["predict", "--config", &cfg, "--data", &data, "--out", &pred, "--checkpoints", &ck], &[]);
    assert_eq!(code, 3);

    ok(&["train-liver", "--config", &cfg, "--data", &data, "--out", &ck]);
    ok(&["train-lesion", "--config", &cfg, "--data", &data, "--out", &ck]);
    ok(&["train-detector", "--config", &cfg, "--data", &data, "--out", &ck]);
    for sub in ["liver", "lesion", "baseline", "detector"] {
        assert!(Path::new(&ck).join(sub).join("manifest.json").exists());
    }

    ok(&["predict", "--config", &cfg, "--data", &data, "--out", &pred, "--checkpoints", &ck]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&data).join("dataset.json")).unwrap()).unwrap();
    let test_id = manifest["test"][0].as_str().unwrap().to_string();
    for suffix in ["_liverpred.json", "_lesionprob.raw", "_lesionpred.raw", ".json"] {
        assert!(Path::new(&pred).join(format!("{test_id}{suffix}")).exists(), "{suffix}");
    }
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&pred).join(format!("{test_id}.json"))).unwrap()).unwrap();
    assert!(sidecar["config"]["pipeline"].is_object());
    assert!(sidecar["timings"].is_object());

    let text = ok(&["evaluate", "--config", &cfg, "--data", &data, "--pred", &pred, "--out", &t("eval")]);
    assert!(text.contains("liver dice"));
    ok(&["refine-crf", "--config", &cfg, "--data", &data, "--pred", &pred, "--out", &t("refined")]);
    ok(&["overlay", "--config", &cfg, "--data", &data, "--pred", &pred, "--case", &test_id, "--out", &t("overlay")]);
    let ppm = fs::read(Path::new(&t("overlay")).join(format!("{test_id}_z000.ppm"))).unwrap();
    assert!(ppm.starts_with(b"P6\n64 64\n255\n"));

    ok(&["ablate", "--config", &cfg, "--data", &data, "--checkpoints", &ck, "--out", &t("ablation")]);
    let csv = fs::read_to_string(Path::new(&t("ablation")).join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["Segmentation-only baseline", "3-i/o + BP in liver", "+ Detector", "+ 3D-CRF"]);
}

#[test]
fn error_exit_codes() {
    let cfg = desk().to_string_lossy().into_owned();
    let (code, _) = run(&["predict", "--bogus"], &[]);
    assert_eq!(code, 2);
    let (code, _) = run(&["gen-data", "--config", "/nonexistent/c.json"], &[]);
    assert_eq!(code, 3);
    let (code, _) = run(&["gen-data", "--config", &cfg], &["--set", "pipeline.no_such_key=1"]);
    assert_eq!(code, 3);
    let (code, _) = run(&["evaluate", "--config", &cfg, "--data", "/nonexistent/data", "--pred", "/nonexistent/p"], &[]);
    assert_eq!(code, 4);
    let status = Command::new(BIN)
        .args(["gen-data", "--config", &cfg, "--out", "/nonexistent-root-dir/x"])
        .env("CASCADE_SEG_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
