use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pkcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkcp"))
        .args(args)
        .env_remove("PKCP_THREADS")
        .output()
        .expect("spawn pkcp")
}

fn ok(args: &[&str]) -> String {
    let out = pkcp(args);
    assert!(
        out.status.success(),
        "pkcp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = pkcp(args);
    assert!(!out.status.success(), "pkcp {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let text = format!(
        "name = \"{name}\"\n{body}\n[hyperparams]\nlearning_rate = 0.05\nbatch_size = 32\nmax_epochs = 40\npatience = 20\n"
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn phantom_split_enumerate_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let manifest = cohort.join("manifest.json");

    let out = ok(&[
        "phantom", "--out", s(&cohort), "--seed", "3", "--counts", "HH=6,OBHT=6,HB=6,OMHT=6", "--size", "16x16", "--radius", "3-5",
        "--noise", "2",
    ]);
    assert!(out.contains("wrote 24 patients, 288 slices"), "{out}");

    let out = ok(&["split", "--manifest", s(&manifest), "--train-fraction", "0.75", "--seed", "1"]);
    assert!(out.contains("train: 18 patients"), "{out}");
    assert!(out.contains("val: 6 patients"), "{out}");

    let out = ok(&["enumerate", "--manifest", s(&manifest), "--phases", "AP,DP", "--out", s(&dir.path().join("enum"))]);
    // two phases: minority classes expand to 3^2, majority to 3
    assert!(out.contains(&format!("wrote {} composites", 12 * 3 + 12 * 9)), "{out}");

    let cfg = write_config(dir.path(), "cli_train", "task = \"two_step\"\nseeds = [2]\n\n[data]\nmanifest = \"cohort/manifest.json\"\n");
    let model = dir.path().join("model.bin");
    ok(&["train", "--config", s(&cfg), "--out", s(&model)]);
    assert!(fs::metadata(&model).unwrap().len() > 0);

    let preds = dir.path().join("preds.json");
    let out = ok(&["predict", "--model", s(&model), "--manifest", s(&manifest), "--out", s(&preds)]);
    assert!(out.contains("wrote 48 predictions"), "{out}");

    let csv = ok(&["evaluate", "--predictions", s(&preds)]);
    assert!(csv.lines().any(|l| l.starts_with("two_step/accuracy,")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("benign_vs_malignant/auc_malignant,")), "{csv}");
    let json = ok(&["evaluate", "--predictions", s(&preds), "--format", "json"]);
    assert!(json.trim_start().starts_with('['));
}

#[test]
fn sequential_flag_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    ok(&["phantom", "--out", s(&cohort), "--counts", "HH=4,OBHT=4,HB=4,OMHT=4", "--size", "16x16", "--radius", "3-5"]);
    let cfg = write_config(dir.path(), "seq", "task = \"one_step\"\n\n[data]\nmanifest = \"cohort/manifest.json\"\n");
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["--sequential", "train", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn run_ablate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let body = "task = \"two_step\"\nseeds = [1, 2]\noutput_dir = \"runs/base\"\n\n[data.phantom]\nheight = 16\nwidth = 16\nnoise_sigma = 2.0\nradius_min = 3.0\nradius_max = 5.0\n\n[data.phantom.counts]\nHH = 5\nOBHT = 5\nHB = 5\nOMHT = 5\n";
    let cfg = write_config(dir.path(), "base", body);

    let out = ok(&["run", "--config", s(&cfg)]);
    assert!(out.contains("val/final_accuracy"), "{out}");
    for f in ["aggregate.json", "aggregate.csv", "artifacts.json", "config.toml", "seed_1/metrics.json", "seed_2/metrics.json"] {
        assert!(dir.path().join("runs/base").join(f).exists(), "{f}");
    }

    let out = ok(&["ablate", "--config", s(&cfg), "--axis", "steps"]);
    assert!(out.contains("2 variants"), "{out}");
    assert!(dir.path().join("runs/base/comparison.csv").exists());

    let report = dir.path().join("report.csv");
    ok(&["report", "--in", s(&dir.path().join("runs")), "--out", s(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("variant,metric,"), "{text}");
    assert!(text.lines().count() > 3);
}

#[test]
fn detection_predictions_are_scored() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("det.json");
    fs::write(
        &preds,
        r#"[{"image_id": "a", "boxes": [[0, 0, 10, 10, 0.9]], "gt": [[0, 0, 10, 10], [20, 20, 30, 30]]}]"#,
    )
    .unwrap();
    let out = ok(&["evaluate", "--predictions", s(&preds), "--kind", "detection"]);
    assert!(out.lines().any(|l| l == "ap,0.5"), "{out}");
    assert!(out.lines().any(|l| l == "recall,0.5"), "{out}");
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["phantom", "--out", s(dir.path()), "--counts", "HX=3"]);
    assert!(err.contains("HX"), "{err}");
    let err = fails(&["phantom", "--out", s(dir.path()), "--size", "16"]);
    assert!(err.contains("HxW"), "{err}");

    let missing = dir.path().join("nope.toml");
    let err = fails(&["run", "--config", s(&missing)]);
    assert!(err.contains("nope.toml"), "{err}");

    let cfg = write_config(dir.path(), "typo", "taks = \"two_step\"\n");
    let err = fails(&["run", "--config", s(&cfg)]);
    assert!(err.contains("taks"), "{err}");

    let cfg = write_config(dir.path(), "nodata", "task = \"two_step\"\n");
    let err = fails(&["run", "--config", s(&cfg)]);
    assert!(err.contains("data.manifest"), "{err}");

    let out = Command::new(env!("CARGO_BIN_EXE_pkcp"))
        .args(["report", "--in", s(dir.path())])
        .env("PKCP_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("PKCP_THREADS"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = pkcp_core::harness::load_config(&path).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
}
