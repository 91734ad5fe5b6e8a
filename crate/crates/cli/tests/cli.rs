use std::path::Path;
use std::process::{Command, Output};

const MINI: &str = r#"{
  "scenario": {"width": 8, "height": 8},
  "generate": {"num_sequences": 12},
  "sampling": {"tau": 4},
  "model": {"tau": 4, "frame_height": 8, "frame_width": 8,
            "backbone_blocks": [{"out_channels": 4, "stride": 2}, {"out_channels": 8, "stride": 2}],
            "feature_channels": 8, "traj_hidden": 8, "relation_dim": 8, "classifier_hidden": [8]},
  "train": {"epochs": 2, "batch_size": 16},
  "io": {"dataset_dir": "data", "weights_path": "out/weights.ntsr", "report_path": "out/report.json"}
}"#;

fn relnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("RELNET_PRECISION")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), MINI).unwrap();
    dir
}

#[test]
fn gen_train_eval_pipeline() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&relnet(d, &["gen", "--config", "c.json", "--out", "data"])), 0);
    assert!(d.join("data/manifest.json").is_file());

    let o = relnet(d, &["train", "--config", "c.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("out/weights.ntsr").is_file());
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/weights.history.json")).unwrap()).unwrap();
    assert_eq!(history["seed"], 0);
    assert_eq!(history["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(history["history"]["epoch_loss"].as_array().unwrap().len(), 2);

    let o = relnet(d, &["eval", "--config", "c.json", "--threshold", "0.4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["threshold"], 0.4);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_ne!(report["config_hash"], history["config_hash"]);
    let m = &report["metrics"];
    let total: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| m[*k].as_u64().unwrap()).sum();
    assert_eq!(total, m["n"].as_u64().unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("Acc,AUC,F1,P,R"));
}

#[test]
fn train_is_reproducible_from_config_and_seed() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&relnet(d, &["gen", "--config", "c.json"])), 0);
    let run = || {
        let o = relnet(d, &["train", "--config", "c.json", "--seed", "5"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let w = std::fs::read(d.join("out/weights.ntsr")).unwrap();
        let h = std::fs::read(d.join("out/weights.history.json")).unwrap();
        std::fs::remove_dir_all(d.join("out")).unwrap();
        (w, h)
    };
    let first = run();
    assert!(first == run(), "second run differs");
}

#[test]
fn manifest_mismatch_names_the_parameter() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&relnet(d, &["gen", "--config", "c.json"])), 0);
    assert_eq!(code(&relnet(d, &["train", "--config", "c.json"])), 0);
    let o = relnet(d, &["eval", "--config", "c.json", "--variant", "no_relation"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("relation.weight"), "{}", stderr(&o));
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let dir = setup();
    let d = dir.path();
    let o = relnet(d, &["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&relnet(d, &["train", "--bogus"])), 1);
    std::fs::write(d.join("bad.json"), r#"{"sampling": {"overlap": 1.5}}"#).unwrap();
    let o = relnet(d, &["gen", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sampling.overlap"));
    std::fs::write(d.join("typo.json"), "{\"sampling\": {\"strides\": 2}}").unwrap();
    assert_eq!(code(&relnet(d, &["gen", "--config", "typo.json"])), 1);
}

#[test]
fn missing_files_exit_2() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&relnet(d, &["gen", "--config", "absent.json"])), 2);
    assert_eq!(code(&relnet(d, &["train", "--config", "c.json"])), 2);
    assert_eq!(code(&relnet(d, &["eval", "--config", "c.json"])), 2);
}

#[test]
fn presets_change_only_the_overlap() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&relnet(d, &["gen", "--config", "c.json"])), 0);
    assert_eq!(code(&relnet(d, &["train", "--config", "c.json", "--preset", "pie"])), 0);
    let o = relnet(d, &["eval", "--config", "c.json", "--preset", "pie"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let jaad = relnet(d, &["eval", "--config", "c.json", "--preset", "jaad", "--out", "jaad.json"]);
    assert_eq!(code(&jaad), 0);
    let n = |p: &str| {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(p)).unwrap()).unwrap();
        v["metrics"]["n"].as_u64().unwrap()
    };
    assert!(n("jaad.json") > n("out/report.json"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = relnet(dir.path(), &["gradcheck", "--instances", "20", "--out", "g.json"]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(report["gradients"]["passed"], true);
    assert_eq!(report["invariance"]["passed"], true);
}

#[test]
fn bad_precision_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_relnet"))
        .args(["gradcheck"])
        .current_dir(dir.path())
        .env("RELNET_PRECISION", "f16")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let ablation = relnet::config::load_config(&root.join("ablation.json")).unwrap();
    assert_eq!(ablation, relnet::config::RunConfig::ablation());
    let mini = relnet::config::load_config(&root.join("miniature.json")).unwrap();
    assert_eq!(mini.model, relnet::model::ModelConfig::miniature());
}
