use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn quadmimic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadmimic")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = quadmimic(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const DATASET: &str = r#"
duration = 1.0
[[groups]]
motion_type = "stand"
count = 2
[[groups]]
motion_type = "trot"
count = 1
"#;

const PPO: &str = "hidden = [8]\nnum_envs = 2\nminibatch_size = 64\nepochs = 1\nhorizon = 50\n";

#[test]
fn generate_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(&dir.path().join("gen.toml"), DATASET);
    let data = dir.path().join("data");
    let data = data.to_str().unwrap();
    ok(&["gen-dataset", "--spec", &spec, "--out", data]);
    let out = ok(&["validate", data]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.starts_with("OK ")));
    assert!(out.contains("stand_001") && out.contains("trot_000"));

    fs::write(Path::new(data).join("trot_000.clip"), "garbage\n").unwrap();
    let bad = quadmimic(&["validate", data]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL trot_000"));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = quadmimic(&["train", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dataset"));
    assert_eq!(quadmimic(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = quadmimic(&["train", "--dataset", "/nonexistent", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_eval_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let spec = write(&dir.path().join("gen.toml"), DATASET);
    let ppo = write(&dir.path().join("ppo.toml"), PPO);
    ok(&["gen-dataset", "--spec", &spec, "--out", &p("data")]);
    ok(&["train", "--dataset", &p("data"), "--ppo", &ppo, "--iters", "2", "--out", &p("run")]);
    for f in ["config.toml", "train_log.csv", "eval_log.csv", "final.bin"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let train_log = fs::read_to_string(dir.path().join("run/train_log.csv")).unwrap();
    assert_eq!(train_log.lines().count(), 3);

    ok(&["eval", "--dataset", &p("data"), "--checkpoint", &p("run/final.bin"), "--out", &p("eval.csv")]);
    let eval = fs::read_to_string(p("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 4);
    assert!(dir.path().join("eval.csv.config.toml").exists());

    ok(&["rollout", "--clip", "stand", "--checkpoint", &p("run/final.bin"), "--out", &p("traj.csv")]);
    let rows = fs::read_to_string(p("traj.csv")).unwrap().lines().count();
    assert_eq!(rows, 501);
}

#[test]
fn retarget_a_synthetic_source() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&["gen-source", "--type", "trot", "--duration", "2", "--skeleton-scale", "1.2", "--out", &p("src.kp")]);
    let out = ok(&["retarget", "--src", &p("src.kp"), "--scale", "0.833", "--out", &p("trot.clip")]);
    assert!(out.starts_with("clip,scale,"));
    assert!(dir.path().join("trot.clip.config.toml").exists());
    assert!(ok(&["validate", &p("")]).contains("OK trot"));
}

#[test]
fn shipped_configs_parse() {
    use quadmimic::config;
    use quadmimic::harness::dataset_gen::{generate_dataset, DatasetSpec};
    use quadmimic::harness::experiment::ExperimentSpec;
    use quadmimic::RobotModel;

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(root.join("experiments")).unwrap() {
        let spec: ExperimentSpec = config::load(&entry.unwrap().path()).unwrap();
        spec.validate().unwrap();
        assert!(!spec.seeds.is_empty());
        n += 1;
    }
    assert_eq!(n, 4);
    for entry in fs::read_dir(root.join("datasets")).unwrap() {
        let spec: DatasetSpec = config::load(&entry.unwrap().path()).unwrap();
        spec.validate().unwrap();
    }
    let spec: DatasetSpec = config::load(&root.join("datasets/five_jumps.toml")).unwrap();
    let clip = generate_dataset(&spec, &RobotModel::a1_like()).unwrap().get("jump_000").unwrap().clone();
    let z: Vec<f64> = clip.frames.iter().map(|f| f.com.z).collect();
    let peaks = (1..z.len() - 1).filter(|&i| z[i] > z[i - 1] && z[i] >= z[i + 1] && z[i] > z[0] + 0.05).count();
    assert_eq!(peaks, 5);
}
