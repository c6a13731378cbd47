//! Exit codes and outputs of the `cmdp-lab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmdp-lab"))
}

fn exec(cmd: &mut Command) -> Output {
    cmd.env("CMDP_LAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_config() -> serde_json::Value {
    json!({
        "instance": {
            "seed": 5,
            "model_kind": "model_ii",
            "dims": { "num_states": 3, "num_actions": 2, "num_contexts": 2, "horizon": 2, "feat_dim": 2 },
            "class_size": 3,
            "mix_eps": 0.3
        },
        "agent": { "bonus_scale": 0.05 },
        "run": { "episodes": 64, "seeds": [3, 4], "output_dir": "out" },
        "check": { "seeds": 8, "checkpoints": [4, 16], "deterministic_trials": 10 }
    })
}

fn write(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&exec(bin().arg("--help"))), 0);
    assert_eq!(code(&exec(&mut bin())), 2);
    assert_eq!(code(&exec(bin().arg("frobnicate"))), 2);
}

#[test]
fn missing_config_exits_2() {
    let out = exec(bin().args(["run", "/definitely/not/here.json"]));
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    assert_eq!(
        code(&exec(bin().args(["check", "/definitely/not/here.json"]))),
        2
    );
    assert_eq!(
        code(&exec(
            bin().args(["plot-data", "/definitely/not/here.json"])
        )),
        2
    );
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    for bad in ["zero", "0"] {
        let out = bin()
            .arg("run")
            .arg(&cfg)
            .env("CMDP_LAB_THREADS", bad)
            .output()
            .unwrap();
        assert_eq!(code(&out), 2);
    }
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    std::fs::write(dir.path().join("blocker"), "file, not a directory").unwrap();
    let out = exec(
        bin()
            .arg("run")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join("blocker")),
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn run_writes_csv_per_seed_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    let out = exec(bin().arg("run").arg(&cfg).args(["--episodes", "1"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [3, 4] {
        let text =
            std::fs::read_to_string(dir.path().join(format!("out/run_seed{seed}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["episodes"], 1);
    assert_eq!(summary["model_kind"], "model_ii");
}

#[test]
fn reruns_are_byte_identical_regardless_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        code(&exec(bin().arg("run").arg(&cfg).arg("--out").arg(&a))),
        0
    );
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .env("CMDP_LAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    for name in ["run_seed3.csv", "run_seed4.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    let out_dir = dir.path().join("single");
    assert_eq!(
        code(&exec(
            bin()
                .arg("run")
                .arg(&cfg)
                .args(["--seed", "77"])
                .arg("--out")
                .arg(&out_dir)
        )),
        0
    );
    let names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.contains(&"run_seed77.csv".to_string()));
    assert_eq!(names.len(), 2);
}

#[test]
fn plot_data_emits_two_column_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    assert_eq!(code(&exec(bin().arg("run").arg(&cfg))), 0);
    let out = exec(
        bin()
            .arg("plot-data")
            .arg(dir.path().join("out/summary.json")),
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 65);
    assert!(lines.iter().all(|l| l.split('\t').count() == 2));
}

#[test]
fn check_passes_on_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &small_config());
    let out = exec(bin().arg("check").arg(&cfg));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("simulation_lemma"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn check_exits_5_when_optimism_is_switched_off() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config();
    // shared weights: optimism has no additive slack, so zero bonuses break it
    v["instance"]["model_kind"] = json!("model_i");
    v["instance"]["mix_eps"] = json!(0.0);
    v["check"]["bonus_scale"] = json!(0.0);
    v["check"]["seeds"] = json!(10);
    v["check"]["checkpoints"] = json!([4, 64]);
    let cfg = write(dir.path(), &v);
    let out = exec(bin().arg("check").arg(&cfg));
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn check_exits_4_on_broken_kernel() {
    let dir = tempfile::tempdir().unwrap();
    // build a valid instance document by running once, then break a transition row
    let doc = json!({
        "schema_version": 1,
        "model_kind": "model_i",
        "dims": { "num_states": 2, "num_actions": 1, "num_contexts": 1, "horizon": 1, "feat_dim": 1 },
        "q": [1.0],
        "phi": [1.0, 1.0],
        "psi": [1.0, 1.0],
        "mu": [0.9, 0.3],
        "eta": [0.5],
        "mix_eps": 0.0,
        "seed": 0
    });
    std::fs::write(dir.path().join("inst.json"), doc.to_string()).unwrap();
    let mut v = small_config();
    v["instance"] =
        json!({ "path": "inst.json", "seed": 1, "model_kind": "model_i", "class_size": 1 });
    let cfg = write(dir.path(), &v);
    let out = exec(bin().arg("check").arg(&cfg));
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("instance_validity"));

    // the same document with a stochastic row passes validation
    let mut fixed = doc.clone();
    fixed["mu"] = json!([0.7, 0.3]);
    std::fs::write(dir.path().join("inst.json"), fixed.to_string()).unwrap();
    assert_eq!(code(&exec(bin().arg("check").arg(&cfg))), 0);
}
