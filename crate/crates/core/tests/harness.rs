//! Configuration, run outputs, the check battery and the decay fit.

mod common;

use std::path::{Path, PathBuf};

use cmdp_core::harness::{
    cli_check, cli_run, fit_decay_slope, fit_decay_slope_range, plot_data, read_avg_gap,
    run_checks, run_experiment, ExperimentConfig, Overrides, RunSummary, CSV_HEADER, EXIT_CONFIG,
    EXIT_DETERMINISTIC_FAILURE, EXIT_OK,
};
use cmdp_core::CmdpError;
use proptest::prelude::*;
use serde_json::json;

use common::reference_model1;

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn small_config(out: &str, episodes: usize) -> serde_json::Value {
    json!({
        "instance": {
            "seed": 3,
            "model_kind": "model_i",
            "dims": { "num_states": 3, "num_actions": 2, "num_contexts": 2, "horizon": 3, "feat_dim": 2 },
            "class_size": 3
        },
        "agent": { "bonus_scale": 0.1 },
        "run": { "episodes": episodes, "seeds": [1, 2], "output_dir": out },
        "check": { "seeds": 6, "checkpoints": [4, 16], "deterministic_trials": 10 }
    })
}

#[test]
fn missing_or_malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        cli_run(&dir.path().join("nope.json"), &Overrides::default()),
        EXIT_CONFIG
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cli_run(&bad, &Overrides::default()), EXIT_CONFIG);
    assert_eq!(cli_check(&bad), EXIT_CONFIG);
    let mut v = small_config("out", 10);
    v["agent"]["delta"] = json!(1.5);
    let invalid = write_config(dir.path(), "invalid.json", v);
    assert_eq!(cli_run(&invalid, &Overrides::default()), EXIT_CONFIG);
    let mut v = small_config("out", 10);
    v["run"]["bogus"] = json!(1);
    let unknown = write_config(dir.path(), "unknown.json", v);
    assert_eq!(cli_run(&unknown, &Overrides::default()), EXIT_CONFIG);
}

#[test]
fn single_episode_run_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small_config("out", 1));
    assert_eq!(cli_run(&cfg, &Overrides::default()), EXIT_OK);
    let text = std::fs::read_to_string(dir.path().join("out/run_seed1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("1,1,"));
}

#[test]
fn csv_rows_match_episodes_and_prefix_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small_config("out", 50));
    assert_eq!(cli_run(&cfg, &Overrides::default()), EXIT_OK);
    let text = std::fs::read_to_string(dir.path().join("out/run_seed2.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 50);
    let mut sum = 0.0;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 8);
        assert_eq!(row[0], "1");
        assert_eq!(row[1].parse::<usize>().unwrap(), i + 1);
        sum += row[3].parse::<f64>().unwrap();
        let avg: f64 = row[4].parse().unwrap();
        assert!((avg - sum / (i + 1) as f64).abs() < 1e-12);
        // 17 significant digits: one leading digit plus 16 after the point
        let mantissa = row[3].split('e').next().unwrap();
        assert_eq!(mantissa.trim_start_matches('-').len(), 18, "{}", row[3]);
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", small_config("out_a", 80));
    let b = write_config(dir.path(), "b.json", small_config("out_b", 80));
    assert_eq!(cli_run(&a, &Overrides::default()), EXIT_OK);
    assert_eq!(cli_run(&b, &Overrides::default()), EXIT_OK);
    for name in ["run_seed1.csv", "run_seed2.csv", "summary.json"] {
        let x = std::fs::read(dir.path().join("out_a").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("out_b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn overrides_replace_seed_episodes_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small_config("out", 50));
    let out = dir.path().join("elsewhere");
    let code = cli_run(
        &cfg,
        &Overrides {
            seed: Some(42),
            episodes: Some(7),
            output_dir: Some(out.clone()),
        },
    );
    assert_eq!(code, EXIT_OK);
    assert_eq!(read_avg_gap(&out.join("run_seed42.csv")).unwrap().len(), 7);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn summary_reports_slope_and_final_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small_config("out", 256));
    assert_eq!(cli_run(&cfg, &Overrides::default()), EXIT_OK);
    let text = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    let summary: RunSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(summary.seeds.len(), 2);
    let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
    for s in raw["seeds"].as_array().unwrap() {
        assert!(s.get("slope").is_some());
        assert!(s["final_avg_gap"].as_f64().is_some());
        assert!(!s["csv"].as_str().unwrap().contains('/'));
    }
    for s in &summary.seeds {
        let avg = read_avg_gap(&dir.path().join("out").join(&s.csv)).unwrap();
        assert_eq!(*avg.last().unwrap(), s.final_avg_gap);
        assert_eq!(s.dataset_sizes, vec![256; 3]);
    }
}

#[test]
fn plot_data_averages_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small_config("out", 20));
    assert_eq!(cli_run(&cfg, &Overrides::default()), EXIT_OK);
    let tsv = plot_data(&dir.path().join("out/summary.json")).unwrap();
    let a = read_avg_gap(&dir.path().join("out/run_seed1.csv")).unwrap();
    let b = read_avg_gap(&dir.path().join("out/run_seed2.csv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "n\tavg_gap");
    assert_eq!(lines.len(), 21);
    for (i, line) in lines[1..].iter().enumerate() {
        let (n, v) = line.split_once('\t').unwrap();
        assert_eq!(n.parse::<usize>().unwrap(), i + 1);
        assert!((v.parse::<f64>().unwrap() - 0.5 * (a[i] + b[i])).abs() < 1e-15);
    }
}

#[test]
fn diagnostics_are_tallied_during_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config("out", 40);
    v["run"]["diagnostics_every"] = json!(10);
    v["agent"]["bonus_scale"] = json!(1.0);
    let cfg = ExperimentConfig::load(&write_config(dir.path(), "c.json", v)).unwrap();
    let summary = run_experiment(&cfg).unwrap();
    let tally = &summary.seeds[0].diagnostics;
    assert_eq!(tally["optimism"].checked, 4);
    assert_eq!(tally["mle_guarantee"].checked, 4 * 3);
    assert_eq!(tally["coverage_reward"].failed, 0);
}

#[test]
fn oracle_mode_run_has_degenerate_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config("out", 128);
    v["agent"]["oracle_mode"] = json!(true);
    let cfg = ExperimentConfig::load(&write_config(dir.path(), "c.json", v)).unwrap();
    let summary = run_experiment(&cfg).unwrap();
    for s in &summary.seeds {
        assert!(s.degenerate_fit);
        assert!(s.slope.is_none());
    }
}

#[test]
fn check_passes_on_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small_config("out", 10));
    assert_eq!(cli_check(&cfg), EXIT_OK);
}

#[test]
fn check_passes_trivially_on_zero_reward_instance() {
    let dir = tempfile::tempdir().unwrap();
    let g = reference_model1();
    let mut doc = g.instance.to_document();
    doc.eta.iter_mut().for_each(|x| *x = 0.0);
    std::fs::write(
        dir.path().join("inst.json"),
        serde_json::to_string(&doc).unwrap(),
    )
    .unwrap();
    let mut v = small_config("out", 10);
    v["instance"] =
        json!({ "path": "inst.json", "seed": 7, "model_kind": "model_i", "class_size": 4 });
    let cfg = write_config(dir.path(), "c.json", v);
    let outcome = run_checks(&ExperimentConfig::load(&cfg).unwrap()).unwrap();
    assert!(outcome.deterministic.iter().all(|r| r.passed));
    assert!(outcome
        .probabilistic
        .iter()
        .all(|r| r.passed && r.violating_seeds == 0));
    assert_eq!(cli_check(&cfg), EXIT_OK);
}

#[test]
fn check_flags_corrupted_instance() {
    let dir = tempfile::tempdir().unwrap();
    let g = reference_model1();
    let mut doc = g.instance.to_document();
    doc.mu[0] += 0.4;
    std::fs::write(
        dir.path().join("inst.json"),
        serde_json::to_string(&doc).unwrap(),
    )
    .unwrap();
    let mut v = small_config("out", 10);
    v["instance"] =
        json!({ "path": "inst.json", "seed": 7, "model_kind": "model_i", "class_size": 4 });
    let cfg = write_config(dir.path(), "c.json", v);
    assert_eq!(cli_check(&cfg), EXIT_DETERMINISTIC_FAILURE);
    assert_eq!(cli_run(&cfg, &Overrides::default()), EXIT_CONFIG);
}

#[test]
fn fit_examples() {
    let power: Vec<f64> = (1..=1024).map(|n| (n as f64).powf(-0.5)).collect();
    assert!((fit_decay_slope(&power, 8).unwrap().slope + 0.5).abs() < 1e-9);
    assert!(fit_decay_slope(&[0.7; 100], 5).unwrap().slope.abs() < 1e-12);
    let mut zero = power.clone();
    zero[510] = 0.0;
    assert!(matches!(
        fit_decay_slope(&zero, 8),
        Err(CmdpError::DegenerateFit(_))
    ));
    // a perfect learner: one costly episode, then nothing
    let perfect: Vec<f64> = (1..=1024).map(|n| 0.8 / n as f64).collect();
    assert!(matches!(
        fit_decay_slope(&perfect, 8),
        Err(CmdpError::DegenerateFit(_))
    ));
    let fit = fit_decay_slope_range(&power, 8, 64, 1024).unwrap();
    assert_eq!(fit.checkpoints, vec![64, 128, 256, 512, 1024]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_is_scale_invariant(scale in 1e-3f64..1e3, exponent in -1.0f64..0.0, noise_seed in any::<u64>()) {
        let mut state = noise_seed;
        let seq: Vec<f64> = (1..=512)
            .map(|n| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let jitter = 1.0 + 0.1 * ((state >> 11) as f64 / (1u64 << 53) as f64);
                (n as f64).powf(exponent) * jitter
            })
            .collect();
        let scaled: Vec<f64> = seq.iter().map(|x| x * scale).collect();
        let a = fit_decay_slope(&seq, 4).unwrap();
        let b = fit_decay_slope(&scaled, 4).unwrap();
        prop_assert!((a.slope - b.slope).abs() < 1e-12);
        prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
    }

    #[test]
    fn exact_power_laws_are_recovered(exponent in -0.99f64..1.0, window in 1usize..16) {
        let seq: Vec<f64> = (1..=2048).map(|n| 3.0 * (n as f64).powf(exponent)).collect();
        let fit = fit_decay_slope(&seq, window).unwrap();
        prop_assert!((fit.slope - exponent).abs() < 1e-9);
        prop_assert!((fit.r2 - 1.0).abs() < 1e-9 || exponent.abs() < 1e-12);
    }
}
