//! Experiment orchestration behind the `cmdp-lab` binary: JSON configuration,
//! multi-seed runs with CSV/JSON output, the diagnostics battery, and the
//! decay-rate fit.
//!
//! # Decay fit protocol
//!
//! The average gap is sampled at geometric checkpoints `n = 2^k`. At each
//! checkpoint both coordinates are averaged in log space over the trailing
//! window `(n − window, n]`, i.e. `x = mean log m`, `y = mean log ā_m`, and
//! the slope is the ordinary least-squares fit of `y` on `x`. Averaging both
//! coordinates keeps an exact power law exact, and working in log space keeps
//! the fit invariant to rescaling the gaps.
//!
//! The fit is degenerate (reported as a flag, slope `None`) when a sampled
//! average is not positive, or when no gap at all is incurred over the fit
//! range — a perfect learner's average decays as `1/n` by construction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{bonus_params_for, Agent, AgentConfig, BonusSetup, RunLog};
use crate::bonuses::CConvention;
use crate::diagnostics::{
    check_concentration_event, check_lsr_guarantee, check_mle_guarantee, check_optimism,
    check_pointwise_coverage_model1, deterministic_suite, probabilistic_suite, CheckKind,
    CheckReport, FrequencyReport, ProbabilisticSetup,
};
use crate::error::{CmdpError, Result};
use crate::model::{
    generate_classes, generate_instance, Dims, EtaTable, InstanceDocument, InstanceSpec,
    ModelClass, ModelKind, MuTable, PROB_TOL,
};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str =
    "schema_version,episode,context,gap,avg_gap,mean_tbonus,mean_rbonus,mle_correct";
pub const THREADS_ENV: &str = "CMDP_LAB_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_DETERMINISTIC_FAILURE: i32 = 4;
pub const EXIT_PROBABILISTIC_FAILURE: i32 = 5;

// ── Configuration ───────────────────────────────────────────────────────

fn default_delta() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}
fn default_window() -> usize {
    8
}
fn default_fit_min() -> usize {
    64
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_check_seeds() -> usize {
    50
}
fn default_checkpoints() -> Vec<usize> {
    vec![8, 64, 512]
}
fn default_trials() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceBlock {
    /// Load an instance document instead of generating one.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub model_kind: ModelKind,
    #[serde(default)]
    pub dims: Option<Dims>,
    pub class_size: usize,
    /// Reward class size for varying weights; defaults to `class_size`.
    #[serde(default)]
    pub reward_class_size: Option<usize>,
    #[serde(default)]
    pub mix_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBlock {
    #[serde(default = "one")]
    pub bonus_scale: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "one")]
    pub gamma1: f64,
    #[serde(default = "one")]
    pub gamma2: f64,
    #[serde(default)]
    pub c_convention: CConvention,
    #[serde(default)]
    pub oracle_mode: bool,
}

impl Default for AgentBlock {
    fn default() -> Self {
        Self {
            bonus_scale: 1.0,
            delta: default_delta(),
            gamma1: 1.0,
            gamma2: 1.0,
            c_convention: CConvention::Sqrt,
            oracle_mode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    #[serde(default = "default_check_seeds")]
    pub seeds: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_trials")]
    pub deterministic_trials: usize,
    #[serde(default = "one")]
    pub bonus_scale: f64,
}

impl Default for CheckBlock {
    fn default() -> Self {
        Self {
            seeds: default_check_seeds(),
            checkpoints: default_checkpoints(),
            deterministic_trials: default_trials(),
            bonus_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub diagnostics_every: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_window")]
    pub slope_window: usize,
    #[serde(default = "default_fit_min")]
    pub fit_min: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceBlock,
    #[serde(default)]
    pub agent: AgentBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub check: CheckBlock,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: Self = serde_json::from_str(&text)?;
        // relative paths in the config are relative to the config file
        if let Some(dir) = path.parent() {
            if let Some(p) = &config.instance.path {
                if p.is_relative() {
                    config.instance.path = Some(dir.join(p));
                }
            }
            if config.run.output_dir.is_relative() {
                config.run.output_dir = dir.join(&config.run.output_dir);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let inst = &self.instance;
        if inst.path.is_none() && inst.dims.is_none() {
            return Err(CmdpError::Config(
                "instance needs either `path` or `dims`".into(),
            ));
        }
        if inst.class_size == 0 || inst.reward_class_size == Some(0) {
            return Err(CmdpError::Config("class sizes must be >= 1".into()));
        }
        if self.run.episodes == 0 {
            return Err(CmdpError::Config("run.episodes must be >= 1".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(CmdpError::Config("run.seeds must not be empty".into()));
        }
        if self.run.slope_window == 0 {
            return Err(CmdpError::Config("run.slope_window must be >= 1".into()));
        }
        let a = &self.agent;
        if !(a.delta > 0.0 && a.delta < 1.0) {
            return Err(CmdpError::Config(format!(
                "agent.delta {} outside (0,1)",
                a.delta
            )));
        }
        if !(a.bonus_scale >= 0.0 && a.bonus_scale.is_finite()) {
            return Err(CmdpError::Config(
                "agent.bonus_scale must be finite and >= 0".into(),
            ));
        }
        if !(a.gamma1 > 0.0 && a.gamma2 > 0.0) {
            return Err(CmdpError::Config("agent gammas must be > 0".into()));
        }
        if self.check.seeds == 0 || self.check.checkpoints.contains(&0) {
            return Err(CmdpError::Config(
                "check seeds and checkpoints must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn reward_class_size(&self) -> usize {
        self.instance
            .reward_class_size
            .unwrap_or(self.instance.class_size)
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.run.seeds = vec![seed];
        }
        if let Some(n) = self.episodes {
            config.run.episodes = n;
        }
        if let Some(out) = &self.output_dir {
            config.run.output_dir = out.clone();
        }
    }
}

/// Instance plus the classes handed to the learner.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: InstanceSpec,
    pub transition_class: ModelClass<MuTable>,
    pub reward_class: Option<ModelClass<EtaTable>>,
}

/// Generates or loads the configured instance.
pub fn prepare_instance(config: &ExperimentConfig) -> Result<Prepared> {
    let block = &config.instance;
    match &block.path {
        Some(path) => {
            let instance = InstanceDocument::load(path)?.into_instance()?;
            if instance.kind() != block.model_kind {
                return Err(CmdpError::Config(format!(
                    "instance file is {:?}, config says {:?}",
                    instance.kind(),
                    block.model_kind
                )));
            }
            let (transition_class, mut reward_class) =
                generate_classes(&instance, block.class_size, block.seed)?;
            if let (Some(rc), true) = (
                &reward_class,
                config.reward_class_size() != block.class_size,
            ) {
                let (_, resized) = generate_classes(
                    &instance,
                    config.reward_class_size(),
                    block.seed ^ rc.len() as u64,
                )?;
                reward_class = resized;
            }
            Ok(Prepared {
                instance,
                transition_class,
                reward_class,
            })
        }
        None => {
            let dims = block.dims.expect("validated");
            let g = generate_instance(
                block.seed,
                dims,
                block.model_kind,
                block.class_size,
                block.mix_eps,
            )?;
            let mut reward_class = g.reward_class;
            if reward_class.is_some() && config.reward_class_size() != block.class_size {
                let (_, resized) = generate_classes(
                    &g.instance,
                    config.reward_class_size(),
                    block.seed.wrapping_add(1),
                )?;
                reward_class = resized;
            }
            Ok(Prepared {
                instance: g.instance,
                transition_class: g.transition_class,
                reward_class,
            })
        }
    }
}

fn bonus_setup(
    config: &ExperimentConfig,
    prepared: &Prepared,
    episodes: usize,
    scale: f64,
) -> BonusSetup {
    let a = &config.agent;
    bonus_params_for(
        &prepared.instance,
        prepared.transition_class.len(),
        prepared.reward_class.as_ref().map_or(1, |c| c.len()),
        episodes,
        a.delta,
        scale,
        (a.gamma1, a.gamma2),
        a.c_convention,
    )
}

/// Worker pool sized by `CMDP_LAB_THREADS` (default: available parallelism).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            CmdpError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        if n == 0 {
            return Err(CmdpError::Config(format!("{THREADS_ENV} must be >= 1")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CmdpError::Config(format!("cannot build worker pool: {e}")))
}

// ── Decay fit ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Checkpoint episode indices used in the fit.
    pub checkpoints: Vec<usize>,
}

/// Log-log slope of `avg_gap` over all checkpoints `2^k ∈ [window, len]`.
pub fn fit_decay_slope(avg_gap: &[f64], window: usize) -> Result<DecayFit> {
    if window == 0 || avg_gap.len() < 4 * window {
        return Err(CmdpError::Config(format!(
            "decay fit needs at least 4·window = {} points, got {}",
            4 * window.max(1),
            avg_gap.len()
        )));
    }
    fit_decay_slope_range(avg_gap, window, window, avg_gap.len())
}

/// Log-log slope restricted to checkpoints `2^k ∈ [n_min, n_max]`.
/// `avg_gap[i]` is the value after episode `i + 1`.
pub fn fit_decay_slope_range(
    avg_gap: &[f64],
    window: usize,
    n_min: usize,
    n_max: usize,
) -> Result<DecayFit> {
    let window = window.max(1);
    let n_max = n_max.min(avg_gap.len());
    let mut checkpoints = Vec::new();
    let mut n = 1usize;
    while n <= n_max {
        if n >= n_min.max(window) {
            checkpoints.push(n);
        }
        n *= 2;
    }
    if checkpoints.len() < 2 {
        return Err(CmdpError::Config(format!(
            "decay fit needs two checkpoints in [{n_min}, {n_max}]"
        )));
    }
    // No gap incurred anywhere in the fit range: the average then decays as
    // 1/n purely by construction, which says nothing about learning.
    let first = checkpoints[0] + 1 - window;
    let last = *checkpoints.last().expect("two checkpoints");
    let cum_first = first as f64 * avg_gap[first - 1];
    let cum_last = last as f64 * avg_gap[last - 1];
    if (cum_last - cum_first).abs() <= 1e-12 * cum_last.abs() {
        return Err(CmdpError::DegenerateFit(format!(
            "no gap incurred over episodes {first}..={last}"
        )));
    }
    let mut xs = Vec::with_capacity(checkpoints.len());
    let mut ys = Vec::with_capacity(checkpoints.len());
    for &c in &checkpoints {
        let mut x = 0.0;
        let mut y = 0.0;
        for m in (c - window + 1)..=c {
            let g = avg_gap[m - 1];
            if !(g > 0.0) {
                return Err(CmdpError::DegenerateFit(format!(
                    "average gap {g} at episode {m} is not positive"
                )));
            }
            x += (m as f64).ln();
            y += g.ln();
        }
        xs.push(x / window as f64);
        ys.push(y / window as f64);
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    Ok(DecayFit {
        slope,
        intercept,
        r2,
        checkpoints,
    })
}

// ── Runs ────────────────────────────────────────────────────────────────

/// One CSV row per episode, floats with 17 significant digits.
pub fn render_csv(log: &RunLog) -> String {
    let mut out = String::with_capacity(64 * (log.episodes.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (e, avg) in log.episodes.iter().zip(&log.avg_gap) {
        let mle = match e.mle_correct {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = writeln!(
            out,
            "{CSV_SCHEMA_VERSION},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{mle}",
            e.episode, e.context, e.gap, avg, e.mean_transition_bonus, e.mean_reward_bonus
        );
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTally {
    pub checked: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// CSV file name, relative to the summary's directory.
    pub csv: String,
    pub final_avg_gap: f64,
    pub first64_avg_gap: f64,
    /// `None` when the fit is degenerate (some gap is zero).
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub degenerate_fit: bool,
    pub mle_correct_fraction: f64,
    pub dataset_sizes: Vec<usize>,
    pub env_steps: u64,
    pub diagnostics: BTreeMap<String, DiagnosticTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub episodes: usize,
    pub instance_seed: u64,
    pub bonus_scale: f64,
    pub delta: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub c: f64,
    pub slope_window: usize,
    pub fit_range: [usize; 2],
    pub seeds: Vec<SeedSummary>,
}

/// Runs one seed; diagnostics (if enabled) are tallied every
/// `diagnostics_every` episodes.
pub fn run_seed(
    prepared: &Prepared,
    agent_config: AgentConfig,
) -> Result<(RunLog, BTreeMap<String, DiagnosticTally>)> {
    let every = agent_config.diagnostics_every;
    let delta = agent_config.bonus.delta;
    let mut tally: BTreeMap<String, DiagnosticTally> = BTreeMap::new();
    let agent = Agent::new(
        &prepared.instance,
        &prepared.transition_class,
        prepared.reward_class.as_ref(),
        agent_config,
    )?;
    let log = agent.run_with(|agent, plan| {
        if every == 0 || plan.episode % every != 0 || plan.estimates.is_none() {
            return Ok(());
        }
        let mut reports = vec![check_optimism(agent, plan)?];
        for h in 0..agent.instance().dims.horizon {
            reports.push(check_mle_guarantee(agent, plan, h, delta));
            reports.push(check_concentration_event(agent, plan, h)?);
            if agent.config().model_kind == ModelKind::ModelII {
                reports.push(check_lsr_guarantee(agent, plan, h, delta));
            }
        }
        if agent.config().model_kind == ModelKind::ModelI {
            reports.extend(check_pointwise_coverage_model1(agent, plan)?);
        }
        for r in reports {
            let t = tally.entry(r.name).or_default();
            t.checked += 1;
            t.failed += usize::from(!r.passed);
        }
        Ok(())
    })?;
    Ok((log, tally))
}

fn agent_config_for(config: &ExperimentConfig, setup: &BonusSetup, seed: u64) -> AgentConfig {
    AgentConfig {
        model_kind: config.instance.model_kind,
        bonus: setup.params.clone(),
        planned_episodes: config.run.episodes,
        seed,
        oracle_mode: config.agent.oracle_mode,
        diagnostics_every: config.run.diagnostics_every,
        keep_policy_history: false,
    }
}

fn summarize_seed(
    config: &ExperimentConfig,
    log: &RunLog,
    tally: BTreeMap<String, DiagnosticTally>,
    csv: String,
) -> SeedSummary {
    let n = log.avg_gap.len();
    let first = n.min(64);
    let first64 = log.episodes[..first].iter().map(|e| e.gap).sum::<f64>() / first as f64;
    let fit = fit_decay_slope_range(&log.avg_gap, config.run.slope_window, config.run.fit_min, n);
    let (slope, intercept, r2, degenerate) = match &fit {
        Ok(f) => (Some(f.slope), Some(f.intercept), Some(f.r2), false),
        Err(CmdpError::DegenerateFit(_)) => (None, None, None, true),
        Err(_) => (None, None, None, false),
    };
    let fitted: Vec<bool> = log.episodes.iter().filter_map(|e| e.mle_correct).collect();
    let mle_fraction = if fitted.is_empty() {
        0.0
    } else {
        fitted.iter().filter(|b| **b).count() as f64 / fitted.len() as f64
    };
    SeedSummary {
        seed: log.seed,
        csv,
        final_avg_gap: log.avg_gap[n - 1],
        first64_avg_gap: first64,
        slope,
        intercept,
        r2,
        degenerate_fit: degenerate,
        mle_correct_fraction: mle_fraction,
        dataset_sizes: log.dataset_sizes.clone(),
        env_steps: log.env_steps,
        diagnostics: tally,
    }
}

pub fn csv_name(seed: u64) -> String {
    format!("run_seed{seed}.csv")
}

/// Runs every configured seed in the worker pool, writes one CSV per seed
/// and `summary.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let prepared = prepare_instance(config)?;
    let setup = bonus_setup(
        config,
        &prepared,
        config.run.episodes,
        config.agent.bonus_scale,
    );
    let out_dir = &config.run.output_dir;
    std::fs::create_dir_all(out_dir)?;
    let pool = worker_pool()?;
    let seeds = config.run.seeds.clone();
    let per_seed: Vec<SeedSummary> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (log, tally) = run_seed(&prepared, agent_config_for(config, &setup, seed))?;
                let name = csv_name(seed);
                std::fs::write(out_dir.join(&name), render_csv(&log))?;
                Ok(summarize_seed(config, &log, tally, name))
            })
            .collect::<Result<_>>()
    })?;
    let summary = RunSummary {
        schema_version: CSV_SCHEMA_VERSION,
        model_kind: config.instance.model_kind,
        episodes: config.run.episodes,
        instance_seed: config.instance.seed,
        bonus_scale: config.agent.bonus_scale,
        delta: config.agent.delta,
        p_min: setup.p_min,
        p_max: setup.p_max,
        c: setup.params.c,
        slope_window: config.run.slope_window,
        fit_range: [config.run.fit_min, config.run.episodes],
        seeds: per_seed,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out_dir.join("summary.json"), text + "\n")?;
    Ok(summary)
}

fn is_config_error(e: &CmdpError) -> bool {
    matches!(
        e,
        CmdpError::Config(_)
            | CmdpError::Json(_)
            | CmdpError::Io(_)
            | CmdpError::InvalidInstance(_)
            | CmdpError::InvalidKernel { .. }
            | CmdpError::MissingN
            | CmdpError::DimMismatch { .. }
    )
}

/// `run` subcommand. Exit 0 on success, 2 on configuration errors, 3 on
/// runtime failures.
pub fn cli_run(config_path: &Path, overrides: &Overrides) -> i32 {
    let mut config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cannot load config {}: {e}", config_path.display());
            return EXIT_CONFIG;
        }
    };
    overrides.apply(&mut config);
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    if let Err(e) = worker_pool() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    if let Err(e) = prepare_instance(&config) {
        eprintln!("error: cannot prepare instance: {e}");
        return if is_config_error(&e) {
            EXIT_CONFIG
        } else {
            EXIT_RUNTIME
        };
    }
    match run_experiment(&config) {
        Ok(summary) => {
            for s in &summary.seeds {
                let slope = s
                    .slope
                    .map_or("degenerate".to_string(), |v| format!("{v:.4}"));
                println!(
                    "seed {:>6}  final avg gap {:.6e}  slope {slope}  -> {}",
                    s.seed,
                    s.final_avg_gap,
                    config.run.output_dir.join(&s.csv).display()
                );
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: run failed: {e}");
            EXIT_RUNTIME
        }
    }
}

// ── Check battery ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub deterministic: Vec<CheckReport>,
    pub probabilistic: Vec<FrequencyReport>,
}

impl CheckOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.deterministic.iter().any(|r| !r.passed) {
            EXIT_DETERMINISTIC_FAILURE
        } else if self.probabilistic.iter().any(|r| !r.passed) {
            EXIT_PROBABILISTIC_FAILURE
        } else {
            EXIT_OK
        }
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:<13} {:>13} {:>13}  result",
            "check", "kind", "measured", "bound"
        );
        for r in &self.deterministic {
            let kind = match r.kind {
                CheckKind::Deterministic => "deterministic",
                CheckKind::Probabilistic => "probabilistic",
            };
            let _ = writeln!(
                out,
                "{:<28} {:<13} {:>13.4e} {:>13.4e}  {}  {}",
                r.name,
                kind,
                r.measured,
                r.bound,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<28} {:<9} {:>10} {:>8}  result",
            "check", "model", "violating", "allowed"
        );
        for r in &self.probabilistic {
            let _ = writeln!(
                out,
                "{:<28} {:<9} {:>7}/{:<2} {:>8}  {}",
                r.name,
                format!("{:?}", r.model_kind),
                r.violating_seeds,
                r.seeds,
                r.allowed,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Validity of a prepared instance: every kernel row stochastic, every
/// reward in `[0, 1]`, and the class truths equal the instance weights.
fn instance_validity(prepared: &Prepared) -> CheckReport {
    let mut problems = Vec::new();
    for (w, mdp) in prepared.instance.mdps.iter().enumerate() {
        if let Err(e) = mdp.validate_kernel(PROB_TOL) {
            problems.push(format!("context {w}: {e}"));
        }
        if mdp
            .rewards()
            .iter()
            .any(|r| !(-PROB_TOL..=1.0 + PROB_TOL).contains(r))
        {
            problems.push(format!("context {w}: reward outside [0,1]"));
        }
    }
    if prepared.transition_class.truth() != &prepared.instance.weights.mu {
        problems.push("transition class truth differs from the instance".into());
    }
    let measured = problems.len() as f64;
    let mut report =
        CheckReport::upper("instance_validity", CheckKind::Deterministic, measured, 0.0);
    report.passed = problems.is_empty();
    report.with_detail(if problems.is_empty() {
        "ok".to_string()
    } else {
        problems.join("; ")
    })
}

/// Full diagnostics battery for a config: instance validity, the
/// deterministic suite, and the multi-seed probabilistic suite on the
/// configured instance at `check.bonus_scale`.
pub fn run_checks(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let prepared = match prepare_instance(config) {
        Ok(p) => p,
        Err(e @ (CmdpError::InvalidInstance(_) | CmdpError::InvalidKernel { .. })) => {
            let mut report =
                CheckReport::upper("instance_validity", CheckKind::Deterministic, 1.0, 0.0);
            report.passed = false;
            return Ok(CheckOutcome {
                deterministic: vec![report.with_detail(e.to_string())],
                probabilistic: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    let validity = instance_validity(&prepared);
    if !validity.passed {
        return Ok(CheckOutcome {
            deterministic: vec![validity],
            probabilistic: Vec::new(),
        });
    }
    let pool = worker_pool()?;
    pool.install(|| {
        let mut deterministic = vec![validity];
        deterministic.extend(deterministic_suite(
            config.instance.seed,
            config.check.deterministic_trials,
        )?);
        let last = config.check.checkpoints.iter().copied().max().unwrap_or(1);
        let setup = bonus_setup(config, &prepared, last, config.check.bonus_scale);
        let base = AgentConfig {
            model_kind: config.instance.model_kind,
            bonus: setup.params,
            planned_episodes: last,
            seed: 0,
            oracle_mode: false,
            diagnostics_every: 0,
            keep_policy_history: false,
        };
        let probabilistic = probabilistic_suite(&ProbabilisticSetup {
            instance: &prepared.instance,
            transition_class: &prepared.transition_class,
            reward_class: prepared.reward_class.as_ref(),
            base_config: base,
            seeds: (0..config.check.seeds as u64).collect(),
            checkpoints: config.check.checkpoints.clone(),
            delta: config.agent.delta,
        })?;
        Ok(CheckOutcome {
            deterministic,
            probabilistic,
        })
    })
}

/// `check` subcommand: prints the report table. Exit 0 iff everything
/// passes, 4 on any deterministic failure, 5 when a probabilistic violation
/// count exceeds its allowance, 2/3 on configuration/runtime errors.
pub fn cli_check(config_path: &Path) -> i32 {
    let config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cannot load config {}: {e}", config_path.display());
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = worker_pool() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match run_checks(&config) {
        Ok(outcome) => {
            print!("{}", outcome.render_table());
            let code = outcome.exit_code();
            if code != EXIT_OK {
                eprintln!("check failed (exit {code})");
            }
            code
        }
        Err(e) => {
            eprintln!("error: check failed to run: {e}");
            if is_config_error(&e) {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

// ── Plot data ───────────────────────────────────────────────────────────

/// Reads the `avg_gap` column of a run CSV.
pub fn read_avg_gap(csv_path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(CmdpError::Config(format!(
                "{}: unexpected CSV header {other:?}",
                csv_path.display()
            )))
        }
    }
    lines
        .map(|line| {
            line.split(',')
                .nth(4)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    CmdpError::Config(format!("{}: malformed row {line:?}", csv_path.display()))
                })
        })
        .collect()
}

/// Two-column TSV `n<TAB>avg_gap`, averaging across the summary's seeds.
pub fn plot_data(summary_path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(summary_path)?;
    let summary: RunSummary = serde_json::from_str(&text)?;
    let dir = summary_path.parent().unwrap_or(Path::new("."));
    let series = summary
        .seeds
        .iter()
        .map(|s| read_avg_gap(&dir.join(&s.csv)))
        .collect::<Result<Vec<_>>>()?;
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = String::from("n\tavg_gap\n");
    for i in 0..len {
        let mean = series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64;
        let _ = writeln!(out, "{}\t{:.16e}", i + 1, mean);
    }
    Ok(out)
}

/// `plot-data` subcommand: TSV on stdout.
pub fn cli_plot_data(summary_path: &Path) -> i32 {
    match plot_data(summary_path) {
        Ok(tsv) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(tsv.as_bytes()).is_err() {
                return EXIT_RUNTIME;
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
