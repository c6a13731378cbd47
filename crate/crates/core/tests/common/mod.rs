//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the planner, so agreement is a genuine cross-check.
#![allow(dead_code)]

use cmdp_core::model::{generate_instance, Dims, GeneratedInstance, ModelKind};
use cmdp_core::tabular::{StagePolicy, TabularMdp};

pub fn dims(s: usize, k: usize, w: usize, h: usize, d: usize) -> Dims {
    Dims {
        num_states: s,
        num_actions: k,
        num_contexts: w,
        horizon: h,
        feat_dim: d,
    }
}

/// Reference shared-weights instance used by the decay experiments.
pub fn reference_model1() -> GeneratedInstance {
    generate_instance(7, dims(5, 2, 3, 4, 3), ModelKind::ModelI, 4, 0.0).unwrap()
}

/// Reference varying-weights instance used by the decay experiments.
pub fn reference_model2() -> GeneratedInstance {
    generate_instance(13, dims(4, 2, 3, 3, 3), ModelKind::ModelII, 4, 0.25).unwrap()
}

/// Truncated value of a deterministic policy by plain recursion over the
/// tree `V_h(s) = min{cap, r + Σ P V_{h+1}}` (no tables, no sharing).
pub fn naive_value(
    mdp: &TabularMdp,
    policy: &StagePolicy,
    cap: Option<f64>,
    h: usize,
    s: usize,
) -> f64 {
    if h == mdp.horizon {
        return 0.0;
    }
    let a = policy.action(h, s);
    let mut total = mdp.reward(h, s, a);
    for (s2, p) in mdp.next_dist(h, s, a).iter().enumerate() {
        if *p != 0.0 {
            total += p * naive_value(mdp, policy, cap, h + 1, s2);
        }
    }
    match cap {
        Some(c) => total.min(c),
        None => total,
    }
}

/// Every deterministic Markov policy for the given sizes.
pub fn all_policies(horizon: usize, num_states: usize, num_actions: usize) -> Vec<StagePolicy> {
    let slots = horizon * num_states;
    let total = num_actions.pow(slots as u32);
    (0..total)
        .map(|mut code| {
            let actions = (0..slots)
                .map(|_| {
                    let a = code % num_actions;
                    code /= num_actions;
                    a
                })
                .collect();
            StagePolicy::from_actions(horizon, num_states, actions).unwrap()
        })
        .collect()
}

/// Maximum over all deterministic policies of the (truncated) value at `s`.
pub fn brute_force_best(mdp: &TabularMdp, cap: Option<f64>, s: usize) -> f64 {
    all_policies(mdp.horizon, mdp.num_states, mdp.num_actions)
        .iter()
        .map(|p| naive_value(mdp, p, cap, 0, s))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Exact `Pr(s_h = s)` extremes over all deterministic policies, by
/// enumeration and explicit forward propagation.
pub fn brute_force_visit_extremes(
    mdp: &TabularMdp,
    start: usize,
    h: usize,
    s: usize,
) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for policy in all_policies(mdp.horizon, mdp.num_states, mdp.num_actions) {
        let mut dist = vec![0.0; mdp.num_states];
        dist[start] = 1.0;
        for step in 0..h {
            let mut next = vec![0.0; mdp.num_states];
            for (x, m) in dist.iter().enumerate() {
                for (y, p) in mdp
                    .next_dist(step, x, policy.action(step, x))
                    .iter()
                    .enumerate()
                {
                    next[y] += m * p;
                }
            }
            dist = next;
        }
        lo = lo.min(dist[s]);
        hi = hi.max(dist[s]);
    }
    (lo, hi)
}

/// Agent configuration with theory constants at the given scale.
pub fn agent_config(
    g: &GeneratedInstance,
    episodes: usize,
    bonus_scale: f64,
    seed: u64,
    oracle_mode: bool,
) -> cmdp_core::agents::AgentConfig {
    let setup = cmdp_core::agents::bonus_params_for(
        &g.instance,
        g.transition_class.len(),
        g.reward_class.as_ref().map_or(1, |c| c.len()),
        episodes,
        0.1,
        bonus_scale,
        (1.0, 1.0),
        cmdp_core::bonuses::CConvention::Sqrt,
    );
    cmdp_core::agents::AgentConfig {
        model_kind: g.instance.kind(),
        bonus: setup.params,
        planned_episodes: episodes,
        seed,
        oracle_mode,
        diagnostics_every: 0,
        keep_policy_history: false,
    }
}

/// Runs the algorithm matching the instance's model kind.
pub fn run(
    g: &GeneratedInstance,
    config: cmdp_core::agents::AgentConfig,
) -> cmdp_core::agents::RunLog {
    match g.instance.kind() {
        ModelKind::ModelI => {
            cmdp_core::agents::run_algorithm1(&g.instance, &g.transition_class, config).unwrap()
        }
        ModelKind::ModelII => cmdp_core::agents::run_algorithm2(
            &g.instance,
            &g.transition_class,
            g.reward_class.as_ref().unwrap(),
            config,
        )
        .unwrap(),
    }
}

/// Small seeded instances of either kind for property tests.
pub fn small_instance(seed: u64, kind: ModelKind) -> GeneratedInstance {
    let d = dims(
        2 + (seed % 3) as usize,
        2,
        1 + (seed % 3) as usize,
        1 + (seed % 4) as usize,
        2,
    );
    let eps = if kind == ModelKind::ModelII { 0.2 } else { 0.0 };
    generate_instance(seed, d, kind, 3, eps).unwrap()
}
