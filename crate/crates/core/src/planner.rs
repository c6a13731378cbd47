//! Exact finite-horizon dynamic programming on tabular MDPs.
//!
//! One evaluation routine covers the plain value `V`, the `H`-truncated value
//! and the `3H`-truncated value through an optional per-step cap
//! `Q_h = min{cap, r_h + P_h V_{h+1}}`. Because `x ↦ min{cap, r + Px}` is
//! monotone in `x`, greedy backward induction maximizes the truncated value
//! over all policies, exactly as it does without truncation.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{InstanceSpec, PROB_TOL};
use crate::tabular::{StagePolicy, TabularMdp, TabularPolicy};

/// `V[h][s]` for `h ∈ 0..=H` (with `V[H] ≡ 0`) and `Q[h][s][a]` for `h < H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub cap: Option<f64>,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTable {
    fn zeros(mdp: &TabularMdp, cap: Option<f64>) -> Self {
        Self {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            horizon: mdp.horizon,
            cap,
            v: vec![0.0; (mdp.horizon + 1) * mdp.num_states],
            q: vec![0.0; mdp.horizon * mdp.num_states * mdp.num_actions],
        }
    }

    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.num_states + s]
    }

    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + s) * self.num_actions + a]
    }

    /// `V_h(·)` as a slice, for `h ∈ 0..=H`.
    pub fn v_step(&self, h: usize) -> &[f64] {
        &self.v[h * self.num_states..(h + 1) * self.num_states]
    }
}

#[inline]
fn backup(mdp: &TabularMdp, h: usize, s: usize, a: usize, next_v: &[f64], cap: Option<f64>) -> f64 {
    let raw = mdp.reward(h, s, a) + mdp.expect(h, s, a, next_v);
    match cap {
        Some(c) => raw.min(c),
        None => raw,
    }
}

fn greedy(mdp: &TabularMdp, cap: Option<f64>) -> (StagePolicy, ValueTable) {
    let ns = mdp.num_states;
    let na = mdp.num_actions;
    let mut table = ValueTable::zeros(mdp, cap);
    let mut policy = StagePolicy::constant(mdp.horizon, ns, 0);
    for h in (0..mdp.horizon).rev() {
        let (head, tail) = table.v.split_at_mut((h + 1) * ns);
        let next_v = &tail[..ns];
        let cur_v = &mut head[h * ns..];
        for s in 0..ns {
            let mut best_a = 0;
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let q = backup(mdp, h, s, a, next_v, cap);
                table.q[(h * ns + s) * na + a] = q;
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            cur_v[s] = best;
            policy.set_action(h, s, best_a);
        }
    }
    (policy, table)
}

/// Greedy plan for the truncated value with per-step cap `cap` (3H in the
/// learning loops). Ties go to the lowest action id.
pub fn truncated_plan(mdp: &TabularMdp, cap: f64) -> Result<(StagePolicy, ValueTable)> {
    mdp.validate_kernel(PROB_TOL)?;
    Ok(greedy(mdp, Some(cap)))
}

/// Uncapped backward induction.
pub fn optimal_plan(mdp: &TabularMdp) -> Result<(StagePolicy, ValueTable)> {
    mdp.validate_kernel(PROB_TOL)?;
    Ok(greedy(mdp, None))
}

/// Policy evaluation, optionally truncated per step at `cap`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &StagePolicy, cap: Option<f64>) -> ValueTable {
    let ns = mdp.num_states;
    let na = mdp.num_actions;
    let mut table = ValueTable::zeros(mdp, cap);
    for h in (0..mdp.horizon).rev() {
        let (head, tail) = table.v.split_at_mut((h + 1) * ns);
        let next_v = &tail[..ns];
        let cur_v = &mut head[h * ns..];
        for s in 0..ns {
            for a in 0..na {
                table.q[(h * ns + s) * na + a] = backup(mdp, h, s, a, next_v, cap);
            }
            cur_v[s] = table.q[(h * ns + s) * na + policy.action(h, s)];
        }
    }
    table
}

/// How actions are chosen when propagating state distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionRule {
    FollowPolicy,
    /// Follow the policy everywhere except step `h`, where the action is uniform.
    UniformAt(usize),
}

/// Exact state and state-action marginals `Pr(s_h = s)`, `Pr(s_h = s, a_h = a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    states: Vec<f64>,
    state_actions: Vec<f64>,
}

impl OccupancyTable {
    pub fn state(&self, h: usize, s: usize) -> f64 {
        self.states[h * self.num_states + s]
    }

    pub fn state_action(&self, h: usize, s: usize, a: usize) -> f64 {
        self.state_actions[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn states_at(&self, h: usize) -> &[f64] {
        &self.states[h * self.num_states..(h + 1) * self.num_states]
    }
}

/// Forward recursion from a point mass on `initial_state`.
pub fn occupancy(
    mdp: &TabularMdp,
    policy: &StagePolicy,
    initial_state: usize,
    rule: ActionRule,
) -> OccupancyTable {
    let ns = mdp.num_states;
    let na = mdp.num_actions;
    let mut states = vec![0.0; mdp.horizon * ns];
    let mut state_actions = vec![0.0; mdp.horizon * ns * na];
    if mdp.horizon > 0 {
        states[initial_state] = 1.0;
    }
    let uniform = 1.0 / na as f64;
    for h in 0..mdp.horizon {
        for s in 0..ns {
            let mass = states[h * ns + s];
            if mass == 0.0 {
                continue;
            }
            let base = (h * ns + s) * na;
            match rule {
                ActionRule::UniformAt(u) if u == h => {
                    for a in 0..na {
                        state_actions[base + a] = mass * uniform;
                    }
                }
                _ => state_actions[base + policy.action(h, s)] = mass,
            }
        }
        if h + 1 < mdp.horizon {
            for s in 0..ns {
                for a in 0..na {
                    let m = state_actions[(h * ns + s) * na + a];
                    if m == 0.0 {
                        continue;
                    }
                    for (s_next, p) in mdp.next_dist(h, s, a).iter().enumerate() {
                        states[(h + 1) * ns + s_next] += m * p;
                    }
                }
            }
        }
    }
    OccupancyTable {
        num_states: ns,
        num_actions: na,
        horizon: mdp.horizon,
        states,
        state_actions,
    }
}

/// `V*_w(s₁)` for every context.
pub fn optimal_values(instance: &InstanceSpec) -> Result<Vec<f64>> {
    instance
        .mdps
        .iter()
        .map(|mdp| Ok(optimal_plan(mdp)?.1.v(0, instance.initial_state)))
        .collect()
}

/// `Σ_w q(w)(V*_w(s₁) − V^{π_w}_w(s₁))` given precomputed optimal values.
pub fn avg_subopt_gap_with(
    instance: &InstanceSpec,
    optimal: &[f64],
    policy: &TabularPolicy,
) -> f64 {
    let s1 = instance.initial_state;
    let mut gap = 0.0;
    for (w, mdp) in instance.mdps.iter().enumerate() {
        let q = instance.context_space.prob(w);
        if q == 0.0 {
            continue;
        }
        let v = evaluate_policy(mdp, policy.context(w), None).v(0, s1);
        gap += q * (optimal[w] - v);
    }
    gap
}

/// Exact context-averaged sub-optimality of `policy`.
pub fn avg_subopt_gap(instance: &InstanceSpec, policy: &TabularPolicy) -> Result<f64> {
    let optimal = optimal_values(instance)?;
    Ok(avg_subopt_gap_with(instance, &optimal, policy))
}
