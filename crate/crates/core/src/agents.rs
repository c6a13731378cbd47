//! The two learning loops.
//!
//! [`run_algorithm1`] handles context-varying representations: it fits the
//! shared reward weights by ridge regression, selects the transition weights
//! by maximum likelihood, adds norm bonuses, and plans with the `3H`-truncated
//! value. [`run_algorithm2`] handles context-varying weights: both weight
//! tables are selected from finite classes, bonuses use squared norms, and
//! data is collected by `H` independent roll-ins per episode that take a
//! uniformly random action at the step being explored.
//!
//! Each episode first builds an [`EpisodePlan`] (estimates, optimistic MDPs
//! and a policy for every context), then executes it. Diagnostics can inspect
//! the agent between those two phases through [`Agent::run_with`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bonuses::{
    norm_bonus, schedule_model1, schedule_model2, squared_norm_bonus, BonusParams, CConvention,
    CovarianceAccumulator, Schedule,
};
use crate::error::{CmdpError, Result};
use crate::linalg::dot;
use crate::model::{
    compute_pmin_pmax, env_step, sample_context, sample_episode, EtaTable, FeatureSpec,
    InstanceSpec, ModelClass, ModelKind, MuTable,
};
use crate::oracles::{clip_reward, ridge_from_moments, LsrScores, MleScores, Record, ReplayBuffer};
use crate::planner::{
    avg_subopt_gap_with, occupancy, optimal_values, truncated_plan, ActionRule, ValueTable,
};
use crate::tabular::{StagePolicy, TabularMdp, TabularPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub model_kind: ModelKind,
    pub bonus: BonusParams,
    pub planned_episodes: usize,
    pub seed: u64,
    /// Use the true weights and zero bonuses; planning is unchanged.
    pub oracle_mode: bool,
    pub diagnostics_every: usize,
    /// Keep every episode's policy (needed by some diagnostics).
    #[serde(default)]
    pub keep_policy_history: bool,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.planned_episodes == 0 {
            return Err(CmdpError::Config("planned_episodes must be >= 1".into()));
        }
        self.bonus.validate()?;
        if self.model_kind == ModelKind::ModelII && self.bonus.planned_episodes.is_none() {
            return Err(CmdpError::MissingN);
        }
        Ok(())
    }
}

/// Reachability constant `C` and the resulting bonus parameters for an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BonusSetup {
    pub params: BonusParams,
    pub p_min: f64,
    pub p_max: f64,
}

/// Fills [`BonusParams`] from an instance. The reachability constant only
/// enters the varying-weights bonuses; for the shared-weights model it is 1.
#[allow(clippy::too_many_arguments)]
pub fn bonus_params_for(
    instance: &InstanceSpec,
    transition_class_size: usize,
    reward_class_size: usize,
    planned_episodes: usize,
    delta: f64,
    bonus_scale: f64,
    gammas: (f64, f64),
    convention: CConvention,
) -> BonusSetup {
    let (p_min, p_max) = compute_pmin_pmax(instance);
    let c = match instance.kind() {
        ModelKind::ModelI => 1.0,
        ModelKind::ModelII => convention.constant(p_min, p_max),
    };
    BonusSetup {
        params: BonusParams {
            gamma1: gammas.0,
            gamma2: gammas.1,
            delta,
            transition_class_size,
            reward_class_size,
            horizon: instance.dims.horizon,
            feat_dim: instance.dims.feat_dim,
            num_actions: instance.dims.num_actions,
            planned_episodes: Some(planned_episodes),
            c,
            bonus_scale,
        },
        p_min,
        p_max,
    }
}

/// Uniform i.i.d. action per `(w, h, s)`.
pub fn random_policy<R: Rng + ?Sized>(
    num_contexts: usize,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    rng: &mut R,
) -> TabularPolicy {
    let per_context = (0..num_contexts)
        .map(|_| {
            let actions = (0..horizon * num_states)
                .map(|_| rng.random_range(0..num_actions))
                .collect();
            StagePolicy::from_actions(horizon, num_states, actions).expect("sized")
        })
        .collect();
    TabularPolicy { per_context }
}

/// Point estimates used to build the optimistic MDPs of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub schedule: Schedule,
    /// Selected transition-class index per step.
    pub transition_selection: Vec<usize>,
    /// Ridge reward weights per step (shared-weights model).
    pub eta_hat: Option<Vec<Vec<f64>>>,
    /// Selected reward-class index per step (varying-weights model).
    pub reward_selection: Option<Vec<usize>>,
}

/// Everything decided before an episode is executed.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    /// 1-based episode index.
    pub episode: usize,
    pub context: usize,
    pub policy: TabularPolicy,
    /// `None` in the first episode (random policy, nothing fitted).
    pub estimates: Option<Estimates>,
    /// Optimistic MDP per context (kernel `P̂`, reward `r̂`).
    pub optimistic_mdps: Vec<TabularMdp>,
    /// Truncated value tables of the planned policies.
    pub optimistic_values: Vec<ValueTable>,
    /// Transition / reward bonus per `[w][h][s][a]`.
    pub transition_bonus: Vec<f64>,
    pub reward_bonus: Vec<f64>,
}

impl EpisodePlan {
    /// `E_{w∼q} V̿_w(s₁)` of the planned policies on the optimistic MDPs.
    pub fn expected_optimistic_value(&self, instance: &InstanceSpec) -> Option<f64> {
        if self.optimistic_values.is_empty() {
            return None;
        }
        Some(
            self.optimistic_values
                .iter()
                .enumerate()
                .map(|(w, v)| instance.context_space.prob(w) * v.v(0, instance.initial_state))
                .sum(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub context: usize,
    pub gap: f64,
    pub transition_selection: Vec<usize>,
    pub reward_selection: Vec<usize>,
    /// Whether every step selected the true transition weights; `None` when
    /// nothing was fitted.
    pub mle_correct: Option<bool>,
    pub mean_transition_bonus: f64,
    pub mean_reward_bonus: f64,
    pub trajectory_len: usize,
    /// Cumulative environment steps after this episode.
    pub env_steps: u64,
    pub optimistic_value: Option<f64>,
    pub optimal_value: f64,
    /// Additive slack allowed when comparing optimistic and optimal values.
    pub optimism_slack: f64,
    pub optimism_violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub model_kind: ModelKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeLog>,
    /// Prefix means of the per-episode gaps.
    pub avg_gap: Vec<f64>,
    /// `|D_h|` per step after the last episode.
    pub dataset_sizes: Vec<usize>,
    pub env_steps: u64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Environment steps per episode: a reset counts as one step, as does every
/// transition.
pub fn env_steps_per_episode(kind: ModelKind, horizon: usize) -> u64 {
    let h = horizon as u64;
    match kind {
        ModelKind::ModelI => h + 1,
        ModelKind::ModelII => h * (h + 1) / 2 + h,
    }
}

/// Learning state shared by both algorithms.
pub struct Agent<'a> {
    instance: &'a InstanceSpec,
    transition_class: &'a ModelClass<MuTable>,
    reward_class: Option<&'a ModelClass<EtaTable>>,
    config: AgentConfig,
    rng: ChaCha8Rng,
    buffer: ReplayBuffer,
    phi_acc: Vec<CovarianceAccumulator>,
    psi_acc: Vec<CovarianceAccumulator>,
    reward_moments: Vec<Vec<f64>>,
    mle: Vec<MleScores>,
    lsr: Vec<LsrScores>,
    /// Σ over past episodes of exact occupancies, `[w][h][s][a]`.
    cum_occupancy: Vec<f64>,
    policy_history: Vec<TabularPolicy>,
    optimal: Vec<f64>,
    episodes_done: usize,
    env_steps: u64,
    p_min: f64,
    p_max: f64,
}

impl<'a> Agent<'a> {
    pub fn new(
        instance: &'a InstanceSpec,
        transition_class: &'a ModelClass<MuTable>,
        reward_class: Option<&'a ModelClass<EtaTable>>,
        config: AgentConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.model_kind != instance.kind() {
            return Err(CmdpError::Config(format!(
                "agent configured for {:?} but instance is {:?}",
                config.model_kind,
                instance.kind()
            )));
        }
        if transition_class.is_empty() || transition_class.true_index >= transition_class.len() {
            return Err(CmdpError::Config(
                "transition class has no valid truth".into(),
            ));
        }
        if instance.kind() == ModelKind::ModelII {
            match reward_class {
                Some(rc) if !rc.is_empty() && rc.true_index < rc.len() => {}
                _ => {
                    return Err(CmdpError::Config(
                        "varying-weights agent needs a non-empty reward class".into(),
                    ))
                }
            }
        }
        let d = &instance.dims;
        let (p_min, p_max) = compute_pmin_pmax(instance);
        Ok(Self {
            instance,
            transition_class,
            reward_class,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            buffer: ReplayBuffer::new(d.horizon),
            phi_acc: (0..d.horizon)
                .map(|_| CovarianceAccumulator::new(d.feat_dim))
                .collect(),
            psi_acc: (0..d.horizon)
                .map(|_| CovarianceAccumulator::new(d.feat_dim))
                .collect(),
            reward_moments: vec![vec![0.0; d.feat_dim]; d.horizon],
            mle: (0..d.horizon)
                .map(|h| MleScores::new(h, transition_class.len()))
                .collect(),
            lsr: (0..d.horizon)
                .map(|h| LsrScores::new(h, reward_class.map_or(0, |c| c.len())))
                .collect(),
            cum_occupancy: vec![0.0; d.num_contexts * d.horizon * d.num_states * d.num_actions],
            policy_history: Vec::new(),
            optimal: optimal_values(instance)?,
            episodes_done: 0,
            env_steps: 0,
            p_min,
            p_max,
            config,
        })
    }

    pub fn instance(&self) -> &InstanceSpec {
        self.instance
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn transition_class(&self) -> &ModelClass<MuTable> {
        self.transition_class
    }

    pub fn reward_class(&self) -> Option<&ModelClass<EtaTable>> {
        self.reward_class
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn phi_accumulator(&self, h: usize) -> &CovarianceAccumulator {
        &self.phi_acc[h]
    }

    pub fn psi_accumulator(&self, h: usize) -> &CovarianceAccumulator {
        &self.psi_acc[h]
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn optimal_values(&self) -> &[f64] {
        &self.optimal
    }

    pub fn policy_history(&self) -> &[TabularPolicy] {
        &self.policy_history
    }

    /// `Σ_{τ<n} Pr_τ(s_h = s, a_h = a | w)`, summed over completed episodes,
    /// under the action rule each algorithm uses to fill `D_h`.
    pub fn cumulative_occupancy(&self, w: usize, h: usize, s: usize, a: usize) -> f64 {
        let d = &self.instance.dims;
        self.cum_occupancy[((w * d.horizon + h) * d.num_states + s) * d.num_actions + a]
    }

    /// Regularizers and multipliers for 1-based episode `n`.
    pub fn schedule(&self, n: usize) -> Result<Schedule> {
        match self.config.model_kind {
            ModelKind::ModelI => Ok(schedule_model1(&self.config.bonus, n)),
            ModelKind::ModelII => schedule_model2(&self.config.bonus, n),
        }
    }

    fn fit(&self, n: usize) -> Result<Estimates> {
        let horizon = self.instance.dims.horizon;
        let schedule = self.schedule(n)?;
        let oracle = self.config.oracle_mode;
        let transition_selection = (0..horizon)
            .map(|h| {
                if oracle {
                    Ok(self.transition_class.true_index)
                } else {
                    self.mle[h].best()
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (eta_hat, reward_selection) = match self.config.model_kind {
            ModelKind::ModelI => {
                let eta = (0..horizon)
                    .map(|h| {
                        if oracle {
                            Ok(self.instance.weights.eta.row(h, 0).to_vec())
                        } else {
                            ridge_from_moments(
                                self.psi_acc[h].gram(),
                                &self.reward_moments[h],
                                schedule.xi,
                            )
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Some(eta), None)
            }
            ModelKind::ModelII => {
                let rc = self.reward_class.expect("checked in new");
                let sel = (0..horizon)
                    .map(|h| {
                        if oracle {
                            rc.true_index
                        } else {
                            self.lsr[h].best()
                        }
                    })
                    .collect();
                (None, Some(sel))
            }
        };
        Ok(Estimates {
            schedule,
            transition_selection,
            eta_hat,
            reward_selection,
        })
    }

    fn build_optimistic(&self, est: &Estimates) -> Result<(Vec<TabularMdp>, Vec<f64>, Vec<f64>)> {
        let inst = self.instance;
        let d = &inst.dims;
        let features = &inst.features;
        let hf = d.horizon as f64;
        let sched = &est.schedule;
        let zero_bonus = self.config.oracle_mode;
        let sa = d.horizon * d.num_states * d.num_actions;
        let mut tbonus = vec![0.0; d.num_contexts * sa];
        let mut rbonus = vec![0.0; d.num_contexts * sa];
        let phi_factors = (0..d.horizon)
            .map(|h| self.phi_acc[h].factor(sched.lambda))
            .collect::<Result<Vec<_>>>()?;
        let psi_factors = (0..d.horizon)
            .map(|h| self.psi_acc[h].factor(sched.xi))
            .collect::<Result<Vec<_>>>()?;
        let reward_cap = 1.0 + hf + 1.0;

        let mut mdps = Vec::with_capacity(d.num_contexts);
        for w in 0..d.num_contexts {
            let kernel = selected_kernel(
                features,
                self.transition_class,
                &est.transition_selection,
                w,
            );
            let mut rewards = Vec::with_capacity(sa);
            for h in 0..d.horizon {
                for s in 0..d.num_states {
                    for a in 0..d.num_actions {
                        let phi = features.phi(h, s, a, w);
                        let psi = features.psi(h, s, a, w);
                        let fitted = match (&est.eta_hat, &est.reward_selection) {
                            (Some(eta), _) => dot(psi, &eta[h]),
                            (None, Some(sel)) => {
                                let rc = self.reward_class.expect("checked in new");
                                dot(psi, rc.candidates[sel[h]].row(h, w))
                            }
                            (None, None) => unreachable!("estimates always carry a reward fit"),
                        };
                        let (b, c) = if zero_bonus {
                            (0.0, 0.0)
                        } else {
                            let qb = phi_factors[h].quad_form_inv(phi)?;
                            let qc = psi_factors[h].quad_form_inv(psi)?;
                            match self.config.model_kind {
                                ModelKind::ModelI => (
                                    norm_bonus(sched.alpha, qb, hf),
                                    norm_bonus(sched.beta, qc, 1.0),
                                ),
                                ModelKind::ModelII => (
                                    squared_norm_bonus(sched.alpha, qb, hf),
                                    squared_norm_bonus(sched.beta, qc, 1.0),
                                ),
                            }
                        };
                        let i = w * sa + (h * d.num_states + s) * d.num_actions + a;
                        tbonus[i] = b;
                        rbonus[i] = c;
                        let r = clip_reward(fitted) + b + c;
                        assert!(
                            (0.0..=reward_cap).contains(&r),
                            "optimistic reward {r} outside [0, {reward_cap}]"
                        );
                        rewards.push(r);
                    }
                }
            }
            mdps.push(TabularMdp::new(
                d.num_states,
                d.num_actions,
                d.horizon,
                kernel,
                rewards,
            )?);
        }
        Ok((mdps, tbonus, rbonus))
    }

    /// Draws the context of the next episode and decides the policy.
    pub fn plan_episode(&mut self) -> Result<EpisodePlan> {
        let n = self.episodes_done + 1;
        let d = self.instance.dims;
        let context = sample_context(&self.instance.context_space, &mut self.rng);
        if n == 1 {
            let policy = random_policy(
                d.num_contexts,
                d.horizon,
                d.num_states,
                d.num_actions,
                &mut self.rng,
            );
            return Ok(EpisodePlan {
                episode: n,
                context,
                policy,
                estimates: None,
                optimistic_mdps: Vec::new(),
                optimistic_values: Vec::new(),
                transition_bonus: Vec::new(),
                reward_bonus: Vec::new(),
            });
        }
        let estimates = self.fit(n)?;
        let (mdps, tbonus, rbonus) = self.build_optimistic(&estimates)?;
        let cap = 3.0 * d.horizon as f64;
        let mut per_context = Vec::with_capacity(d.num_contexts);
        let mut values = Vec::with_capacity(d.num_contexts);
        for mdp in &mdps {
            let (pi, v) = truncated_plan(mdp, cap)?;
            per_context.push(pi);
            values.push(v);
        }
        Ok(EpisodePlan {
            episode: n,
            context,
            policy: TabularPolicy { per_context },
            estimates: Some(estimates),
            optimistic_mdps: mdps,
            optimistic_values: values,
            transition_bonus: tbonus,
            reward_bonus: rbonus,
        })
    }

    /// Additive optimism slack for the varying-weights model:
    /// `H²√K / (2C√(dN)) · (2ξd + C²ζ' + 2λd + 4C²ζ)`. Zero for the
    /// shared-weights model, where plain optimism is expected.
    pub fn optimism_slack(&self, n: usize) -> Result<f64> {
        if self.config.model_kind == ModelKind::ModelI {
            return Ok(0.0);
        }
        let p = &self.config.bonus;
        let s = self.schedule(n)?;
        let big_n = p.planned_episodes.ok_or(CmdpError::MissingN)? as f64;
        let hf = p.horizon as f64;
        let d = p.feat_dim as f64;
        let c = p.c;
        let nh = 2.0 * n as f64 * hf / p.delta;
        let zeta = (nh * p.transition_class_size as f64).ln();
        let zeta_r = (nh * p.reward_class_size as f64).ln();
        Ok(
            hf * hf * (p.num_actions as f64).sqrt() / (2.0 * c * (d * big_n).sqrt())
                * (2.0 * s.xi * d + c * c * zeta_r + 2.0 * s.lambda * d + 4.0 * c * c * zeta),
        )
    }

    fn record(&mut self, h: usize, rec: Record) {
        let f = &self.instance.features;
        let phi = f.phi(h, rec.state, rec.action, rec.context);
        let psi = f.psi(h, rec.state, rec.action, rec.context);
        self.phi_acc[h].update(phi).expect("feature dimension");
        self.psi_acc[h].update(psi).expect("feature dimension");
        for (m, x) in self.reward_moments[h].iter_mut().zip(psi) {
            *m += x * rec.reward;
        }
        self.mle[h].add(&rec, f, self.transition_class);
        if let Some(rc) = self.reward_class {
            self.lsr[h].add(&rec, f, rc);
        }
        self.buffer.push(h, rec);
    }

    fn accumulate_occupancy(&mut self, policy: &TabularPolicy) {
        let inst = self.instance;
        let d = &inst.dims;
        let block = d.num_states * d.num_actions;
        for w in 0..d.num_contexts {
            for h in 0..d.horizon {
                let rule = match self.config.model_kind {
                    ModelKind::ModelI => ActionRule::FollowPolicy,
                    ModelKind::ModelII => ActionRule::UniformAt(h),
                };
                // the follow-policy table is shared by all h; recomputing is cheap
                let occ = occupancy(inst.mdp(w), policy.context(w), inst.initial_state, rule);
                let base = (w * d.horizon + h) * block;
                for s in 0..d.num_states {
                    for a in 0..d.num_actions {
                        self.cum_occupancy[base + s * d.num_actions + a] +=
                            occ.state_action(h, s, a);
                    }
                }
            }
        }
    }

    /// Executes a plan in the true environment and updates the datasets.
    pub fn execute(&mut self, plan: &EpisodePlan) -> Result<EpisodeLog> {
        let inst = self.instance;
        let d = inst.dims;
        let w = plan.context;
        let policy = plan.policy.context(w);
        let sa = d.horizon * d.num_states * d.num_actions;
        let bonus_at = |table: &[f64], h: usize, s: usize, a: usize| -> f64 {
            if table.is_empty() {
                0.0
            } else {
                table[w * sa + (h * d.num_states + s) * d.num_actions + a]
            }
        };

        let mut visited: Vec<(usize, usize, usize)> = Vec::with_capacity(d.horizon);
        let trajectory_len;
        match self.config.model_kind {
            ModelKind::ModelI => {
                let traj = sample_episode(inst, w, policy, &mut self.rng);
                trajectory_len = traj.steps.len();
                for (h, step) in traj.steps.iter().enumerate() {
                    visited.push((h, step.state, step.action));
                    self.record(
                        h,
                        Record {
                            state: step.state,
                            action: step.action,
                            next_state: step.next_state,
                            reward: step.reward,
                            context: w,
                        },
                    );
                }
            }
            ModelKind::ModelII => {
                // one fresh roll-in per explored step
                let mut steps = 0;
                for h in 0..d.horizon {
                    let mut state = inst.initial_state;
                    for k in 0..h {
                        let (_, next) =
                            env_step(inst, w, k, state, policy.action(k, state), &mut self.rng);
                        state = next;
                        steps += 1;
                    }
                    let action = self.rng.random_range(0..d.num_actions);
                    let (reward, next_state) = env_step(inst, w, h, state, action, &mut self.rng);
                    steps += 1;
                    visited.push((h, state, action));
                    self.record(
                        h,
                        Record {
                            state,
                            action,
                            next_state,
                            reward,
                            context: w,
                        },
                    );
                }
                trajectory_len = steps;
            }
        }
        self.env_steps += env_steps_per_episode(self.config.model_kind, d.horizon);

        let count = visited.len().max(1) as f64;
        let mean_tb = visited
            .iter()
            .map(|(h, s, a)| bonus_at(&plan.transition_bonus, *h, *s, *a))
            .sum::<f64>()
            / count;
        let mean_rb = visited
            .iter()
            .map(|(h, s, a)| bonus_at(&plan.reward_bonus, *h, *s, *a))
            .sum::<f64>()
            / count;

        let gap = avg_subopt_gap_with(inst, &self.optimal, &plan.policy);
        let optimal_value: f64 = self
            .optimal
            .iter()
            .enumerate()
            .map(|(w, v)| inst.context_space.prob(w) * v)
            .sum();
        let optimistic_value = plan.expected_optimistic_value(inst);
        let slack = if plan.estimates.is_some() {
            self.optimism_slack(plan.episode)?
        } else {
            0.0
        };
        let optimism_violated = optimistic_value.is_some_and(|v| optimal_value > v + slack + 1e-9);
        let (transition_selection, reward_selection) = match &plan.estimates {
            Some(e) => (
                e.transition_selection.clone(),
                e.reward_selection.clone().unwrap_or_default(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let mle_correct = plan.estimates.as_ref().map(|e| {
            e.transition_selection
                .iter()
                .all(|i| *i == self.transition_class.true_index)
        });

        self.accumulate_occupancy(&plan.policy);
        if self.config.keep_policy_history {
            self.policy_history.push(plan.policy.clone());
        }
        self.episodes_done += 1;

        Ok(EpisodeLog {
            episode: plan.episode,
            context: w,
            gap,
            transition_selection,
            reward_selection,
            mle_correct,
            mean_transition_bonus: mean_tb,
            mean_reward_bonus: mean_rb,
            trajectory_len,
            env_steps: self.env_steps,
            optimistic_value,
            optimal_value,
            optimism_slack: slack,
            optimism_violated,
        })
    }

    /// Runs all planned episodes; `observe` sees the agent and each plan
    /// before it is executed.
    pub fn run_with<F>(mut self, mut observe: F) -> Result<RunLog>
    where
        F: FnMut(&Agent<'_>, &EpisodePlan) -> Result<()>,
    {
        let n_total = self.config.planned_episodes;
        let mut episodes = Vec::with_capacity(n_total);
        let mut avg_gap = Vec::with_capacity(n_total);
        let mut total = 0.0;
        for n in 1..=n_total {
            let plan = self.plan_episode()?;
            observe(&self, &plan)?;
            let log = self.execute(&plan)?;
            total += log.gap;
            avg_gap.push(total / n as f64);
            episodes.push(log);
        }
        let dims = self.instance.dims;
        Ok(RunLog {
            model_kind: self.config.model_kind,
            seed: self.config.seed,
            episodes,
            avg_gap,
            dataset_sizes: (0..dims.horizon).map(|h| self.buffer.len_at(h)).collect(),
            env_steps: self.env_steps,
            p_min: self.p_min,
            p_max: self.p_max,
        })
    }

    pub fn run(self) -> Result<RunLog> {
        self.run_with(|_, _| Ok(()))
    }
}

/// Kernel for context `w` with the per-step selection from `class`.
pub fn selected_kernel(
    features: &FeatureSpec,
    class: &ModelClass<MuTable>,
    selection: &[usize],
    w: usize,
) -> Vec<f64> {
    let d = &features.dims;
    let mut out = vec![0.0; d.horizon * d.num_states * d.num_actions * d.num_states];
    for h in 0..d.horizon {
        let mu = &class.candidates[selection[h]];
        for s in 0..d.num_states {
            for a in 0..d.num_actions {
                let start = ((h * d.num_states + s) * d.num_actions + a) * d.num_states;
                mu.next_dist_into(
                    features.phi(h, s, a, w),
                    h,
                    w,
                    &mut out[start..start + d.num_states],
                );
            }
        }
    }
    out
}

/// Varying-representation learner on a shared-weights instance.
pub fn run_algorithm1(
    instance: &InstanceSpec,
    transition_class: &ModelClass<MuTable>,
    config: AgentConfig,
) -> Result<RunLog> {
    if config.model_kind != ModelKind::ModelI {
        return Err(CmdpError::Config(
            "run_algorithm1 needs model_kind = model_i".into(),
        ));
    }
    Agent::new(instance, transition_class, None, config)?.run()
}

/// Varying-weights learner with uniform-action roll-ins.
pub fn run_algorithm2(
    instance: &InstanceSpec,
    transition_class: &ModelClass<MuTable>,
    reward_class: &ModelClass<EtaTable>,
    config: AgentConfig,
) -> Result<RunLog> {
    if config.model_kind != ModelKind::ModelII {
        return Err(CmdpError::Config(
            "run_algorithm2 needs model_kind = model_ii".into(),
        ));
    }
    Agent::new(instance, transition_class, Some(reward_class), config)?.run()
}
