//! Single-context finite-horizon MDPs and deterministic tabular policies.
//!
//! Steps are 0-based internally: step `h` in `0..horizon` corresponds to the
//! 1-based step `h + 1` of the usual episodic notation.

use serde::{Deserialize, Serialize};

use crate::error::{CmdpError, Result};

/// Tabular kernel `P[h][s][a][s']` and reward `r[h][s][a]` for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let sa = horizon * num_states * num_actions;
        if transitions.len() != sa * num_states {
            return Err(CmdpError::DimMismatch {
                expected: sa * num_states,
                got: transitions.len(),
            });
        }
        if rewards.len() != sa {
            return Err(CmdpError::DimMismatch {
                expected: sa,
                got: rewards.len(),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            rewards,
        })
    }

    #[inline]
    fn sa_index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.sa_index(h, s, a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn next_dist_mut(&mut self, h: usize, s: usize, a: usize) -> &mut [f64] {
        let start = self.sa_index(h, s, a) * self.num_states;
        &mut self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.sa_index(h, s, a)]
    }

    pub fn set_reward(&mut self, h: usize, s: usize, a: usize, value: f64) {
        let i = self.sa_index(h, s, a);
        self.rewards[i] = value;
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Same kernel, different reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.transitions.clone(),
            rewards,
        )
    }

    /// `Σ_{s'} P_h(s'|s,a) f(s')`.
    pub fn expect(&self, h: usize, s: usize, a: usize, f: &[f64]) -> f64 {
        self.next_dist(h, s, a)
            .iter()
            .zip(f)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Every row must be a probability vector within `tol`.
    pub fn validate_kernel(&self, tol: f64) -> Result<()> {
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let row = self.next_dist(h, s, a);
                    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < -tol) {
                        return Err(CmdpError::InvalidKernel {
                            step: h,
                            state: s,
                            action: a,
                            reason: format!("entry {p}"),
                        });
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > tol {
                        return Err(CmdpError::InvalidKernel {
                            step: h,
                            state: s,
                            action: a,
                            reason: format!("row sums to {sum}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deterministic non-stationary policy for one context: `action[h][s]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePolicy {
    pub horizon: usize,
    pub num_states: usize,
    actions: Vec<usize>,
}

impl StagePolicy {
    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self {
            horizon,
            num_states,
            actions: vec![action; horizon * num_states],
        }
    }

    pub fn from_actions(horizon: usize, num_states: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(CmdpError::DimMismatch {
                expected: horizon * num_states,
                got: actions.len(),
            });
        }
        Ok(Self {
            horizon,
            num_states,
            actions,
        })
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn set_action(&mut self, h: usize, s: usize, a: usize) {
        self.actions[h * self.num_states + s] = a;
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

/// Context-dependent deterministic policy: one [`StagePolicy`] per context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub per_context: Vec<StagePolicy>,
}

impl TabularPolicy {
    pub fn context(&self, w: usize) -> &StagePolicy {
        &self.per_context[w]
    }

    pub fn num_contexts(&self) -> usize {
        self.per_context.len()
    }
}
