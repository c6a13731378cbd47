//! Estimation primitives: ridge regression for shared reward weights, exact
//! maximum likelihood over a finite transition class, least-squares selection
//! over a finite reward class, and reward clipping.
//!
//! The batch functions (`*_fit`) recompute from a buffer. The agents use the
//! incremental trackers ([`MleScores`], [`LsrScores`]), which add per-record
//! terms in insertion order and therefore produce bit-identical scores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CmdpError, Result};
use crate::linalg::{dot, SpdFactor};
use crate::model::{EtaTable, FeatureSpec, ModelClass, MuTable};

/// Likelihoods at or below this floor make a candidate impossible.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    pub context: usize,
}

/// Per-step datasets `D_h`, each in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    per_step: Vec<Vec<Record>>,
}

impl ReplayBuffer {
    pub fn new(horizon: usize) -> Self {
        Self {
            per_step: vec![Vec::new(); horizon],
        }
    }

    pub fn push(&mut self, h: usize, record: Record) {
        self.per_step[h].push(record);
    }

    pub fn step(&self, h: usize) -> &[Record] {
        &self.per_step[h]
    }

    pub fn len_at(&self, h: usize) -> usize {
        self.per_step[h].len()
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }
}

/// Identity on `[0,1]`, saturating outside.
pub fn clip_reward(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

// ── Ridge regression ────────────────────────────────────────────────────

/// `(Σψψᵀ + ξI)⁻¹ Σψr` from precomputed moments.
pub fn ridge_from_moments(gram: &DMatrix<f64>, moment: &[f64], xi: f64) -> Result<Vec<f64>> {
    if !(xi > 0.0) {
        return Err(CmdpError::Config(format!(
            "ridge regularizer must be > 0, got {xi}"
        )));
    }
    let factor = SpdFactor::new(gram, xi)?;
    Ok(factor.solve(moment)?.as_slice().to_vec())
}

/// Ridge estimate of `η_h` from the rewards in `records`.
pub fn ridge_reward_fit(
    records: &[Record],
    features: &FeatureSpec,
    h: usize,
    xi: f64,
) -> Result<Vec<f64>> {
    let d = features.dims.feat_dim;
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut moment = vec![0.0; d];
    for rec in records {
        let psi = features.psi(h, rec.state, rec.action, rec.context);
        for i in 0..d {
            moment[i] += psi[i] * rec.reward;
            for j in 0..d {
                gram[(i, j)] += psi[i] * psi[j];
            }
        }
    }
    ridge_from_moments(&gram, &moment, xi)
}

// ── Maximum likelihood over a finite class ──────────────────────────────

/// Log-likelihood of one transition under candidate `mu`; `-∞` when the
/// candidate assigns it (numerically) zero probability.
pub fn record_log_likelihood(
    record: &Record,
    features: &FeatureSpec,
    mu: &MuTable,
    h: usize,
) -> f64 {
    let phi = features.phi(h, record.state, record.action, record.context);
    let p = mu.transition_prob(phi, h, record.next_state, record.context);
    if p <= LIKELIHOOD_FLOOR {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

pub fn log_likelihood(records: &[Record], features: &FeatureSpec, mu: &MuTable, h: usize) -> f64 {
    let mut total = 0.0;
    for rec in records {
        total += record_log_likelihood(rec, features, mu, h);
    }
    total
}

/// Index of the largest score; ties go to the lowest index.
fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if *s == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some(b) if scores[b] >= *s => {}
            _ => best = Some(i),
        }
    }
    best
}

fn argmin_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// MLE over the transition class at step `h`.
pub fn mle_transition_fit(
    records: &[Record],
    features: &FeatureSpec,
    class: &ModelClass<MuTable>,
    h: usize,
) -> Result<usize> {
    if class.is_empty() {
        return Err(CmdpError::Config("empty transition class".into()));
    }
    if records.is_empty() {
        return Ok(0);
    }
    let scores: Vec<f64> = class
        .candidates
        .iter()
        .map(|mu| log_likelihood(records, features, mu, h))
        .collect();
    argmax_lowest(&scores).ok_or(CmdpError::AllModelsImpossible { step: h })
}

/// Running log-likelihood per candidate for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MleScores {
    step: usize,
    scores: Vec<f64>,
    records: usize,
}

impl MleScores {
    pub fn new(step: usize, class_size: usize) -> Self {
        Self {
            step,
            scores: vec![0.0; class_size],
            records: 0,
        }
    }

    pub fn add(&mut self, record: &Record, features: &FeatureSpec, class: &ModelClass<MuTable>) {
        for (score, mu) in self.scores.iter_mut().zip(&class.candidates) {
            *score += record_log_likelihood(record, features, mu, self.step);
        }
        self.records += 1;
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn best(&self) -> Result<usize> {
        if self.records == 0 {
            return Ok(0);
        }
        argmax_lowest(&self.scores).ok_or(CmdpError::AllModelsImpossible { step: self.step })
    }
}

// ── Least squares over a finite class ───────────────────────────────────

pub fn record_sq_residual(
    record: &Record,
    features: &FeatureSpec,
    eta: &EtaTable,
    h: usize,
) -> f64 {
    let psi = features.psi(h, record.state, record.action, record.context);
    let e = dot(psi, eta.row(h, record.context)) - record.reward;
    e * e
}

pub fn squared_residual(
    records: &[Record],
    features: &FeatureSpec,
    eta: &EtaTable,
    h: usize,
) -> f64 {
    let mut total = 0.0;
    for rec in records {
        total += record_sq_residual(rec, features, eta, h);
    }
    total
}

/// Least-squares selection over the reward class at step `h`.
pub fn lsr_reward_fit(
    records: &[Record],
    features: &FeatureSpec,
    class: &ModelClass<EtaTable>,
    h: usize,
) -> Result<usize> {
    if class.is_empty() {
        return Err(CmdpError::Config("empty reward class".into()));
    }
    let scores: Vec<f64> = class
        .candidates
        .iter()
        .map(|eta| squared_residual(records, features, eta, h))
        .collect();
    Ok(argmin_lowest(&scores))
}

/// Running squared residual per candidate for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LsrScores {
    step: usize,
    scores: Vec<f64>,
}

impl LsrScores {
    pub fn new(step: usize, class_size: usize) -> Self {
        Self {
            step,
            scores: vec![0.0; class_size],
        }
    }

    pub fn add(&mut self, record: &Record, features: &FeatureSpec, class: &ModelClass<EtaTable>) {
        for (score, eta) in self.scores.iter_mut().zip(&class.candidates) {
            *score += record_sq_residual(record, features, eta, self.step);
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn best(&self) -> usize {
        argmin_lowest(&self.scores)
    }
}
