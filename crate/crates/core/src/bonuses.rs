//! Empirical covariance matrices, the four exploration bonuses and their
//! parameter schedules.
//!
//! The shared-weights model uses norm bonuses `min{α‖x‖_{A⁻¹}, cap}`; the
//! varying-weights model uses squared-norm bonuses `min{α̃‖x‖²_{A⁻¹}, cap}`.
//! Gram matrices are stored without the regularizer, which is added at query
//! time because it grows with the episode index.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CmdpError, Result};
use crate::linalg::SpdFactor;

/// Running `Σ x xᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    gram: DMatrix<f64>,
    count: usize,
    dim: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            count: 0,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        self.add_weighted(x, 1.0)?;
        self.count += 1;
        Ok(())
    }

    /// `gram += weight · x xᵀ` without touching the update count; used to
    /// build expected covariances from occupancy measures.
    pub fn add_weighted(&mut self, x: &[f64], weight: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(CmdpError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        for i in 0..self.dim {
            let wi = weight * x[i];
            for j in 0..self.dim {
                self.gram[(i, j)] += wi * x[j];
            }
        }
        Ok(())
    }

    /// Factorization of `gram + λI`, reusable across many queries.
    pub fn factor(&self, lambda: f64) -> Result<SpdFactor> {
        if !(lambda > 0.0) {
            return Err(CmdpError::Config(format!(
                "regularizer must be > 0, got {lambda}"
            )));
        }
        SpdFactor::new(&self.gram, lambda)
    }

    /// `xᵀ(gram + λI)⁻¹x`.
    pub fn quad_form_inv(&self, x: &[f64], lambda: f64) -> Result<f64> {
        if x.len() != self.dim {
            return Err(CmdpError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.factor(lambda)?.quad_form_inv(x)
    }
}

/// How the reachability ratio enters the varying-weights bonuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CConvention {
    /// `C = √(p_max / p_min)`.
    #[default]
    Sqrt,
    /// `C = p_max / p_min`.
    Ratio,
}

impl CConvention {
    pub fn constant(self, p_min: f64, p_max: f64) -> f64 {
        let ratio = p_max / p_min;
        match self {
            CConvention::Sqrt => ratio.sqrt(),
            CConvention::Ratio => ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta: f64,
    /// `|Ψ₁|` or `|Ψ₂|`.
    pub transition_class_size: usize,
    /// `|Ψ₃|`; unused by the shared-weights schedule.
    pub reward_class_size: usize,
    pub horizon: usize,
    pub feat_dim: usize,
    pub num_actions: usize,
    pub planned_episodes: Option<usize>,
    pub c: f64,
    pub bonus_scale: f64,
}

impl BonusParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("delta", self.delta),
            ("c", self.c),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CmdpError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.delta >= 1.0 {
            return Err(CmdpError::Config(format!(
                "delta must be < 1, got {}",
                self.delta
            )));
        }
        if !(self.bonus_scale >= 0.0) || !self.bonus_scale.is_finite() {
            return Err(CmdpError::Config(format!(
                "bonus_scale must be finite and >= 0, got {}",
                self.bonus_scale
            )));
        }
        if self.transition_class_size == 0
            || self.reward_class_size == 0
            || self.horizon == 0
            || self.feat_dim == 0
            || self.num_actions == 0
        {
            return Err(CmdpError::Config("sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// `log(2nH/δ)`.
    fn log_term(&self, n: usize) -> f64 {
        (2.0 * n as f64 * self.horizon as f64 / self.delta).ln()
    }
}

/// Regularizers and bonus multipliers for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lambda: f64,
    pub xi: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Shared-weights schedule at episode `n ≥ 1`:
/// `λ = γ₁d log(2nH/δ)`, `ξ = γ₂d log(2nH/δ)`,
/// `α = 5H√(2λd + 4 log(2nH|Ψ₁|/δ))`, `β = √(dξ)`, with α, β scaled.
pub fn schedule_model1(params: &BonusParams, n: usize) -> Schedule {
    let n = n.max(1);
    let d = params.feat_dim as f64;
    let h = params.horizon as f64;
    let log_term = params.log_term(n);
    let lambda = params.gamma1 * d * log_term;
    let xi = params.gamma2 * d * log_term;
    let class_term = (2.0 * n as f64 * h * params.transition_class_size as f64 / params.delta).ln();
    let alpha = 5.0 * h * (2.0 * lambda * d + 4.0 * class_term).sqrt();
    let beta = (d * xi).sqrt();
    Schedule {
        lambda,
        xi,
        alpha: alpha * params.bonus_scale,
        beta: beta * params.bonus_scale,
    }
}

/// Varying-weights schedule at episode `n ≥ 1`:
/// `α̃ = 25/(2√K)·C·H·√(dN)`, `β̃ = 25/(2√K)·C·√(dN)`, both scaled and
/// constant in `n`; regularizers as in [`schedule_model1`].
pub fn schedule_model2(params: &BonusParams, n: usize) -> Result<Schedule> {
    let big_n = params.planned_episodes.ok_or(CmdpError::MissingN)?;
    let n = n.max(1);
    let d = params.feat_dim as f64;
    let h = params.horizon as f64;
    let log_term = params.log_term(n);
    let base =
        25.0 / (2.0 * (params.num_actions as f64).sqrt()) * params.c * (d * big_n as f64).sqrt();
    Ok(Schedule {
        lambda: params.gamma1 * d * log_term,
        xi: params.gamma2 * d * log_term,
        alpha: base * h * params.bonus_scale,
        beta: base * params.bonus_scale,
    })
}

/// `min{scale·√quad, cap}`; a zero multiplier or zero form gives 0.
pub fn norm_bonus(scale: f64, quad: f64, cap: f64) -> f64 {
    if scale == 0.0 || quad <= 0.0 {
        return 0.0;
    }
    (scale * quad.sqrt()).min(cap)
}

/// `min{scale·quad, cap}`; a zero multiplier or zero form gives 0.
pub fn squared_norm_bonus(scale: f64, quad: f64, cap: f64) -> f64 {
    if scale == 0.0 || quad <= 0.0 {
        return 0.0;
    }
    (scale * quad).min(cap)
}

/// `min{α‖φ‖_{(Σ+λI)⁻¹}, H}`.
pub fn bonus_model1_transition(
    phi: &[f64],
    acc: &CovarianceAccumulator,
    alpha: f64,
    lambda: f64,
    horizon: f64,
) -> Result<f64> {
    Ok(norm_bonus(alpha, acc.quad_form_inv(phi, lambda)?, horizon))
}

/// `min{β‖ψ‖_{(Λ+ξI)⁻¹}, 1}`.
pub fn bonus_model1_reward(
    psi: &[f64],
    acc: &CovarianceAccumulator,
    beta: f64,
    xi: f64,
) -> Result<f64> {
    Ok(norm_bonus(beta, acc.quad_form_inv(psi, xi)?, 1.0))
}

/// `min{α̃‖φ‖²_{(Σ+λI)⁻¹}, H}`.
pub fn bonus_model2_transition(
    phi: &[f64],
    acc: &CovarianceAccumulator,
    alpha_tilde: f64,
    lambda: f64,
    horizon: f64,
) -> Result<f64> {
    Ok(squared_norm_bonus(
        alpha_tilde,
        acc.quad_form_inv(phi, lambda)?,
        horizon,
    ))
}

/// `min{β̃‖ψ‖²_{(Λ+ξI)⁻¹}, 1}`.
pub fn bonus_model2_reward(
    psi: &[f64],
    acc: &CovarianceAccumulator,
    beta_tilde: f64,
    xi: f64,
) -> Result<f64> {
    Ok(squared_norm_bonus(
        beta_tilde,
        acc.quad_form_inv(psi, xi)?,
        1.0,
    ))
}
