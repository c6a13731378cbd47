//! Linear contextual MDP instances.
//!
//! Two linear structures are supported:
//!
//! * [`ModelKind::ModelI`]: features `φ_h(s,a,w)`, `ψ_h(s,a,w)` depend on the
//!   context while the weights `μ_h(s')`, `η_h` are shared by all contexts.
//! * [`ModelKind::ModelII`]: features `φ_h(s,a)`, `ψ_h(s,a)` are shared while
//!   the weights `μ_h(s',w)`, `η_h(w)` vary with the context.
//!
//! In both cases `P_h(s'|s,a,w) = ⟨φ, μ(s')⟩` and `r_h(s,a,w) = ⟨ψ, η⟩`. An
//! [`InstanceSpec`] stores the features and weights together with the tabular
//! kernel and reward they induce, so every quantity downstream can be computed
//! exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{CmdpError, Result};
use crate::linalg::{dot, norm2};
use crate::tabular::{StagePolicy, TabularMdp};

/// Probability-vector tolerance used when validating tabular kernels.
pub const PROB_TOL: f64 = 1e-9;
/// Tolerance on feature norms (`‖φ‖ ≤ 1`).
pub const NORM_TOL: f64 = 1e-12;
/// Number of random test functions `g: S → [0,1]` in the μ normalization probe.
pub const RANDOM_PROBES: usize = 16;
const PROBE_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Context-varying representation, shared weights.
    #[serde(rename = "model_i")]
    ModelI,
    /// Shared representation, context-varying weights.
    #[serde(rename = "model_ii")]
    ModelII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_contexts: usize,
    pub horizon: usize,
    pub feat_dim: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_states", self.num_states),
            ("num_actions", self.num_actions),
            ("num_contexts", self.num_contexts),
            ("horizon", self.horizon),
            ("feat_dim", self.feat_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(CmdpError::InvalidInstance(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Contexts are the ids `0..probs.len()`; `probs` is the distribution `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpace {
    probs: Vec<f64>,
}

impl ContextSpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CmdpError::InvalidInstance("empty context space".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CmdpError::InvalidInstance(format!(
                "context distribution has a negative or non-finite entry: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CmdpError::InvalidInstance(format!(
                "context distribution sums to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, w: usize) -> f64 {
        self.probs[w]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn feature_rows(kind: ModelKind, dims: &Dims) -> usize {
    let base = dims.horizon * dims.num_states * dims.num_actions;
    match kind {
        ModelKind::ModelI => base * dims.num_contexts,
        ModelKind::ModelII => base,
    }
}

fn mu_rows(kind: ModelKind, dims: &Dims) -> usize {
    let base = dims.horizon * dims.num_states;
    match kind {
        ModelKind::ModelI => base,
        ModelKind::ModelII => base * dims.num_contexts,
    }
}

fn eta_rows(kind: ModelKind, dims: &Dims) -> usize {
    match kind {
        ModelKind::ModelI => dims.horizon,
        ModelKind::ModelII => dims.horizon * dims.num_contexts,
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(CmdpError::InvalidInstance(format!(
            "{what} table has {got} entries, expected {expected}"
        )));
    }
    Ok(())
}

/// Known feature maps `φ` and `ψ`, stored row-major.
///
/// Model I rows are indexed by `(h, s, a, w)`, Model II rows by `(h, s, a)`;
/// the accessors take `w` in both cases and ignore it for Model II.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: ModelKind,
    pub dims: Dims,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl FeatureSpec {
    pub fn new(kind: ModelKind, dims: Dims, phi: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        let rows = feature_rows(kind, &dims) * dims.feat_dim;
        check_len("phi", phi.len(), rows)?;
        check_len("psi", psi.len(), rows)?;
        let spec = Self {
            kind,
            dims,
            phi,
            psi,
        };
        spec.validate_norms()?;
        Ok(spec)
    }

    fn validate_norms(&self) -> Result<()> {
        let d = self.dims.feat_dim;
        for (name, table) in [("phi", &self.phi), ("psi", &self.psi)] {
            for (i, row) in table.chunks(d).enumerate() {
                let n = norm2(row);
                if !n.is_finite() || n > 1.0 + NORM_TOL {
                    return Err(CmdpError::InvalidInstance(format!(
                        "{name} row {i} has norm {n} > 1"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn row(&self, h: usize, s: usize, a: usize, w: usize) -> usize {
        let d = &self.dims;
        let base = (h * d.num_states + s) * d.num_actions + a;
        match self.kind {
            ModelKind::ModelI => base * d.num_contexts + w,
            ModelKind::ModelII => base,
        }
    }

    pub fn phi(&self, h: usize, s: usize, a: usize, w: usize) -> &[f64] {
        let d = self.dims.feat_dim;
        let r = self.row(h, s, a, w);
        &self.phi[r * d..(r + 1) * d]
    }

    pub fn psi(&self, h: usize, s: usize, a: usize, w: usize) -> &[f64] {
        let d = self.dims.feat_dim;
        let r = self.row(h, s, a, w);
        &self.psi[r * d..(r + 1) * d]
    }

    pub fn phi_table(&self) -> &[f64] {
        &self.phi
    }

    pub fn psi_table(&self) -> &[f64] {
        &self.psi
    }
}

/// Transition weights `μ`: Model I rows `(h, s')`, Model II rows `(h, s', w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuTable {
    pub kind: ModelKind,
    pub dims: Dims,
    data: Vec<f64>,
}

impl MuTable {
    pub fn new(kind: ModelKind, dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_len("mu", data.len(), mu_rows(kind, &dims) * dims.feat_dim)?;
        Ok(Self { kind, dims, data })
    }

    pub fn row(&self, h: usize, s_next: usize, w: usize) -> &[f64] {
        let d = &self.dims;
        let r = match self.kind {
            ModelKind::ModelI => h * d.num_states + s_next,
            ModelKind::ModelII => (h * d.num_states + s_next) * d.num_contexts + w,
        };
        &self.data[r * d.feat_dim..(r + 1) * d.feat_dim]
    }

    /// `⟨φ, μ_h(s', w)⟩`.
    pub fn transition_prob(&self, phi: &[f64], h: usize, s_next: usize, w: usize) -> f64 {
        dot(phi, self.row(h, s_next, w))
    }

    /// Fills `out[s'] = ⟨φ, μ_h(s', w)⟩` for every `s'`.
    pub fn next_dist_into(&self, phi: &[f64], h: usize, w: usize, out: &mut [f64]) {
        for (s_next, slot) in out.iter_mut().enumerate() {
            *slot = self.transition_prob(phi, h, s_next, w);
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Normalization probe: `‖Σ_s μ(s) g(s)‖₂ ≤ √d` for g ≡ 1, g ≡ 0, every
    /// indicator, and a fixed set of seeded random `g: S → [0,1]`.
    ///
    /// The quantifier over all g cannot be checked exhaustively; this probe
    /// set is the tested surrogate.
    pub fn validate_normalization(&self) -> Result<()> {
        let d = &self.dims;
        let mut probes: Vec<Vec<f64>> = vec![vec![1.0; d.num_states], vec![0.0; d.num_states]];
        for s in 0..d.num_states {
            let mut g = vec![0.0; d.num_states];
            g[s] = 1.0;
            probes.push(g);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        for _ in 0..RANDOM_PROBES {
            probes.push((0..d.num_states).map(|_| rng.random::<f64>()).collect());
        }
        let bound = (d.feat_dim as f64).sqrt() + 1e-9;
        let contexts = match self.kind {
            ModelKind::ModelI => 1,
            ModelKind::ModelII => d.num_contexts,
        };
        let mut acc = vec![0.0; d.feat_dim];
        for h in 0..d.horizon {
            for w in 0..contexts {
                for g in &probes {
                    acc.iter_mut().for_each(|x| *x = 0.0);
                    for (s, gs) in g.iter().enumerate() {
                        for (slot, m) in acc.iter_mut().zip(self.row(h, s, w)) {
                            *slot += m * gs;
                        }
                    }
                    let n = norm2(&acc);
                    if !n.is_finite() || n > bound {
                        return Err(CmdpError::InvalidInstance(format!(
                            "mu normalization violated at step {h}, context {w}: norm {n} > sqrt(d)"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reward weights `η`: Model I one row per `h`, Model II rows `(h, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTable {
    pub kind: ModelKind,
    pub dims: Dims,
    data: Vec<f64>,
}

impl EtaTable {
    pub fn new(kind: ModelKind, dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_len("eta", data.len(), eta_rows(kind, &dims) * dims.feat_dim)?;
        Ok(Self { kind, dims, data })
    }

    pub fn row(&self, h: usize, w: usize) -> &[f64] {
        let d = &self.dims;
        let r = match self.kind {
            ModelKind::ModelI => h,
            ModelKind::ModelII => h * d.num_contexts + w,
        };
        &self.data[r * d.feat_dim..(r + 1) * d.feat_dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validate_norms(&self) -> Result<()> {
        let bound = (self.dims.feat_dim as f64).sqrt() + NORM_TOL;
        for (i, row) in self.data.chunks(self.dims.feat_dim).enumerate() {
            let n = norm2(row);
            if !n.is_finite() || n > bound {
                return Err(CmdpError::InvalidInstance(format!(
                    "eta row {i} has norm {n} > sqrt(d)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub mu: MuTable,
    pub eta: EtaTable,
}

impl WeightSpec {
    pub fn validate(&self) -> Result<()> {
        self.eta.validate_norms()?;
        self.mu.validate_normalization()
    }
}

/// A finite candidate set containing the ground truth at `true_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClass<T> {
    pub candidates: Vec<T>,
    pub true_index: usize,
}

impl<T> ModelClass<T> {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn truth(&self) -> &T {
        &self.candidates[self.true_index]
    }

    pub fn singleton(truth: T) -> Self {
        Self {
            candidates: vec![truth],
            true_index: 0,
        }
    }
}

/// Builds the tabular kernel `P_w[h][s][a][s']` induced by `(features, mu)`
/// for context `w`, without validation.
pub fn kernel_for_context(features: &FeatureSpec, mu: &MuTable, w: usize) -> Vec<f64> {
    let d = &features.dims;
    let mut out = vec![0.0; d.horizon * d.num_states * d.num_actions * d.num_states];
    for h in 0..d.horizon {
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

/// Builds `r_w[h][s][a] = ⟨ψ_h(s,a,w), η⟩` for context `w`, without validation.
pub fn rewards_for_context(features: &FeatureSpec, eta: &EtaTable, w: usize) -> Vec<f64> {
    let d = &features.dims;
    let mut out = Vec::with_capacity(d.horizon * d.num_states * d.num_actions);
    for h in 0..d.horizon {
        for s in 0..d.num_states {
            for a in 0..d.num_actions {
                out.push(dot(features.psi(h, s, a, w), eta.row(h, w)));
            }
        }
    }
    out
}

fn check_kernel_rows(kernel: &[f64], num_states: usize, w: usize) -> Result<()> {
    for (i, row) in kernel.chunks(num_states).enumerate() {
        if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < -PROB_TOL) {
            return Err(CmdpError::InvalidInstance(format!(
                "context {w}, row {i}: negative probability {p}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(CmdpError::InvalidInstance(format!(
                "context {w}, row {i}: probabilities sum to {sum}"
            )));
        }
    }
    Ok(())
}

fn check_rewards(rewards: &[f64], w: usize) -> Result<()> {
    if let Some(r) = rewards
        .iter()
        .find(|r| !r.is_finite() || **r < -PROB_TOL || **r > 1.0 + PROB_TOL)
    {
        return Err(CmdpError::InvalidInstance(format!(
            "context {w}: reward {r} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Checks that `mu` paired with `features` yields valid kernels in every context.
pub fn validate_mu_against(features: &FeatureSpec, mu: &MuTable) -> Result<()> {
    for w in 0..features.dims.num_contexts {
        check_kernel_rows(
            &kernel_for_context(features, mu, w),
            features.dims.num_states,
            w,
        )?;
    }
    mu.validate_normalization()
}

/// Checks that `eta` paired with `features` yields rewards in `[0,1]`.
pub fn validate_eta_against(features: &FeatureSpec, eta: &EtaTable) -> Result<()> {
    for w in 0..features.dims.num_contexts {
        check_rewards(&rewards_for_context(features, eta, w), w)?;
    }
    eta.validate_norms()
}

/// Full ground truth of a linear CMDP.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub dims: Dims,
    pub context_space: ContextSpace,
    pub features: FeatureSpec,
    pub weights: WeightSpec,
    /// One tabular MDP per context.
    pub mdps: Vec<TabularMdp>,
    pub initial_state: usize,
    pub mix_eps: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn kind(&self) -> ModelKind {
        self.features.kind
    }

    pub fn mdp(&self, w: usize) -> &TabularMdp {
        &self.mdps[w]
    }

    pub fn to_document(&self) -> InstanceDocument {
        InstanceDocument {
            schema_version: 1,
            model_kind: self.kind(),
            dims: self.dims,
            q: self.context_space.probs().to_vec(),
            phi: self.features.phi_table().to_vec(),
            psi: self.features.psi_table().to_vec(),
            mu: self.weights.mu.data().to_vec(),
            eta: self.weights.eta.data().to_vec(),
            mix_eps: self.mix_eps,
            seed: self.seed,
            initial_state: self.initial_state,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        InstanceDocument::load(path)?.into_instance()
    }
}

/// Serialized form of an instance: features and weights only. The tabular
/// kernel and reward are rebuilt (and re-validated) on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub dims: Dims,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub mix_eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub initial_state: usize,
}

impl InstanceDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_instance(self) -> Result<InstanceSpec> {
        let features = FeatureSpec::new(self.model_kind, self.dims, self.phi, self.psi)?;
        let weights = WeightSpec {
            mu: MuTable::new(self.model_kind, self.dims, self.mu)?,
            eta: EtaTable::new(self.model_kind, self.dims, self.eta)?,
        };
        build_tabular(
            features,
            weights,
            ContextSpace::new(self.q)?,
            self.initial_state,
            self.mix_eps,
            self.seed,
        )
    }
}

/// Assembles an [`InstanceSpec`], computing the tabular kernel and reward from
/// the linear decomposition and validating every invariant.
pub fn build_tabular(
    features: FeatureSpec,
    weights: WeightSpec,
    context_space: ContextSpace,
    initial_state: usize,
    mix_eps: f64,
    seed: u64,
) -> Result<InstanceSpec> {
    let dims = features.dims;
    dims.validate()?;
    if weights.mu.dims != dims || weights.eta.dims != dims {
        return Err(CmdpError::InvalidInstance(
            "feature and weight dimensions differ".into(),
        ));
    }
    if weights.mu.kind != features.kind || weights.eta.kind != features.kind {
        return Err(CmdpError::InvalidInstance(
            "feature and weight model kinds differ".into(),
        ));
    }
    if context_space.len() != dims.num_contexts {
        return Err(CmdpError::InvalidInstance(format!(
            "context distribution has {} entries for {} contexts",
            context_space.len(),
            dims.num_contexts
        )));
    }
    if initial_state >= dims.num_states {
        return Err(CmdpError::InvalidInstance(format!(
            "initial state {initial_state} out of range"
        )));
    }
    if !(0.0..1.0).contains(&mix_eps) {
        return Err(CmdpError::InvalidInstance(format!(
            "mix_eps {mix_eps} outside [0, 1)"
        )));
    }
    weights.validate()?;

    let mut mdps = Vec::with_capacity(dims.num_contexts);
    for w in 0..dims.num_contexts {
        let kernel = kernel_for_context(&features, &weights.mu, w);
        check_kernel_rows(&kernel, dims.num_states, w)?;
        let rewards = rewards_for_context(&features, &weights.eta, w);
        check_rewards(&rewards, w)?;
        mdps.push(TabularMdp::new(
            dims.num_states,
            dims.num_actions,
            dims.horizon,
            kernel,
            rewards,
        )?);
    }
    Ok(InstanceSpec {
        dims,
        context_space,
        features,
        weights,
        mdps,
        initial_state,
        mix_eps,
        seed,
    })
}

// ── Generation ──────────────────────────────────────────────────────────

/// An instance together with the finite model classes handed to the learner.
/// Model I learns rewards by ridge regression, so it has no reward class.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: InstanceSpec,
    pub transition_class: ModelClass<MuTable>,
    pub reward_class: Option<ModelClass<EtaTable>>,
}

const MAX_ATTEMPTS: usize = 100;

fn sample_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.into_iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

fn sample_features<R: Rng>(rng: &mut R, kind: ModelKind, dims: &Dims) -> Vec<f64> {
    let rows = feature_rows(kind, dims);
    (0..rows)
        .flat_map(|_| sample_simplex(rng, dims.feat_dim))
        .collect()
}

/// Each of the d components of μ_h(·, w) is a distribution over next states,
/// mixed with the uniform distribution at rate `mix_eps`.
fn sample_mu<R: Rng>(rng: &mut R, kind: ModelKind, dims: &Dims, mix_eps: f64) -> Result<MuTable> {
    let contexts = match kind {
        ModelKind::ModelI => 1,
        ModelKind::ModelII => dims.num_contexts,
    };
    let s = dims.num_states;
    let d = dims.feat_dim;
    // columns[h][w][i] is a distribution over s'
    let mut data = vec![0.0; mu_rows(kind, dims) * d];
    for h in 0..dims.horizon {
        for w in 0..contexts {
            for i in 0..d {
                let column = sample_simplex(rng, s);
                for (s_next, p) in column.into_iter().enumerate() {
                    let row = match kind {
                        ModelKind::ModelI => h * s + s_next,
                        ModelKind::ModelII => (h * s + s_next) * dims.num_contexts + w,
                    };
                    data[row * d + i] = (1.0 - mix_eps) * p + mix_eps / s as f64;
                }
            }
        }
    }
    MuTable::new(kind, *dims, data)
}

fn sample_eta<R: Rng>(rng: &mut R, kind: ModelKind, dims: &Dims) -> Result<EtaTable> {
    let n = eta_rows(kind, dims) * dims.feat_dim;
    EtaTable::new(kind, *dims, (0..n).map(|_| rng.random::<f64>()).collect())
}

fn sample_valid_mu<R: Rng>(rng: &mut R, features: &FeatureSpec, mix_eps: f64) -> Result<MuTable> {
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let mu = sample_mu(rng, features.kind, &features.dims, mix_eps)?;
        match validate_mu_against(features, &mu) {
            Ok(()) => return Ok(mu),
            Err(e) => last = e.to_string(),
        }
    }
    Err(CmdpError::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

fn sample_valid_eta<R: Rng>(rng: &mut R, features: &FeatureSpec) -> Result<EtaTable> {
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut eta = sample_eta(rng, features.kind, &features.dims)?;
        if attempt > 0 {
            // rescale towards the interior after a violation
            let shrink = 0.5f64.powi(attempt as i32);
            eta = EtaTable::new(
                eta.kind,
                eta.dims,
                eta.data().iter().map(|x| x * shrink).collect(),
            )?;
        }
        match validate_eta_against(features, &eta) {
            Ok(()) => return Ok(eta),
            Err(e) => last = e.to_string(),
        }
    }
    Err(CmdpError::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

fn place_truth<T: Clone, R: Rng>(
    rng: &mut R,
    truth: T,
    class_size: usize,
    mut decoy: impl FnMut(&mut R) -> Result<T>,
) -> Result<ModelClass<T>> {
    let true_index = rng.random_range(0..class_size);
    let mut candidates = Vec::with_capacity(class_size);
    for i in 0..class_size {
        if i == true_index {
            candidates.push(truth.clone());
        } else {
            candidates.push(decoy(rng)?);
        }
    }
    Ok(ModelClass {
        candidates,
        true_index,
    })
}

/// Draws decoy classes around an existing instance's weights.
pub fn generate_classes(
    instance: &InstanceSpec,
    class_size: usize,
    seed: u64,
) -> Result<(ModelClass<MuTable>, Option<ModelClass<EtaTable>>)> {
    if class_size == 0 {
        return Err(CmdpError::Config("class_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = &instance.features;
    let mix_eps = instance.mix_eps;
    let transition = place_truth(&mut rng, instance.weights.mu.clone(), class_size, |r| {
        sample_valid_mu(r, features, mix_eps)
    })?;
    let reward = match instance.kind() {
        ModelKind::ModelI => None,
        ModelKind::ModelII => Some(place_truth(
            &mut rng,
            instance.weights.eta.clone(),
            class_size,
            |r| sample_valid_eta(r, features),
        )?),
    };
    Ok((transition, reward))
}

/// Seeded generator of valid linear CMDP instances and their model classes.
///
/// Features lie on the probability simplex (so `‖φ‖₂ ≤ 1`) and each component
/// of μ is a distribution over next states, which makes `⟨φ, μ(·)⟩` a valid
/// kernel by construction. Mixing with the uniform distribution at rate
/// `mix_eps` bounds every transition probability below by `mix_eps / |S|`.
pub fn generate_instance(
    seed: u64,
    dims: Dims,
    kind: ModelKind,
    class_size: usize,
    mix_eps: f64,
) -> Result<GeneratedInstance> {
    dims.validate()?;
    if class_size == 0 {
        return Err(CmdpError::Config("class_size must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&mix_eps) {
        return Err(CmdpError::Config(format!(
            "mix_eps {mix_eps} outside [0, 1)"
        )));
    }
    if kind == ModelKind::ModelII && mix_eps <= 0.0 {
        return Err(CmdpError::Config(
            "varying-weights instances need mix_eps > 0 so that p_min > 0".into(),
        ));
    }
    if dims.feat_dim > dims.num_states * dims.num_actions {
        return Err(CmdpError::Config(format!(
            "feat_dim {} exceeds |S|·K = {}",
            dims.feat_dim,
            dims.num_states * dims.num_actions
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let phi = sample_features(&mut rng, kind, &dims);
        let psi = sample_features(&mut rng, kind, &dims);
        let features = FeatureSpec::new(kind, dims, phi, psi)?;
        let mu = sample_valid_mu(&mut rng, &features, mix_eps)?;
        let eta = sample_valid_eta(&mut rng, &features)?;
        let q: Vec<f64> = (0..dims.num_contexts)
            .map(|_| 0.5 + rng.random::<f64>())
            .collect();
        let total: f64 = q.iter().sum();
        let mut q: Vec<f64> = q.into_iter().map(|x| x / total).collect();
        // absorb rounding into the last entry so the sum is 1 to machine precision
        let head: f64 = q[..q.len() - 1].iter().sum();
        *q.last_mut().expect("non-empty") = 1.0 - head;

        let built = build_tabular(
            features,
            WeightSpec { mu, eta },
            ContextSpace::new(q)?,
            0,
            mix_eps,
            seed,
        );
        let instance = match built {
            Ok(instance) => instance,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let class_seed = rng.random::<u64>();
        let (transition_class, reward_class) = generate_classes(&instance, class_size, class_seed)?;
        return Ok(GeneratedInstance {
            instance,
            transition_class,
            reward_class,
        });
    }
    Err(CmdpError::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

// ── Simulation ──────────────────────────────────────────────────────────

/// Draws a context from `q` by inverse CDF.
pub fn sample_context<R: Rng + ?Sized>(context_space: &ContextSpace, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (w, p) in context_space.probs().iter().enumerate() {
        if *p > 0.0 {
            last_positive = w;
            cum += p;
            if u < cum {
                return w;
            }
        }
    }
    last_positive
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, p) in dist.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: usize,
    pub steps: Vec<Step>,
}

/// One transition of the true environment: returns `(r_h(s,a,w), s_{h+1})`.
pub fn env_step<R: Rng + ?Sized>(
    instance: &InstanceSpec,
    context: usize,
    h: usize,
    state: usize,
    action: usize,
    rng: &mut R,
) -> (f64, usize) {
    let mdp = instance.mdp(context);
    let next = sample_index(mdp.next_dist(h, state, action), rng);
    (mdp.reward(h, state, action), next)
}

/// Rolls out `policy` for a full horizon from the fixed initial state.
pub fn sample_episode<R: Rng + ?Sized>(
    instance: &InstanceSpec,
    context: usize,
    policy: &StagePolicy,
    rng: &mut R,
) -> Trajectory {
    let mut state = instance.initial_state;
    let mut steps = Vec::with_capacity(instance.dims.horizon);
    for h in 0..instance.dims.horizon {
        let action = policy.action(h, state);
        let (reward, next_state) = env_step(instance, context, h, state, action, rng);
        steps.push(Step {
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;
    }
    Trajectory { context, steps }
}

// ── Reachability ────────────────────────────────────────────────────────

/// Extreme probability, over all policies, of being in `target` at step
/// `target_step` when starting from `start` in `mdp`.
fn extreme_visit_prob(
    mdp: &TabularMdp,
    start: usize,
    target_step: usize,
    target: usize,
    maximize: bool,
) -> f64 {
    let ns = mdp.num_states;
    let mut value: Vec<f64> = (0..ns)
        .map(|s| if s == target { 1.0 } else { 0.0 })
        .collect();
    for h in (0..target_step).rev() {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                let vals = (0..mdp.num_actions).map(|a| mdp.expect(h, s, a, &value));
                if maximize {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        value = next;
    }
    value[start]
}

/// `(p_min, p_max)`: extremes over contexts, steps `h ≥ 2` (1-based), states
/// and all policies of `Pr(s_h = s)`. Step 1 is excluded since `s_1` is fixed.
/// Returns `(1, 1)` when there is no step `h ≥ 2`.
pub fn compute_pmin_pmax(instance: &InstanceSpec) -> (f64, f64) {
    let d = &instance.dims;
    if d.horizon < 2 {
        return (1.0, 1.0);
    }
    let mut p_min = f64::INFINITY;
    let mut p_max = f64::NEG_INFINITY;
    for w in 0..d.num_contexts {
        let mdp = instance.mdp(w);
        for step in 1..d.horizon {
            for s in 0..d.num_states {
                p_min = p_min.min(extreme_visit_prob(
                    mdp,
                    instance.initial_state,
                    step,
                    s,
                    false,
                ));
                p_max = p_max.max(extreme_visit_prob(
                    mdp,
                    instance.initial_state,
                    step,
                    s,
                    true,
                ));
            }
        }
    }
    (p_min.max(0.0), p_max.min(1.0))
}
