//! The Gaussian, classical-t, alternative-t and Dirichlet-t samplers.

mod chain;
mod checkpoint;
mod init;
mod steps;

pub use chain::{ChainOutput, ChainRunner, MoveStats, run_chain};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use init::{classical_t_em, initial_mean, initial_tau, warmup_theta};
pub use steps::{weighted_mean,
    MhOutcome, draw_theta, step_alternative_tau, step_classical_tau, step_dirichlet, step_edge_mh, update_mu,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::dp::{AlphaPrior, DpState};
use crate::error::{Error, Result};
use crate::graph::num_pairs;
use crate::hiw::TauRef;
use crate::parallel::Execution;

/// Observation model / estimation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gaussian,
    /// Gaussian marginal likelihood on a scatter matrix reweighted by fixed
    /// divisor estimates.
    GaussianRobustScatter,
    ClassicalT,
    AlternativeT,
    DirichletT,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Gaussian,
        ModelKind::GaussianRobustScatter,
        ModelKind::ClassicalT,
        ModelKind::AlternativeT,
        ModelKind::DirichletT,
    ];

    pub fn is_t(self) -> bool {
        matches!(self, ModelKind::ClassicalT | ModelKind::AlternativeT | ModelKind::DirichletT)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::GaussianRobustScatter => "gaussian-robust-scatter",
            ModelKind::ClassicalT => "classical-t",
            ModelKind::AlternativeT => "alternative-t",
            ModelKind::DirichletT => "dirichlet-t",
        }
    }

    /// Default prior scale multiplier for `Φ = c·I`.
    pub fn default_phi_scale(self, p: usize) -> f64 {
        match self {
            ModelKind::Gaussian | ModelKind::GaussianRobustScatter => 0.2,
            _ if p >= 100 => 0.05,
            _ => 0.1,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

/// How the location vector is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MuMode {
    /// Column means, fixed.
    Naive,
    /// Divisor-weighted means, recomputed after every divisor update.
    Robust,
    /// Robust mean plus Gaussian noise with the conditional's scale.
    ApproxDraw,
    /// Draw from the full conditional under a `N(0, σ_μ I)` prior.
    ExactDraw,
    /// Fixed at a supplied vector (zero by default).
    Known,
}

impl MuMode {
    pub fn name(self) -> &'static str {
        match self {
            MuMode::Naive => "naive",
            MuMode::Robust => "robust",
            MuMode::ApproxDraw => "approx-draw",
            MuMode::ExactDraw => "exact-draw",
            MuMode::Known => "known",
        }
    }
}

impl FromStr for MuMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [MuMode::Naive, MuMode::Robust, MuMode::ApproxDraw, MuMode::ExactDraw, MuMode::Known]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mu_mode '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProposalWeighting {
    Uniform,
    /// Pairs proposed in proportion to the absolute sample correlation.
    AbsCorrelation,
}

impl FromStr for ProposalWeighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ProposalWeighting::Uniform),
            "abs-correlation" => Ok(ProposalWeighting::AbsCorrelation),
            _ => Err(Error::Config(format!("unknown proposal_weighting '{s}'"))),
        }
    }
}

/// Starting divisors.
#[derive(Clone, Debug, PartialEq)]
pub enum TauInit {
    Ones,
    /// Model-specific preliminary fit: a few divisor sweeps under a diagonal
    /// precision for the t models; a classical-t maximum-likelihood fit for
    /// the robust-scatter Gaussian method.
    Warmup,
    /// User-supplied `n×1` (per observation) or `n×p` (per cell) divisors.
    Given(DMatrix<f64>),
}

/// Sampler settings. Every field has a default from [`ChainConfig::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub model: ModelKind,
    pub nu: f64,
    pub alpha_prior: AlphaPrior,
    pub delta: f64,
    /// `Φ = phi_scale · I`; `None` picks the model default.
    pub phi_scale: Option<f64>,
    pub d: f64,
    pub sigma_mu: f64,
    pub seed: u64,
    /// Total edge proposals; `None` means `proposals_per_edge · C(p,2)`.
    pub edge_proposals: Option<u64>,
    pub proposals_per_edge: u64,
    pub tau_every: u64,
    pub recluster_every: u64,
    pub burn_in_frac: f64,
    pub mu_mode: MuMode,
    pub mu_known: Option<Vec<f64>>,
    pub include_graph_prior: bool,
    pub proposal_weighting: ProposalWeighting,
    pub tau_init: TauInit,
    pub warmup_sweeps: usize,
    /// Keep a graph snapshot every `thin` post-burn-in proposals (0: none).
    pub thin: u64,
    /// Edge-count trace interval; `None` gives about 1000 points.
    pub trace_every: Option<u64>,
    /// Keep a divisor snapshot every this many post-burn-in divisor updates (0: none).
    pub tau_snapshot_every: u64,
    /// Quantile level for the online outlier map.
    pub outlier_quantile: f64,
    pub execution: Execution,
}

impl ChainConfig {
    pub fn new(model: ModelKind) -> Self {
        ChainConfig {
            model,
            nu: 3.0,
            alpha_prior: AlphaPrior::Gamma { a: 1.0, b: 1.0 },
            delta: 1.0,
            phi_scale: None,
            d: 0.05,
            sigma_mu: 1e5,
            seed: 1,
            edge_proposals: None,
            proposals_per_edge: 10_000,
            tau_every: 10,
            recluster_every: 20,
            burn_in_frac: 0.2,
            mu_mode: MuMode::Robust,
            mu_known: None,
            include_graph_prior: true,
            proposal_weighting: ProposalWeighting::Uniform,
            tau_init: TauInit::Warmup,
            warmup_sweeps: 5,
            thin: 0,
            trace_every: None,
            tau_snapshot_every: 0,
            outlier_quantile: 0.05,
            execution: Execution::Parallel,
        }
    }

    pub fn total_proposals(&self, p: usize) -> u64 {
        self.edge_proposals
            .unwrap_or_else(|| self.proposals_per_edge.saturating_mul(num_pairs(p) as u64))
    }

    pub fn burn_in(&self, p: usize) -> u64 {
        (self.burn_in_frac * self.total_proposals(p) as f64).floor() as u64
    }

    pub fn phi_scale_for(&self, p: usize) -> f64 {
        self.phi_scale.unwrap_or_else(|| self.model.default_phi_scale(p))
    }

    pub fn trace_interval(&self, p: usize) -> u64 {
        self.trace_every.unwrap_or_else(|| (self.total_proposals(p) / 1000).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if let Some(c) = self.phi_scale {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("phi_scale must be positive, got {c}"));
            }
        }
        if !(self.d > 0.0 && self.d < 1.0) {
            return bad(format!("d must lie in (0,1), got {}", self.d));
        }
        if !(self.sigma_mu > 0.0) {
            return bad(format!("sigma_mu must be positive, got {}", self.sigma_mu));
        }
        if self.tau_every == 0 || self.recluster_every == 0 {
            return bad("tau_every and recluster_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_frac) {
            return bad(format!("burn_in_frac must lie in [0,1), got {}", self.burn_in_frac));
        }
        if !(0.0..=1.0).contains(&self.outlier_quantile) {
            return bad(format!("outlier quantile must lie in [0,1], got {}", self.outlier_quantile));
        }
        self.alpha_prior.validate()?;
        if self.model == ModelKind::DirichletT {
            if let AlphaPrior::Fixed(a) = self.alpha_prior {
                if !(a >= 0.0) {
                    return bad(format!("alpha must be nonnegative, got {a}"));
                }
            }
        }
        Ok(())
    }
}

/// Latent divisors in the shape the model uses.
#[derive(Clone, Debug, PartialEq)]
pub enum TauState {
    /// Gaussian model: no divisors.
    None,
    /// Fixed per-observation weights for the robust-scatter Gaussian method.
    Fixed(Vec<f64>),
    PerRow(Vec<f64>),
    PerCell(DMatrix<f64>),
    Dirichlet(DpState),
}

impl TauState {
    /// Borrowed view for scatter and mean computations. The Dirichlet case
    /// needs the materialized matrix, passed in by the caller.
    pub fn as_ref<'a>(&'a self, dense: &'a Option<DMatrix<f64>>) -> TauRef<'a> {
        match self {
            TauState::None => TauRef::Ones,
            TauState::Fixed(t) | TauState::PerRow(t) => TauRef::PerRow(t),
            TauState::PerCell(m) => TauRef::PerCell(m),
            TauState::Dirichlet(_) => TauRef::PerCell(dense.as_ref().expect("materialized divisors")),
        }
    }

    /// Divisors broadcast to `n×p`.
    pub fn to_matrix(&self, n: usize, p: usize) -> DMatrix<f64> {
        match self {
            TauState::None => DMatrix::from_element(n, p, 1.0),
            TauState::Fixed(t) | TauState::PerRow(t) => DMatrix::from_fn(n, p, |i, _| t[i]),
            TauState::PerCell(m) => m.clone(),
            TauState::Dirichlet(dp) => dp.tau_matrix(),
        }
    }
}
