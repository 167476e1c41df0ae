use nalgebra::DMatrix;

use super::init::{initial_mean, initial_tau};
use super::steps::{
    draw_theta, step_alternative_tau, step_classical_tau, step_dirichlet, step_edge_mh, update_mu, weighted_mean,
    MhOutcome,
};
use super::{ChainConfig, MuMode, ProposalWeighting, TauState};
use crate::error::{Error, Result};
use crate::graph::{pair_index, DecomposableGraph, Graph, MoveKind, PairWeights};
use crate::hiw::{posterior_params, weighted_scatter, GraphPrior, HiwParams, TauRef};
use crate::linalg::SpdMatrix;
use crate::random::RngStream;
use crate::report::{EdgePosterior, TauOutlierAccumulator};

const TAG_MAIN: u64 = 0x4d41_494e;
const TAG_OBS: u64 = 0x4f42_5321;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
    /// Proposals rejected because the flipped graph is not decomposable.
    pub not_decomposable: u64,
}

impl MoveStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposed.max(1) as f64
    }
}

/// Everything a finished chain reports.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub edge_posterior: EdgePosterior,
    /// `(iteration, edge count)` at the trace interval, burn-in included.
    pub trace: Vec<(u64, usize)>,
    /// Thinned post-burn-in graph states.
    pub graphs: Vec<(u64, Graph)>,
    /// Thinned post-burn-in divisor states, broadcast to `n×p`.
    pub tau_snapshots: Vec<DMatrix<f64>>,
    /// Posterior mean divisors (t models only).
    pub tau_mean: Option<DMatrix<f64>>,
    /// Posterior probability that each divisor lies below the configured
    /// prior quantile (t models only).
    pub tau_outlier: Option<DMatrix<f64>>,
    /// Average location over post-burn-in divisor updates.
    pub mu_mean: Vec<f64>,
    /// Mean number of clusters per observation after each post-burn-in update.
    pub cluster_trace: Vec<f64>,
    /// Concentration after every divisor update (Dirichlet only).
    pub alpha_trace: Vec<f64>,
    pub moves: MoveStats,
    pub final_graph: Graph,
    pub final_theta: SpdMatrix,
    pub final_mu: Vec<f64>,
    pub final_tau: TauState,
}

/// A resumable chain. [`run_chain`] is the one-shot entry point.
#[derive(Clone, Debug)]
pub struct ChainRunner {
    pub(super) cfg: ChainConfig,
    pub(super) y: DMatrix<f64>,
    pub(super) prior: HiwParams,
    pub(super) posterior: HiwParams,
    graph_prior: Option<GraphPrior>,
    weights: Option<PairWeights>,
    pub(super) total: u64,
    pub(super) burn_in: u64,
    trace_every: u64,

    pub(super) iter: u64,
    pub(super) tau_updates: u64,
    pub(super) rng: RngStream,
    obs_streams: RngStream,
    pub(super) graph: DecomposableGraph,
    pub(super) theta: Option<SpdMatrix>,
    pub(super) mu: Vec<f64>,
    pub(super) tau: TauState,

    pub(super) edge_time: Vec<u64>,
    pub(super) on_since: Vec<u64>,
    pub(super) trace: Vec<(u64, usize)>,
    pub(super) graphs: Vec<(u64, Graph)>,
    pub(super) tau_snapshots: Vec<DMatrix<f64>>,
    pub(super) outliers: Option<TauOutlierAccumulator>,
    pub(super) mu_sum: Vec<f64>,
    pub(super) mu_count: u64,
    pub(super) cluster_trace: Vec<f64>,
    pub(super) alpha_trace: Vec<f64>,
    pub(super) moves: MoveStats,
}

fn abs_correlation_weights(y: &DMatrix<f64>) -> Result<PairWeights> {
    let (n, p) = y.shape();
    let mean = weighted_mean(y, TauRef::Ones)?;
    let c = DMatrix::from_fn(n, p, |i, j| y[(i, j)] - mean[j]);
    let cov = c.tr_mul(&c);
    let mut r = DMatrix::from_fn(p, p, |j, k| {
        let d = (cov[(j, j)] * cov[(k, k)]).sqrt();
        if d > 0.0 { (cov[(j, k)] / d).abs() } else { 0.0 }
    });
    // Keep every pair reachable.
    let max = r.iter().enumerate().filter(|(i, _)| i % (p + 1) != 0).map(|(_, v)| *v).fold(0.0f64, f64::max);
    let floor = if max > 0.0 { 1e-3 * max } else { 1.0 };
    r.apply(|v| *v = v.max(floor));
    PairWeights::from_abs_matrix(&r)
}

impl ChainRunner {
    pub fn new(cfg: ChainConfig, y: DMatrix<f64>) -> Result<Self> {
        cfg.validate()?;
        let (n, p) = y.shape();
        if p < 2 {
            return Err(Error::Data(format!("need at least two variables, got {p}")));
        }
        if n == 0 {
            return Err(Error::Data("no observations".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("data contain non-finite values".into()));
        }
        let prior = HiwParams::new(cfg.delta, SpdMatrix::scaled_identity(p, cfg.phi_scale_for(p)))?;
        let graph_prior = if cfg.include_graph_prior { Some(GraphPrior::new(cfg.d)?) } else { None };
        let weights = match cfg.proposal_weighting {
            ProposalWeighting::Uniform => None,
            ProposalWeighting::AbsCorrelation => Some(abs_correlation_weights(&y)?),
        };
        let mut mu = initial_mean(&cfg, &y)?;
        let tau = initial_tau(&cfg, &y, &mu)?;
        if !cfg.model.is_t() && !matches!(cfg.mu_mode, MuMode::Naive | MuMode::Known) {
            // Gaussian methods fix the location once, using the fixed weights.
            mu = weighted_mean(&y, tau.as_ref(&None))?;
        }
        let dense = match &tau {
            TauState::Dirichlet(dp) => Some(dp.tau_matrix()),
            _ => None,
        };
        let posterior = posterior_params(&prior, n, &weighted_scatter(&y, tau.as_ref(&dense), &mu)?)?;
        let outliers = if cfg.model.is_t() {
            Some(TauOutlierAccumulator::new(n, p, cfg.nu, cfg.outlier_quantile)?)
        } else {
            None
        };
        let base = RngStream::new(cfg.seed);
        Ok(ChainRunner {
            total: cfg.total_proposals(p),
            burn_in: cfg.burn_in(p),
            trace_every: cfg.trace_interval(p),
            rng: base.derive(&[TAG_MAIN]),
            obs_streams: base.derive(&[TAG_OBS]),
            graph: DecomposableGraph::empty(p),
            theta: None,
            mu_sum: vec![0.0; p],
            mu_count: 0,
            mu,
            tau,
            edge_time: vec![0; crate::graph::num_pairs(p)],
            on_since: vec![0; crate::graph::num_pairs(p)],
            trace: Vec::new(),
            graphs: Vec::new(),
            tau_snapshots: Vec::new(),
            outliers,
            cluster_trace: Vec::new(),
            alpha_trace: Vec::new(),
            moves: MoveStats::default(),
            iter: 0,
            tau_updates: 0,
            cfg,
            y,
            prior,
            posterior,
            graph_prior,
            weights,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn total_iterations(&self) -> u64 {
        self.total
    }

    pub fn is_finished(&self) -> bool {
        self.iter >= self.total
    }

    pub fn graph(&self) -> &Graph {
        self.graph.graph()
    }

    pub(super) fn set_main_rng(&mut self, rng: RngStream) {
        self.rng = rng;
    }

    pub(super) fn set_graph(&mut self, g: Graph) -> Result<()> {
        self.graph = DecomposableGraph::new(g)?;
        Ok(())
    }

    fn dense_tau(&self) -> Option<DMatrix<f64>> {
        match &self.tau {
            TauState::Dirichlet(dp) => Some(dp.tau_matrix()),
            _ => None,
        }
    }

    pub(super) fn refresh_posterior(&mut self) -> Result<()> {
        let dense = self.dense_tau();
        let scatter = weighted_scatter(&self.y, self.tau.as_ref(&dense), &self.mu)?;
        self.posterior = posterior_params(&self.prior, self.y.nrows(), &scatter)?;
        Ok(())
    }

    /// Advances to iteration `target` (clamped to the chain length).
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        let target = target.min(self.total);
        while self.iter < target {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let p = self.graph.p();
        if self.iter == self.burn_in {
            for e in self.graph.graph().edges() {
                self.on_since[pair_index(p, e)] = self.iter + 1;
            }
        }
        self.iter += 1;
        let s = self.iter;
        let outcome = step_edge_mh(
            &mut self.graph,
            &self.prior,
            &self.posterior,
            self.graph_prior,
            self.weights.as_ref(),
            &mut self.rng,
        )?;
        self.moves.proposed += 1;
        match outcome {
            MhOutcome::Accepted(mv) => {
                self.moves.accepted += 1;
                if s > self.burn_in {
                    let idx = pair_index(p, mv.edge);
                    match mv.kind {
                        MoveKind::Add => self.on_since[idx] = s,
                        MoveKind::Remove => self.edge_time[idx] += s - self.on_since[idx],
                    }
                }
            }
            MhOutcome::NotDecomposable(_) => self.moves.not_decomposable += 1,
            MhOutcome::Rejected(_) => {}
        }
        if s.is_multiple_of(self.trace_every) || s == self.total {
            self.trace.push((s, self.graph.graph().num_edges()));
        }
        if self.cfg.thin > 0 && s > self.burn_in && (s - self.burn_in).is_multiple_of(self.cfg.thin) {
            self.graphs.push((s, self.graph.graph().clone()));
        }
        if self.cfg.model.is_t() && s.is_multiple_of(self.cfg.tau_every) {
            self.update_latents(s > self.burn_in)?;
        }
        Ok(())
    }

    fn update_latents(&mut self, record: bool) -> Result<()> {
        let key = self.tau_updates;
        self.tau_updates += 1;
        let cfg = &self.cfg;
        let theta = draw_theta(&mut self.graph, &self.posterior, &mut self.rng)?;
        match &mut self.tau {
            TauState::PerRow(t) => {
                step_classical_tau(t, &self.y, &self.mu, theta.matrix(), cfg.nu, &self.obs_streams, key, cfg.execution)?
            }
            TauState::PerCell(t) => {
                step_alternative_tau(t, &self.y, &self.mu, theta.matrix(), cfg.nu, &self.obs_streams, key, cfg.execution)?
            }
            TauState::Dirichlet(dp) => {
                let recluster = key.is_multiple_of(cfg.recluster_every);
                step_dirichlet(dp, &self.y, &self.mu, theta.matrix(), cfg.nu, recluster, &self.obs_streams, key, cfg.execution)?;
            }
            TauState::None | TauState::Fixed(_) => unreachable!("divisor updates run for t models only"),
        }
        let dense = self.dense_tau();
        self.mu = update_mu(
            cfg.mu_mode,
            &self.y,
            self.tau.as_ref(&dense),
            &theta,
            cfg.sigma_mu,
            &self.mu,
            &mut self.rng,
        )?;
        if let TauState::Dirichlet(dp) = &mut self.tau {
            dp.update_concentration(&mut self.rng)?;
            self.alpha_trace.push(dp.alpha);
            if record {
                self.cluster_trace.push(dp.mean_clusters());
            }
        }
        self.theta = Some(theta);
        self.refresh_posterior()?;

        if record {
            let (n, p) = self.y.shape();
            let tau = dense.unwrap_or_else(|| self.tau.to_matrix(n, p));
            if let Some(acc) = &mut self.outliers {
                acc.push(&tau)?;
            }
            let post_updates = self.outliers.as_ref().map_or(0, |a| a.count());
            if self.cfg.tau_snapshot_every > 0 && post_updates.is_multiple_of(self.cfg.tau_snapshot_every) {
                self.tau_snapshots.push(tau);
            }
            for (a, m) in self.mu_sum.iter_mut().zip(&self.mu) {
                *a += m;
            }
            self.mu_count += 1;
        }
        Ok(())
    }

    /// Runs to the end and assembles the output.
    pub fn finish(mut self) -> Result<ChainOutput> {
        self.run_until(self.total)?;
        let p = self.graph.p();
        let recorded = self.total - self.burn_in;
        let mut counts = self.edge_time.clone();
        if recorded > 0 {
            for e in self.graph.graph().edges() {
                let idx = pair_index(p, e);
                counts[idx] += self.total + 1 - self.on_since[idx];
            }
        }
        let edge_posterior = EdgePosterior::from_counts(p, counts, recorded)?;
        let final_theta = match self.theta.take() {
            Some(t) => t,
            None => draw_theta(&mut self.graph, &self.posterior, &mut self.rng)?,
        };
        let mu_mean = if self.mu_count > 0 {
            self.mu_sum.iter().map(|s| s / self.mu_count as f64).collect()
        } else {
            self.mu.clone()
        };
        let (tau_mean, tau_outlier) = match &self.outliers {
            Some(acc) if acc.count() > 0 => (Some(acc.mean()), Some(acc.probabilities())),
            _ => (None, None),
        };
        Ok(ChainOutput {
            edge_posterior,
            trace: self.trace,
            graphs: self.graphs,
            tau_snapshots: self.tau_snapshots,
            tau_mean,
            tau_outlier,
            mu_mean,
            cluster_trace: self.cluster_trace,
            alpha_trace: self.alpha_trace,
            moves: self.moves,
            final_graph: self.graph.into_graph(),
            final_theta,
            final_mu: self.mu,
            final_tau: self.tau,
        })
    }
}

/// Runs one chain from an empty graph.
pub fn run_chain(cfg: ChainConfig, y: &DMatrix<f64>) -> Result<ChainOutput> {
    ChainRunner::new(cfg, y.clone())?.finish()
}
