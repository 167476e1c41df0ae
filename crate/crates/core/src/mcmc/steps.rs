use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::MuMode;
use crate::dp::{cluster_value_params, sweep_assignments, sweep_values, DpState};
use crate::error::{Error, Result};
use crate::graph::{propose_edge_move, DecomposableGraph, EdgeMove, MoveKind, PairWeights};
use crate::hiw::{log_graph_prior_ratio, log_ml_ratio_with_separator, GraphPrior, HiwParams, TauRef};
use crate::linalg::{clique_inverse_assemble, mahalanobis_precision, SpdMatrix};
use crate::parallel::Execution;
use crate::random::{sample_gamma, sample_hiw, sample_mvn, sample_sqrt_gamma, MvnParam, RngStream};

/// Stream tags separating the per-observation streams of different updates.
pub(crate) const TAG_CLASSICAL: u64 = 1;
pub(crate) const TAG_ALTERNATIVE: u64 = 2;
pub(crate) const TAG_DIRICHLET: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MhOutcome {
    Accepted(EdgeMove),
    Rejected(EdgeMove),
    /// The flipped graph would not be decomposable.
    NotDecomposable(EdgeMove),
}

/// One Metropolis–Hastings edge flip.
///
/// The log acceptance ratio is the marginal-likelihood ratio of the larger
/// over the smaller graph (signed by the move direction), plus the prior log
/// odds when `graph_prior` is given. Proposals are symmetric, so no proposal
/// correction enters.
pub fn step_edge_mh<R: Rng + ?Sized>(
    graph: &mut DecomposableGraph,
    prior: &HiwParams,
    posterior: &HiwParams,
    graph_prior: Option<GraphPrior>,
    weights: Option<&PairWeights>,
    rng: &mut R,
) -> Result<MhOutcome> {
    let mv = propose_edge_move(graph.graph(), rng, weights)?;
    let Some(sep) = graph.move_separator(mv) else {
        return Ok(MhOutcome::NotDecomposable(mv));
    };
    let ratio = log_ml_ratio_with_separator(mv.edge, &sep, prior, posterior)?;
    let mut log_accept = match mv.kind {
        MoveKind::Add => ratio,
        MoveKind::Remove => -ratio,
    };
    if let Some(gp) = graph_prior {
        log_accept += log_graph_prior_ratio(gp, mv);
    }
    if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
        graph.apply(mv);
        Ok(MhOutcome::Accepted(mv))
    } else {
        Ok(MhOutcome::Rejected(mv))
    }
}

/// Precision matrix from an HIW draw on the current graph; non-edges are
/// exactly zero.
pub fn draw_theta<R: Rng + ?Sized>(graph: &mut DecomposableGraph, posterior: &HiwParams, rng: &mut R) -> Result<SpdMatrix> {
    let p = graph.p();
    let seq = graph.sequence();
    let draw = sample_hiw(seq, posterior.delta(), posterior.phi(), rng, false)?;
    clique_inverse_assemble(&draw.blocks, seq, p)
}

fn residual(y: &DMatrix<f64>, mu: &[f64], i: usize) -> Vec<f64> {
    (0..y.ncols()).map(|j| y[(i, j)] - mu[j]).collect()
}

/// `τ_i ∼ Γ((ν+p)/2, (ν + (Y_i−μ)ᵀΘ(Y_i−μ))/2)` for every observation.
pub fn step_classical_tau(
    tau: &mut [f64],
    y: &DMatrix<f64>,
    mu: &[f64],
    theta: &DMatrix<f64>,
    nu: f64,
    streams: &RngStream,
    key: u64,
    exec: Execution,
) -> Result<()> {
    let p = y.ncols();
    if tau.len() != y.nrows() {
        return Err(Error::dim("one divisor per observation expected"));
    }
    exec.try_for_each_mut(tau, |i, t| {
        let mut rng = streams.derive(&[TAG_CLASSICAL, key, i as u64]);
        let r = residual(y, mu, i);
        let q = mahalanobis_precision(&r, &vec![0.0; p], theta);
        *t = sample_gamma(0.5 * (nu + p as f64), 0.5 * (nu + q), &mut rng)?;
        Ok(())
    })
}

/// Single-site sweep `j = 1..p` of the per-cell divisors of every observation.
pub fn step_alternative_tau(
    tau: &mut DMatrix<f64>,
    y: &DMatrix<f64>,
    mu: &[f64],
    theta: &DMatrix<f64>,
    nu: f64,
    streams: &RngStream,
    key: u64,
    exec: Execution,
) -> Result<()> {
    let (n, p) = y.shape();
    if tau.shape() != (n, p) {
        return Err(Error::dim("divisor matrix shape differs from data"));
    }
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| tau[(i, j)]).collect()).collect();
    exec.try_for_each_mut(&mut rows, |i, row| {
        let mut rng = streams.derive(&[TAG_ALTERNATIVE, key, i as u64]);
        let r = residual(y, mu, i);
        let mut x: Vec<f64> = (0..p).map(|j| row[j].sqrt() * r[j]).collect();
        for j in 0..p {
            let params = cluster_value_params(&[j], &r, &x, theta, nu)?;
            row[j] = sample_sqrt_gamma(params, &mut rng)?;
            x[j] = row[j].sqrt() * r[j];
        }
        Ok(())
    })?;
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            tau[(i, j)] = *v;
        }
    }
    Ok(())
}

/// Per-observation Dirichlet sweeps: reassignment (when `recluster`), then
/// cluster values. The concentration update is left to the caller.
pub fn step_dirichlet(
    dp: &mut DpState,
    y: &DMatrix<f64>,
    mu: &[f64],
    theta: &DMatrix<f64>,
    nu: f64,
    recluster: bool,
    streams: &RngStream,
    key: u64,
    exec: Execution,
) -> Result<()> {
    if dp.n() != y.nrows() || dp.p() != y.ncols() {
        return Err(Error::dim("clustering state shape differs from data"));
    }
    let alpha = dp.alpha;
    exec.try_for_each_mut(&mut dp.rows, |i, row| {
        let mut rng = streams.derive(&[TAG_DIRICHLET, key, i as u64]);
        let r = residual(y, mu, i);
        if recluster {
            sweep_assignments(row, &r, theta, alpha, nu, &mut rng)?;
        }
        sweep_values(row, &r, theta, nu, &mut rng)
    })
}

/// Divisor-weighted column means: per observation weights, or componentwise
/// for per-cell divisors.
pub fn weighted_mean(y: &DMatrix<f64>, tau: TauRef<'_>) -> Result<Vec<f64>> {
    let (n, p) = y.shape();
    if n == 0 {
        return Err(Error::Data("no observations".into()));
    }
    let mut num = vec![0.0; p];
    let mut den = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            let w = match tau {
                TauRef::Ones => 1.0,
                TauRef::PerRow(t) => t[i],
                TauRef::PerCell(m) => m[(i, j)],
            };
            num[j] += w * y[(i, j)];
            den[j] += w;
        }
    }
    Ok(num.iter().zip(&den).map(|(a, b)| a / b).collect())
}

fn sqrt_weights(tau: TauRef<'_>, n: usize, p: usize) -> DMatrix<f64> {
    match tau {
        TauRef::Ones => DMatrix::from_element(n, p, 1.0),
        TauRef::PerRow(t) => DMatrix::from_fn(n, p, |i, _| t[i].sqrt()),
        TauRef::PerCell(m) => m.map(f64::sqrt),
    }
}

/// Location update under the configured mode. `Naive` and `Known` return
/// `current` unchanged.
pub fn update_mu<R: Rng + ?Sized>(
    mode: MuMode,
    y: &DMatrix<f64>,
    tau: TauRef<'_>,
    theta: &SpdMatrix,
    sigma_mu: f64,
    current: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (n, p) = y.shape();
    match mode {
        MuMode::Naive | MuMode::Known => Ok(current.to_vec()),
        MuMode::Robust => weighted_mean(y, tau),
        MuMode::ApproxDraw => {
            let centre = weighted_mean(y, tau)?;
            let s = sqrt_weights(tau, n, p);
            let z = sample_mvn(&DVector::zeros(p), MvnParam::Precision(theta), rng)?;
            Ok((0..p)
                .map(|j| {
                    let sj: f64 = s.column(j).iter().map(|v| v * v).sum();
                    centre[j] + z[j] / sj.sqrt()
                })
                .collect())
        }
        MuMode::ExactDraw => {
            // Precision Σ_i D_i^{1/2} Θ D_i^{1/2} + I/σ_μ with D_i = diag(τ_i).
            let s = sqrt_weights(tau, n, p);
            let m = s.tr_mul(&s);
            let th = theta.matrix();
            let mut prec = th.component_mul(&m);
            for j in 0..p {
                prec[(j, j)] += 1.0 / sigma_mu;
            }
            let mut b = DVector::zeros(p);
            for i in 0..n {
                let v = DVector::from_fn(p, |j, _| s[(i, j)] * y[(i, j)]);
                let tv = th * v;
                for j in 0..p {
                    b[j] += s[(i, j)] * tv[j];
                }
            }
            let prec = SpdMatrix::new(prec)?;
            let mean = prec.solve(&b);
            let draw = sample_mvn(&mean, MvnParam::Precision(&prec), rng)?;
            Ok(draw.iter().copied().collect())
        }
    }
}
