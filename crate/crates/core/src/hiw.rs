//! Hyper Inverse Wishart normalizing constants, conjugate updates, edge-move
//! marginal-likelihood ratios, weighted scatter matrices and the graph prior.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeMove, MoveKind, PerfectSequence};
use crate::linalg::{log_det_spd, log_multivariate_gamma, schur_complement, submatrix, SpdMatrix};

/// Degrees of freedom `δ` and scale `Φ` of a Hyper Inverse Wishart law.
#[derive(Clone, Debug)]
pub struct HiwParams {
    delta: f64,
    phi: SpdMatrix,
}

impl HiwParams {
    pub fn new(delta: f64, phi: SpdMatrix) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::domain(format!("HIW degrees of freedom must be positive, got {delta}")));
        }
        Ok(HiwParams { delta, phi })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn phi(&self) -> &SpdMatrix {
        &self.phi
    }

    pub fn p(&self) -> usize {
        self.phi.dim()
    }
}

/// Independent edge-inclusion prior with probability `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphPrior {
    d: f64,
}

impl GraphPrior {
    pub fn new(d: f64) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::domain(format!("graph prior d must lie in (0,1), got {d}")));
        }
        Ok(GraphPrior { d })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// `log P(G) = |E| log d + (C(p,2) − |E|) log(1 − d)`.
    pub fn log_prior(&self, num_edges: usize, p: usize) -> f64 {
        let pairs = crate::graph::num_pairs(p) as f64;
        let e = num_edges as f64;
        e * self.d.ln() + (pairs - e) * (-self.d).ln_1p()
    }
}

/// Log prior odds of a move: `±log(d/(1−d))`.
pub fn log_graph_prior_ratio(prior: GraphPrior, mv: EdgeMove) -> f64 {
    let odds = prior.d.ln() - (-prior.d).ln_1p();
    match mv.kind {
        MoveKind::Add => odds,
        MoveKind::Remove => -odds,
    }
}

fn log_h_term(phi: &SpdMatrix, set: &[usize], delta: f64) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let c = set.len() as f64;
    let a = (delta + c - 1.0) / 2.0;
    let log_det_half = phi.log_det_sub(set)? - c * std::f64::consts::LN_2;
    Ok(a * log_det_half - log_multivariate_gamma(set.len(), a)?)
}

/// Log of the HIW normalizing constant `h(G, δ, Φ)`.
pub fn log_h(seq: &PerfectSequence, delta: f64, phi: &SpdMatrix) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!("HIW degrees of freedom must be positive, got {delta}")));
    }
    if phi.dim() != seq.p() {
        return Err(Error::dim(format!("scale is {0}x{0}, graph has {1} vertices", phi.dim(), seq.p())));
    }
    let mut acc = 0.0;
    for (i, c) in seq.cliques().iter().enumerate() {
        acc += log_h_term(phi, c, delta)?;
        acc -= log_h_term(phi, seq.separator(i), delta)?;
    }
    Ok(acc)
}

/// Conjugate update `(δ + n, Φ + n·S)`.
pub fn posterior_params(prior: &HiwParams, n: usize, scatter: &DMatrix<f64>) -> Result<HiwParams> {
    let p = prior.p();
    if scatter.nrows() != p || scatter.ncols() != p {
        return Err(Error::dim(format!("scatter is {}x{}, expected {p}x{p}", scatter.nrows(), scatter.ncols())));
    }
    if n == 0 {
        return Ok(prior.clone());
    }
    let phi = SpdMatrix::new(prior.phi.matrix() + scatter * n as f64)?;
    HiwParams::new(prior.delta + n as f64, phi)
}

/// `log P(Y | δ, Φ, G) = −(np/2) log 2π + log h(G,δ,Φ) − log h(G,δ*,Φ*)`.
pub fn log_marginal_likelihood(
    seq: &PerfectSequence,
    prior: &HiwParams,
    posterior: &HiwParams,
    n: usize,
    p: usize,
) -> Result<f64> {
    let lead = -0.5 * (n * p) as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(lead + log_h(seq, prior.delta, &prior.phi)? - log_h(seq, posterior.delta, &posterior.phi)?)
}

/// `log P(Y | G) / P(Y | G − e)` where `e` lies in exactly one clique of `G`.
pub fn log_ml_ratio_edge(seq: &PerfectSequence, e: Edge, prior: &HiwParams, posterior: &HiwParams) -> Result<f64> {
    let holders = seq.cliques_containing(e);
    match holders.as_slice() {
        [] => Err(Error::EdgeNotPresent(e.lo() + 1, e.hi() + 1)),
        [q] => {
            let sep: Vec<usize> = seq.cliques()[*q]
                .iter()
                .copied()
                .filter(|&v| v != e.lo() && v != e.hi())
                .collect();
            log_ml_ratio_with_separator(e, &sep, prior, posterior)
        }
        _ => Err(Error::domain(format!("edge {e} lies in {} cliques; removal breaks decomposability", holders.len()))),
    }
}

/// The deletion ratio given the separator `S = C_q ∖ {j,k}` directly.
///
/// Only the 2×2 Schur complement `Φ_{ee|S}` is needed: its diagonal holds the
/// scalar conditional variances `Φ_{jj|S}` and `Φ_{kk|S}`.
pub fn log_ml_ratio_with_separator(e: Edge, sep: &[usize], prior: &HiwParams, posterior: &HiwParams) -> Result<f64> {
    let s = sep.len() as f64;
    let d2 = prior.delta + s;
    let d2s = posterior.delta + s;
    let pair = [e.lo(), e.hi()];
    let a = schur_complement(prior.phi.matrix(), &pair, sep)?;
    let b = schur_complement(posterior.phi.matrix(), &pair, sep)?;
    let (ldet_a, la0, la1) = det2(&a)?;
    let (ldet_b, lb0, lb1) = det2(&b)?;
    Ok(0.5 * (d2 + 1.0) * ldet_a + 0.5 * d2s * (lb0 + lb1)
        - 0.5 * (d2s + 1.0) * ldet_b
        - 0.5 * d2 * (la0 + la1)
        + ln_gamma(0.5 * d2)
        + ln_gamma(0.5 * (d2s + 1.0))
        - ln_gamma(0.5 * (d2 + 1.0))
        - ln_gamma(0.5 * d2s))
}

fn det2(m: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
    let (x, y, z) = (m[(0, 0)], m[(1, 1)], m[(0, 1)]);
    let det = x * y - z * z;
    if !(x > 0.0 && y > 0.0 && det > 0.0) {
        return Err(Error::numerical("conditional edge scale is not positive definite"));
    }
    Ok((det.ln(), x.ln(), y.ln()))
}

/// Latent weights entering the scatter matrix.
#[derive(Clone, Copy, Debug)]
pub enum TauRef<'a> {
    /// All weights one (Gaussian model).
    Ones,
    /// One weight per observation (classical t).
    PerRow(&'a [f64]),
    /// One weight per cell, `n×p` (alternative and Dirichlet t).
    PerCell(&'a DMatrix<f64>),
}

/// Rows `X_i = diag(√τ_i)(Y_i − μ)`.
pub fn weighted_residuals(y: &DMatrix<f64>, tau: TauRef<'_>, mu: &[f64]) -> Result<DMatrix<f64>> {
    let (n, p) = y.shape();
    if mu.len() != p {
        return Err(Error::dim(format!("mean has length {}, data has {p} columns", mu.len())));
    }
    let check = |t: f64| {
        if t > 0.0 && t.is_finite() {
            Ok(t.sqrt())
        } else {
            Err(Error::domain(format!("weights must be positive, got {t}")))
        }
    };
    let mut x = DMatrix::zeros(n, p);
    match tau {
        TauRef::Ones => {
            for i in 0..n {
                for j in 0..p {
                    x[(i, j)] = y[(i, j)] - mu[j];
                }
            }
        }
        TauRef::PerRow(t) => {
            if t.len() != n {
                return Err(Error::dim(format!("{} weights for {n} rows", t.len())));
            }
            for i in 0..n {
                let w = check(t[i])?;
                for j in 0..p {
                    x[(i, j)] = w * (y[(i, j)] - mu[j]);
                }
            }
        }
        TauRef::PerCell(t) => {
            if t.shape() != (n, p) {
                return Err(Error::dim(format!("weights are {:?}, data is {n}x{p}", t.shape())));
            }
            for i in 0..n {
                for j in 0..p {
                    x[(i, j)] = check(t[(i, j)])? * (y[(i, j)] - mu[j]);
                }
            }
        }
    }
    Ok(x)
}

/// `(1/n) Σ_i X_i X_iᵀ` with `X_i` from [`weighted_residuals`].
///
/// Returned as a plain symmetric matrix: it is only positive semidefinite
/// (singular whenever `n < p`).
pub fn weighted_scatter(y: &DMatrix<f64>, tau: TauRef<'_>, mu: &[f64]) -> Result<DMatrix<f64>> {
    let x = weighted_residuals(y, tau, mu)?;
    let n = x.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(x.ncols(), x.ncols()));
    }
    let s = x.tr_mul(&x) / n as f64;
    Ok((&s + s.transpose()) * 0.5)
}

/// Log-marginal likelihood of a dense Gaussian sample under a single-clique
/// (complete graph) IW prior, written directly from the IW density. Used as an
/// independent check of the clique-wise formulas.
pub fn log_marginal_complete_direct(y: &DMatrix<f64>, delta: f64, phi: &SpdMatrix) -> Result<f64> {
    let (n, p) = y.shape();
    let m = delta + p as f64 - 1.0;
    let post = phi.matrix() + y.tr_mul(y);
    let nf = n as f64;
    let all: Vec<usize> = (0..p).collect();
    Ok(-0.5 * nf * p as f64 * std::f64::consts::PI.ln() + 0.5 * m * phi.log_det()
        - 0.5 * (m + nf) * log_det_spd(&submatrix(&post, &all, &all))?
        + log_multivariate_gamma(p, 0.5 * (m + nf))?
        - log_multivariate_gamma(p, 0.5 * m)?)
}
