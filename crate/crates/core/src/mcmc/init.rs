use nalgebra::DMatrix;

use super::steps::{step_alternative_tau, step_classical_tau, weighted_mean};
use super::{ChainConfig, ModelKind, MuMode, TauInit, TauState};
use crate::dp::{DpRow, DpState};
use crate::error::{Error, Result};
use crate::hiw::TauRef;
use crate::linalg::{inverse_spd, mahalanobis_precision, SpdMatrix};
use crate::random::RngStream;

const TAG_WARMUP: u64 = 0x5741_524d;
const EM_MAX_ITERS: usize = 500;
const EM_TOL: f64 = 1e-10;

/// Starting location: the supplied (or zero) vector for `Known`, column means
/// otherwise.
pub fn initial_mean(cfg: &ChainConfig, y: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = y.ncols();
    if cfg.mu_mode == MuMode::Known {
        let mu = cfg.mu_known.clone().unwrap_or_else(|| vec![0.0; p]);
        if mu.len() != p {
            return Err(Error::Config(format!("known mean has length {}, data has {p} columns", mu.len())));
        }
        return Ok(mu);
    }
    weighted_mean(y, TauRef::Ones)
}

/// Diagonal precision from the inverse sample variances about `mu`.
pub fn warmup_theta(y: &DMatrix<f64>, mu: &[f64]) -> Result<SpdMatrix> {
    let (n, p) = y.shape();
    let diag: Vec<f64> = (0..p)
        .map(|j| {
            let v = (0..n).map(|i| (y[(i, j)] - mu[j]).powi(2)).sum::<f64>() / n.max(1) as f64;
            if v > 0.0 && v.is_finite() {
                1.0 / v
            } else {
                1.0
            }
        })
        .collect();
    SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)))
}

/// Classical-t EM fit with weights `w_i = (ν+p)/(ν + (Y_i−μ)ᵀΣ⁻¹(Y_i−μ))`.
///
/// The scale update adds `ridge` (the HIW prior scale) so the fit exists when
/// `n ≤ p`. With `fixed_mu` the location is held; otherwise it is the
/// weighted mean. Returns `(weights, μ, Σ)`.
pub fn classical_t_em(
    y: &DMatrix<f64>,
    nu: f64,
    ridge: &DMatrix<f64>,
    fixed_mu: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let (n, p) = y.shape();
    if n == 0 {
        return Err(Error::Data("no observations".into()));
    }
    let mut w = vec![1.0; n];
    let mut mu = match fixed_mu {
        Some(m) => m.to_vec(),
        None => weighted_mean(y, TauRef::Ones)?,
    };
    let mut sigma = DMatrix::zeros(p, p);
    for _ in 0..EM_MAX_ITERS {
        if fixed_mu.is_none() {
            mu = weighted_mean(y, TauRef::PerRow(&w))?;
        }
        let mut s = ridge.clone();
        for i in 0..n {
            let r = nalgebra::DVector::from_fn(p, |j, _| y[(i, j)] - mu[j]);
            s += (&r * r.transpose()) * w[i];
        }
        sigma = s / n as f64;
        let prec = inverse_spd(&sigma)?;
        let mut change = 0.0f64;
        for i in 0..n {
            let r: Vec<f64> = (0..p).map(|j| y[(i, j)] - mu[j]).collect();
            let q = mahalanobis_precision(&r, &vec![0.0; p], &prec);
            let nw = (nu + p as f64) / (nu + q);
            change = change.max((nw - w[i]).abs());
            w[i] = nw;
        }
        if change < EM_TOL {
            break;
        }
    }
    Ok((w, mu, sigma))
}

fn per_row(m: &DMatrix<f64>, n: usize) -> Result<Vec<f64>> {
    if m.nrows() != n || m.ncols() == 0 {
        return Err(Error::Data(format!("divisor file has {} rows, data has {n}", m.nrows())));
    }
    // Per-cell input collapses to its row mean.
    Ok((0..n).map(|i| m.row(i).mean()).collect())
}

fn per_cell(m: &DMatrix<f64>, n: usize, p: usize) -> Result<DMatrix<f64>> {
    match m.shape() {
        (r, c) if r == n && c == p => Ok(m.clone()),
        (r, 1) if r == n => Ok(DMatrix::from_fn(n, p, |i, _| m[(i, 0)])),
        (r, c) => Err(Error::Data(format!("divisor file is {r}x{c}, expected {n}x1 or {n}x{p}"))),
    }
}

fn check_positive(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Data("divisors must be positive".into()))
    }
}

/// Cluster equal values within each row.
fn dirichlet_from_cells(m: &DMatrix<f64>, cfg: &ChainConfig) -> Result<DpState> {
    let rows = (0..m.nrows())
        .map(|i| {
            let mut values: Vec<f64> = Vec::new();
            let labels = (0..m.ncols())
                .map(|j| {
                    let v = m[(i, j)];
                    match values.iter().position(|&u| u == v) {
                        Some(k) => k,
                        None => {
                            values.push(v);
                            values.len() - 1
                        }
                    }
                })
                .collect();
            DpRow { labels, values }
        })
        .collect();
    DpState::new(rows, cfg.alpha_prior)
}

/// Starting divisors for the configured model.
pub fn initial_tau(cfg: &ChainConfig, y: &DMatrix<f64>, mu: &[f64]) -> Result<TauState> {
    let (n, p) = y.shape();
    if let TauInit::Given(m) = &cfg.tau_init {
        check_positive(m)?;
    }
    let warm_stream = RngStream::new(cfg.seed).derive(&[TAG_WARMUP]);
    let classical_warmup = || -> Result<Vec<f64>> {
        let theta = warmup_theta(y, mu)?;
        let mut t = vec![1.0; n];
        for s in 0..cfg.warmup_sweeps {
            step_classical_tau(&mut t, y, mu, theta.matrix(), cfg.nu, &warm_stream, s as u64, cfg.execution)?;
        }
        Ok(t)
    };
    Ok(match cfg.model {
        ModelKind::Gaussian => TauState::None,
        ModelKind::GaussianRobustScatter => TauState::Fixed(match &cfg.tau_init {
            TauInit::Ones => vec![1.0; n],
            TauInit::Given(m) => per_row(m, n)?,
            TauInit::Warmup => {
                let ridge = DMatrix::identity(p, p) * cfg.phi_scale_for(p);
                let fixed = matches!(cfg.mu_mode, MuMode::Naive | MuMode::Known).then_some(mu);
                classical_t_em(y, cfg.nu, &ridge, fixed)?.0
            }
        }),
        ModelKind::ClassicalT => TauState::PerRow(match &cfg.tau_init {
            TauInit::Ones => vec![1.0; n],
            TauInit::Given(m) => per_row(m, n)?,
            TauInit::Warmup => classical_warmup()?,
        }),
        ModelKind::AlternativeT => TauState::PerCell(match &cfg.tau_init {
            TauInit::Ones => DMatrix::from_element(n, p, 1.0),
            TauInit::Given(m) => per_cell(m, n, p)?,
            TauInit::Warmup => {
                let theta = warmup_theta(y, mu)?;
                let mut t = DMatrix::from_element(n, p, 1.0);
                for s in 0..cfg.warmup_sweeps {
                    step_alternative_tau(&mut t, y, mu, theta.matrix(), cfg.nu, &warm_stream, s as u64, cfg.execution)?;
                }
                t
            }
        }),
        ModelKind::DirichletT => TauState::Dirichlet(match &cfg.tau_init {
            TauInit::Ones => DpState::single_cluster(p, &vec![1.0; n], cfg.alpha_prior)?,
            TauInit::Given(m) if m.ncols() == 1 => DpState::single_cluster(p, &per_row(m, n)?, cfg.alpha_prior)?,
            TauInit::Given(m) => dirichlet_from_cells(&per_cell(m, n, p)?, cfg)?,
            TauInit::Warmup => DpState::single_cluster(p, &classical_warmup()?, cfg.alpha_prior)?,
        }),
    })
}
