//! Seeded random streams and the sampling primitives used by the samplers.
//!
//! Gamma distributions are parameterized by shape and rate throughout, so
//! `Γ(ν/2, ν/2)` has mean one.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::PerfectSequence;
use crate::linalg::{inverse_spd, local_positions, schur_complement, submatrix, SpdMatrix};

/// Deterministic, splittable random stream.
///
/// Child streams depend only on the parent's seed and the supplied keys, never
/// on how many draws the parent has made, so work split across threads
/// reproduces a sequential run exactly.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Restores a stream at a given position of its keystream.
    pub fn from_position(seed: u64, word_pos: u128) -> Self {
        let mut s = RngStream::new(seed);
        s.rng.set_word_pos(word_pos);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Child stream keyed by e.g. `(chain, update, observation)`.
    pub fn derive(&self, keys: &[u64]) -> RngStream {
        let mut h = splitmix64(self.seed);
        for &k in keys {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0xD1B5_4A32_D192_ED03)));
        }
        RngStream::new(h)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from `Γ(shape, rate)` (mean `shape / rate`).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain(e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    let d = Beta::new(a, b).map_err(|e| Error::domain(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Second-moment parameter of a multivariate normal.
#[derive(Clone, Copy, Debug)]
pub enum MvnParam<'a> {
    Covariance(&'a SpdMatrix),
    Precision(&'a SpdMatrix),
}

pub fn sample_mvn<R: Rng + ?Sized>(mu: &DVector<f64>, param: MvnParam<'_>, rng: &mut R) -> Result<DVector<f64>> {
    let m = match param {
        MvnParam::Covariance(s) | MvnParam::Precision(s) => s,
    };
    let p = m.dim();
    if mu.len() != p {
        return Err(Error::dim(format!("mean has length {}, matrix is {p}x{p}", mu.len())));
    }
    let z = DVector::from_fn(p, |_, _| std_normal(rng));
    let l = m.cholesky_l();
    let x = match param {
        MvnParam::Covariance(_) => &l * z,
        // Θ = L Lᵀ, so L⁻ᵀ z has covariance Θ⁻¹.
        MvnParam::Precision(_) => l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("singular precision factor"))?,
    };
    Ok(mu + x)
}

/// Lower-triangular Bartlett factor `A` with `A Aᵀ ∼ Wishart_p(m, I)`.
fn bartlett<R: Rng + ?Sized>(p: usize, m: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi2 = 2.0 * sample_gamma((m - i as f64) / 2.0, 1.0, rng)?;
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    Ok(a)
}

/// Inverse Wishart with `m` degrees of freedom and scale `Φ`, i.e. the inverse
/// of a `Wishart(m, Φ⁻¹)` draw; `E[Σ] = Φ / (m − p − 1)`.
pub fn sample_iw<R: Rng + ?Sized>(m: f64, phi: &SpdMatrix, rng: &mut R) -> Result<SpdMatrix> {
    SpdMatrix::new(sample_iw_dense(m, phi.matrix(), rng)?)
}

fn sample_iw_dense<R: Rng + ?Sized>(m: f64, phi: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = phi.nrows();
    if !(m > p as f64 - 1.0) || !m.is_finite() {
        return Err(Error::domain(format!(
            "inverse Wishart needs m > p - 1 = {}, got {m}",
            p as f64 - 1.0
        )));
    }
    let lphi = nalgebra::Cholesky::new(phi.clone())
        .ok_or_else(|| Error::numerical("inverse Wishart scale is not positive definite"))?
        .l();
    let a = bartlett(p, m, rng)?;
    // Σ = (L_Φ A⁻ᵀ)(L_Φ A⁻ᵀ)ᵀ = Xᵀ X with X = A⁻¹ L_Φᵀ.
    let x = a
        .solve_lower_triangular(&lphi.transpose())
        .ok_or_else(|| Error::numerical("degenerate Bartlett factor"))?;
    let s = x.transpose() * x;
    Ok((&s + s.transpose()) * 0.5)
}

/// Clique blocks of a Hyper Inverse Wishart draw, optionally completed to a
/// full covariance matrix.
#[derive(Clone, Debug)]
pub struct HiwDraw {
    /// `Ψ_{C_iC_i}`, indexed by the sorted vertices of clique `i`.
    pub blocks: Vec<DMatrix<f64>>,
    pub completed: Option<SpdMatrix>,
}

/// Draws `Ψ ∼ HIW_G(δ, Φ)` clique by clique along a perfect sequence.
///
/// The first clique is a direct inverse Wishart draw; each later clique is
/// drawn conditionally on its separator block, which it inherits from an
/// earlier clique. With `complete = false` the non-edge entries are never
/// formed, which is all that is needed to assemble the precision matrix.
pub fn sample_hiw<R: Rng + ?Sized>(
    seq: &PerfectSequence,
    delta: f64,
    phi: &SpdMatrix,
    rng: &mut R,
    complete: bool,
) -> Result<HiwDraw> {
    check_positive("HIW delta", delta)?;
    let p = seq.p();
    if phi.dim() != p {
        return Err(Error::dim(format!("scale is {0}x{0}, graph has {p} vertices", phi.dim())));
    }
    let cliques = seq.cliques();
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(cliques.len());
    let mut full = complete.then(|| DMatrix::<f64>::zeros(p, p));
    let mut seen: Vec<usize> = Vec::with_capacity(p);

    for (i, c) in cliques.iter().enumerate() {
        let m = delta + c.len() as f64 - 1.0;
        let s = seq.separator(i);
        let block = if s.is_empty() {
            sample_iw_dense(m, &submatrix(phi.matrix(), c, c), rng)?
        } else {
            let r: Vec<usize> = c.iter().copied().filter(|v| s.binary_search(v).is_err()).collect();
            let j = (0..i)
                .find(|&j| crate::graph::is_subset(s, &cliques[j]))
                .ok_or_else(|| Error::domain(format!("separator {i} is not inside an earlier clique")))?;
            let sj = local_positions(&cliques[j], s);
            let psi_ss = submatrix(&blocks[j], &sj, &sj);
            conditional_clique_block(phi.matrix(), c, s, &r, m, &psi_ss, rng)?
        };

        if let Some(full) = full.as_mut() {
            for (a, &u) in c.iter().enumerate() {
                for (b, &v) in c.iter().enumerate() {
                    full[(u, v)] = block[(a, b)];
                }
            }
            let rest: Vec<usize> = seen.iter().copied().filter(|v| s.binary_search(v).is_err()).collect();
            let r: Vec<usize> = c.iter().copied().filter(|v| s.binary_search(v).is_err()).collect();
            if !rest.is_empty() && !s.is_empty() {
                // Ψ_{R,H∖S} = Ψ_RS Ψ_SS⁻¹ Ψ_{S,H∖S}
                let psi_rs = submatrix(full, &r, s);
                let psi_ss_inv = inverse_spd(&submatrix(full, s, s))?;
                let psi_sh = submatrix(full, s, &rest);
                let fill = psi_rs * psi_ss_inv * psi_sh;
                for (a, &u) in r.iter().enumerate() {
                    for (b, &v) in rest.iter().enumerate() {
                        full[(u, v)] = fill[(a, b)];
                        full[(v, u)] = fill[(a, b)];
                    }
                }
            }
            seen.extend(r);
        }
        blocks.push(block);
    }

    let completed = full.map(SpdMatrix::new).transpose()?;
    Ok(HiwDraw { blocks, completed })
}

/// Draws `Ψ_{CC}` given `Ψ_{SS}` for `Ψ_{CC} ∼ IW(m, Φ_{CC})`, `C = S ∪ R`.
///
/// Uses the partitioned inverse Wishart: `Ψ_{RR·S} ∼ IW(m, Φ_{RR·S})` and
/// `Ψ_SS⁻¹ Ψ_SR ∼ MN(Φ_SS⁻¹ Φ_SR, Φ_SS⁻¹ ⊗ Ψ_{RR·S})`, both independent of
/// `Ψ_SS`.
fn conditional_clique_block<R: Rng + ?Sized>(
    phi: &DMatrix<f64>,
    c: &[usize],
    s: &[usize],
    r: &[usize],
    m: f64,
    psi_ss: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let phi_rr_s = schur_complement(phi, r, s)?;
    let psi_rr_s = sample_iw_dense(m, &phi_rr_s, rng)?;

    let phi_ss = submatrix(phi, s, s);
    let phi_sr = submatrix(phi, s, r);
    let chol_ss = nalgebra::Cholesky::new(phi_ss)
        .ok_or_else(|| Error::numerical("separator scale is not positive definite"))?;
    let mean = chol_ss.solve(&phi_sr);
    let l_ss = chol_ss.l();
    let l_rr = nalgebra::Cholesky::new(psi_rr_s.clone())
        .ok_or_else(|| Error::numerical("conditional covariance is not positive definite"))?
        .l();
    let z = DMatrix::from_fn(s.len(), r.len(), |_, _| std_normal(rng));
    // Row covariance Φ_SS⁻¹ = L⁻ᵀ L⁻¹, column covariance L_rr L_rrᵀ.
    let rows = l_ss
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical("singular separator factor"))?;
    let b = mean + rows * l_rr.transpose();

    let psi_sr = psi_ss * &b;
    let psi_rr = psi_rr_s + b.transpose() * &psi_sr;

    let sp = local_positions(c, s);
    let rp = local_positions(c, r);
    let mut out = DMatrix::zeros(c.len(), c.len());
    for (a, &u) in sp.iter().enumerate() {
        for (b2, &v) in sp.iter().enumerate() {
            out[(u, v)] = psi_ss[(a, b2)];
        }
        for (b2, &v) in rp.iter().enumerate() {
            out[(u, v)] = psi_sr[(a, b2)];
            out[(v, u)] = psi_sr[(a, b2)];
        }
    }
    for (a, &u) in rp.iter().enumerate() {
        for (b2, &v) in rp.iter().enumerate() {
            out[(u, v)] = 0.5 * (psi_rr[(a, b2)] + psi_rr[(b2, a)]);
        }
    }
    Ok(out)
}

/// Parameters of the density `∝ τ^{shape−1} exp(−rate·τ − tilt·√τ)` on `τ > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqrtGammaParams {
    pub shape: f64,
    pub rate: f64,
    pub tilt: f64,
}

impl SqrtGammaParams {
    pub fn new(shape: f64, rate: f64, tilt: f64) -> Result<Self> {
        if !(shape > 0.5) || !shape.is_finite() {
            return Err(Error::domain(format!("sqrt-tilted gamma needs shape > 1/2, got {shape}")));
        }
        check_positive("sqrt-tilted gamma rate", rate)?;
        if !tilt.is_finite() {
            return Err(Error::domain(format!("sqrt-tilted gamma tilt must be finite, got {tilt}")));
        }
        Ok(SqrtGammaParams { shape, rate, tilt })
    }

    /// Log-density of `s = √τ`, up to a constant: `(2·shape−1) log s − rate s² − tilt s`.
    pub fn log_density_sqrt(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (2.0 * self.shape - 1.0) * s.ln() - self.rate * s * s - self.tilt * s
    }

    /// Mode of the density of `s = √τ`.
    pub fn mode_sqrt(&self) -> f64 {
        let c = 2.0 * self.shape - 1.0;
        let (r, t) = (self.rate, self.tilt);
        let disc = (t * t + 8.0 * r * c).sqrt();
        if t > 0.0 {
            2.0 * c / (t + disc)
        } else {
            (disc - t) / (4.0 * r)
        }
    }
}

const MAX_REJECTIONS: usize = 1000;

/// Exact draw from the √-tilted Gamma density.
///
/// In `s = √τ` the log-density is strictly concave. Two envelopes touch it at
/// the mode `s*` and dominate it everywhere:
/// a Gaussian `N(s*, 1/(2·rate))` (ratio `exp(c(log(s/s*) − s/s* + 1))`) and a
/// `Γ(c+1, c/s*)` density in `s` (ratio `exp(−rate (s − s*)²)`), with
/// `c = 2·shape − 1`. The tighter one is chosen from the curvature split.
/// After [`MAX_REJECTIONS`] failures a slice sampler takes over.
pub fn sample_sqrt_gamma<R: Rng + ?Sized>(params: SqrtGammaParams, rng: &mut R) -> Result<f64> {
    let params = SqrtGammaParams::new(params.shape, params.rate, params.tilt)?;
    let c = 2.0 * params.shape - 1.0;
    let r = params.rate;
    let s_star = params.mode_sqrt();
    if !(s_star > 0.0 && s_star.is_finite()) {
        return Err(Error::numerical(format!("sqrt-tilted gamma mode is {s_star}")));
    }
    let gaussian = c / (s_star * s_star) < 2.0 * r;
    let sd = (0.5 / r).sqrt();
    let lambda = c / s_star;
    let env = Gamma::new(c + 1.0, 1.0 / lambda).map_err(|e| Error::domain(e.to_string()))?;

    for _ in 0..MAX_REJECTIONS {
        let log_u = rng.random::<f64>().ln();
        let s = if gaussian {
            let s = s_star + sd * std_normal(rng);
            if s <= 0.0 {
                continue;
            }
            let x = s / s_star;
            if log_u < c * (x.ln() - x + 1.0) {
                s
            } else {
                continue;
            }
        } else {
            let s: f64 = env.sample(rng);
            if s > 0.0 && log_u < -r * (s - s_star) * (s - s_star) {
                s
            } else {
                continue;
            }
        };
        return Ok(s * s);
    }
    let s = slice_sample_sqrt(&params, s_star, rng);
    Ok(s * s)
}

fn slice_sample_sqrt<R: Rng + ?Sized>(params: &SqrtGammaParams, start: f64, rng: &mut R) -> f64 {
    let f = |s: f64| params.log_density_sqrt(s);
    let width = (0.5 / params.rate).sqrt().max(start * 0.1);
    let mut x = start;
    for _ in 0..50 {
        let level = f(x) + rng.random::<f64>().ln();
        let mut lo = x - width * rng.random::<f64>();
        let mut hi = lo + width;
        while lo > 0.0 && f(lo) > level {
            lo -= width;
        }
        lo = lo.max(0.0);
        while f(hi) > level {
            hi += width;
        }
        loop {
            let y = lo + (hi - lo) * rng.random::<f64>();
            if f(y) > level {
                x = y;
                break;
            }
            if y < x {
                lo = y;
            } else {
                hi = y;
            }
        }
    }
    x
}

const GL_ORDER: usize = 20;
const GL_PANELS: usize = 8;
/// Integrand is truncated where it falls this far (in log) below its peak.
const LOG_WINDOW: f64 = 40.0;

fn gauss_legendre() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        (1..=n)
            .map(|i| {
                let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let kf = k as f64;
                        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

/// `log ∫_0^∞ s^ν exp(−a s²/2 + b s) ds` for `ν > 0`, `a > 0`.
fn log_tilted_moment(nu: f64, a: f64, b: f64) -> f64 {
    let h = |s: f64| nu * s.ln() - 0.5 * a * s * s + b * s;
    let disc = (b * b + 4.0 * a * nu).sqrt();
    let mode = if b < 0.0 { 2.0 * nu / (disc - b) } else { (b + disc) / (2.0 * a) };
    let peak = h(mode);
    let target = peak - LOG_WINDOW;

    let bisect = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if h(mid) > target {
                inside = mid;
            } else {
                outside = mid;
            }
            if (outside - inside).abs() <= 1e-13 * mode {
                break;
            }
        }
        outside
    };
    let lo = bisect(mode, 0.0);
    let mut far = mode * 2.0 + 1.0 / a.sqrt();
    while h(far) > target {
        far *= 2.0;
    }
    let hi = bisect(mode, far);

    let nodes = gauss_legendre();
    let mut acc = 0.0;
    // Panels are split at the mode so the peak sits on a panel boundary.
    let halves = [(lo, mode), (mode, hi)];
    for (a0, b0) in halves {
        let w = (b0 - a0) / (GL_PANELS / 2) as f64;
        for k in 0..GL_PANELS / 2 {
            let left = a0 + k as f64 * w;
            let (mid, half) = (left + 0.5 * w, 0.5 * w);
            for &(x, wt) in nodes {
                let s = mid + half * x;
                acc += wt * half * (h(s) - peak).exp();
            }
        }
    }
    peak + acc.ln()
}

/// Log-density at `x` of `(ncp + Z)/√τ` with `Z ∼ N(0,1)` and `τ ∼ Γ(ν/2, ν/2)`.
pub fn noncentral_t_logpdf(x: f64, nu: f64, ncp: f64) -> f64 {
    if !(nu > 0.0) || !x.is_finite() || !ncp.is_finite() {
        return f64::NAN;
    }
    if ncp == 0.0 {
        return central_t_logpdf(x, nu);
    }
    let log_k = std::f64::consts::LN_2 + 0.5 * nu * (0.5 * nu).ln() - ln_gamma(0.5 * nu) - 0.5 * (2.0 * PI).ln();
    log_k + log_tilted_moment(nu, nu + x * x, x * ncp) - 0.5 * ncp * ncp
}

pub fn central_t_logpdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Pólya-urn draw of a Dirichlet-Gamma vector of length `p`.
///
/// Returns the values and the partition labels (numbered by first
/// appearance). Component `j` opens a new cluster with probability
/// `α/(α + j)` (0-based `j`), drawing from `Γ(ν/2, ν/2)`; otherwise it copies
/// a uniformly chosen earlier component.
pub fn sample_dirichlet_gamma_prior<R: Rng + ?Sized>(
    p: usize,
    alpha: f64,
    nu: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_positive("concentration", alpha)?;
    check_positive("degrees of freedom", nu)?;
    let mut values = Vec::with_capacity(p);
    let mut labels = Vec::with_capacity(p);
    let mut atoms: Vec<f64> = Vec::new();
    for j in 0..p {
        let new = j == 0 || rng.random::<f64>() < alpha / (alpha + j as f64);
        if new {
            let v = sample_gamma(0.5 * nu, 0.5 * nu, rng)?;
            atoms.push(v);
            labels.push(atoms.len() - 1);
            values.push(v);
        } else {
            let src = rng.random_range(0..j);
            labels.push(labels[src]);
            values.push(values[src]);
        }
    }
    Ok((values, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

    #[test]
    fn streams_are_reproducible_and_resumable() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        let xs: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..5).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let pos = a.word_pos();
        let next = a.next_u64();
        let mut c = RngStream::from_position(7, pos);
        assert_eq!(c.next_u64(), next);

        let d1 = a.derive(&[1, 2, 3]);
        let d2 = RngStream::new(7).derive(&[1, 2, 3]);
        assert_eq!(d1.seed(), d2.seed());
        assert_ne!(a.derive(&[1, 2, 4]).seed(), d1.seed());
        assert_ne!(a.derive(&[2, 1, 3]).seed(), d1.seed());
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngStream::new(1);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_gamma(1.5, 1.5, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!((var - 2.0 / 3.0).abs() < 0.01, "{var}");
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn mvn_precision_covariance() {
        let p = 4;
        let mut theta = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            theta[(i, i)] = 1.0;
            if i + 1 < p {
                theta[(i, i + 1)] = 0.5;
                theta[(i + 1, i)] = 0.5;
            }
        }
        let theta = SpdMatrix::new(theta).unwrap();
        let sigma = theta.inverse();
        let mut rng = RngStream::new(2);
        let n = 200_000;
        let mu = DVector::zeros(p);
        let mut acc = DMatrix::<f64>::zeros(p, p);
        for _ in 0..n {
            let x = sample_mvn(&mu, MvnParam::Precision(&theta), &mut rng).unwrap();
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        assert!((acc - &sigma).abs().max() < 0.02);

        let cov = SpdMatrix::new(sigma.clone()).unwrap();
        let mut acc = DMatrix::<f64>::zeros(p, p);
        for _ in 0..n {
            let x = sample_mvn(&mu, MvnParam::Covariance(&cov), &mut rng).unwrap();
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        assert!((acc - &sigma).abs().max() < 0.02);
    }

    #[test]
    fn iw_moments() {
        let mut rng = RngStream::new(3);
        let n = 100_000;
        let phi1 = SpdMatrix::scaled_identity(1, 2.0);
        let mean1: f64 = (0..n)
            .map(|_| sample_iw(10.0, &phi1, &mut rng).unwrap().matrix()[(0, 0)])
            .sum::<f64>()
            / n as f64;
        assert!((mean1 / (2.0 / 8.0) - 1.0).abs() < 0.01, "{mean1}");

        let phi = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.5, 0.3, 0.5, 1.0, 0.2, 0.3, 0.2, 1.5],
        ))
        .unwrap();
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            acc += sample_iw(10.0, &phi, &mut rng).unwrap().matrix();
        }
        acc /= n as f64;
        let expect = phi.matrix() / 6.0;
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (acc[(i, j)] - expect[(i, j)]).abs() < 0.02 * expect[(i, j)].abs(),
                    "({i},{j}) {} vs {}",
                    acc[(i, j)],
                    expect[(i, j)]
                );
            }
        }
        assert!(sample_iw(1.5, &phi, &mut rng).is_err());
    }

    #[test]
    fn hiw_blocks_are_consistent_and_assemble_sparse() {
        use crate::graph::Graph;
        use crate::linalg::clique_inverse_assemble;
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (1, 3), (2, 3), (3, 4)]).unwrap();
        let seq = PerfectSequence::from_graph(&g).unwrap();
        let phi = SpdMatrix::scaled_identity(5, 0.5);
        let mut rng = RngStream::new(4);
        for _ in 0..20 {
            let draw = sample_hiw(&seq, 3.0, &phi, &mut rng, true).unwrap();
            let full = draw.completed.unwrap();
            for (c, b) in seq.cliques().iter().zip(&draw.blocks) {
                assert!((submatrix(full.matrix(), c, c) - b).abs().max() < 1e-10);
            }
            let theta = clique_inverse_assemble(&draw.blocks, &seq, 5).unwrap();
            for j in 0..5 {
                for k in 0..5 {
                    if j != k && !g.has_edge(j, k) {
                        assert_eq!(theta.matrix()[(j, k)], 0.0);
                    }
                }
            }
            let dense = full.inverse();
            assert!((theta.matrix() - &dense).abs().max() < 1e-6 * dense.abs().max());
        }
    }

    #[test]
    fn sqrt_gamma_zero_tilt_is_gamma() {
        let mut rng = RngStream::new(5);
        let n = 100_000;
        for &(shape, rate) in &[(2.0, 2.0), (0.75, 3.0), (25.0, 0.5)] {
            let params = SqrtGammaParams::new(shape, rate, 0.0).unwrap();
            let mut xs: Vec<f64> = (0..n).map(|_| sample_sqrt_gamma(params, &mut rng).unwrap()).collect();
            xs.sort_by(f64::total_cmp);
            let dist = GammaDist::new(shape, rate).unwrap();
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = dist.cdf(x);
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0f64, f64::max);
            assert!(ks < 0.005, "shape {shape} rate {rate}: KS {ks}");
        }
    }

    #[test]
    fn sqrt_gamma_domain() {
        assert!(SqrtGammaParams::new(0.5, 1.0, 0.0).is_err());
        assert!(SqrtGammaParams::new(1.0, 0.0, 0.0).is_err());
        assert!(SqrtGammaParams::new(1.0, 1.0, f64::NAN).is_err());
        let bad = SqrtGammaParams { shape: 0.2, rate: 1.0, tilt: 0.0 };
        assert!(sample_sqrt_gamma(bad, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn sqrt_gamma_mode_solves_stationarity() {
        for &(a, r, t) in &[(2.0, 2.0, 1.0), (2.0, 2.0, -3.0), (1.0, 0.1, 50.0), (30.0, 5.0, -200.0)] {
            let p = SqrtGammaParams::new(a, r, t).unwrap();
            let s = p.mode_sqrt();
            let grad = (2.0 * a - 1.0) / s - 2.0 * r * s - t;
            assert!(grad.abs() < 1e-9 * (1.0 + t.abs()), "{grad}");
        }
    }

    #[test]
    fn central_t_closed_form() {
        let expect = (ln_gamma(2.0) - 0.5 * (3.0 * PI).ln() - ln_gamma(1.5)).exp();
        assert!((noncentral_t_logpdf(0.0, 3.0, 0.0).exp() - expect).abs() < 1e-14);
        // Tiny noncentrality goes through the quadrature path.
        assert!((noncentral_t_logpdf(0.0, 3.0, 1e-12).exp() - expect).abs() < 1e-10);
        assert!((noncentral_t_logpdf(1.3, 3.0, 1e-12) - central_t_logpdf(1.3, 3.0)).abs() < 1e-9);
    }

    #[test]
    fn dirichlet_gamma_prior_limits() {
        let mut rng = RngStream::new(6);
        let (v, l) = sample_dirichlet_gamma_prior(10, 1e-12, 3.0, &mut rng).unwrap();
        assert!(l.iter().all(|&x| x == 0));
        assert!(v.iter().all(|&x| x == v[0]));
        let (_, l) = sample_dirichlet_gamma_prior(10, 1e12, 3.0, &mut rng).unwrap();
        assert_eq!(l, (0..10).collect::<Vec<_>>());

        let n = 1_000_000;
        let total: usize = (0..n)
            .map(|_| {
                let (_, l) = sample_dirichlet_gamma_prior(3, 1.0, 3.0, &mut rng).unwrap();
                l.iter().max().unwrap() + 1
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 11.0 / 6.0).abs() < 0.01, "{mean}");
    }
}
