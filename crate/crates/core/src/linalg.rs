//! Symmetric positive-definite matrices, Schur complements and clique-local
//! inversion.
//!
//! All determinants are handled in log space through Cholesky factors.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::PerfectSequence;

/// Asymmetry (relative to the largest entry) repaired silently on ingestion.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Smallest admissible Cholesky pivot, relative to the largest diagonal entry.
pub const PIVOT_TOL: f64 = 1e-12;

/// Relative tolerance for clique blocks that overlap on a separator.
pub const OVERLAP_TOL: f64 = 1e-8;

/// Symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn symmetrize(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > SYMMETRY_TOL * scale {
                return Err(Error::numerical(format!(
                    "matrix not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
            let avg = 0.5 * (a + b);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    Ok(m)
}

fn factorize(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let max_diag = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v));
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    let l = chol.l_dirty();
    for i in 0..m.nrows() {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > PIVOT_TOL * max_diag) {
            return Err(Error::numerical(format!(
                "near-singular matrix: pivot {pivot:e} at {i} (max diagonal {max_diag:e})"
            )));
        }
    }
    Ok(chol)
}

impl SpdMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let mat = symmetrize(mat)?;
        let chol = factorize(&mat)?;
        Ok(SpdMatrix { mat, chol })
    }

    pub fn identity(p: usize) -> Self {
        SpdMatrix::scaled_identity(p, 1.0)
    }

    pub fn scaled_identity(p: usize, c: f64) -> Self {
        SpdMatrix::new(DMatrix::identity(p, p) * c).expect("positive multiple of identity")
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        // Cholesky inversion can leave rounding-level asymmetry.
        (&inv + inv.transpose()) * 0.5
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        submatrix(&self.mat, idx, idx)
    }

    /// `log |A_{idx,idx}|`; zero for an empty index set.
    pub fn log_det_sub(&self, idx: &[usize]) -> Result<f64> {
        log_det_spd(&self.submatrix(idx))
    }
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Log-determinant of a positive-definite matrix via Cholesky.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = factorize(m)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Inverse of a positive-definite matrix via Cholesky.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let inv = factorize(m)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn check_index_sets(dim: usize, target: &[usize], given: &[usize]) -> Result<()> {
    if let Some(&v) = target.iter().chain(given).find(|&&v| v >= dim) {
        return Err(Error::dim(format!("index {v} out of range for dimension {dim}")));
    }
    if target.iter().any(|t| given.contains(t)) {
        return Err(Error::domain("target and conditioning sets overlap"));
    }
    Ok(())
}

/// `A_tt − A_tg A_gg⁻¹ A_gt` on a dense matrix.
pub fn schur_complement(m: &DMatrix<f64>, target: &[usize], given: &[usize]) -> Result<DMatrix<f64>> {
    check_index_sets(m.nrows(), target, given)?;
    let a = submatrix(m, target, target);
    if given.is_empty() {
        return Ok(a);
    }
    let b = submatrix(m, target, given);
    let c = submatrix(m, given, given);
    let chol = factorize(&c)?;
    let c_inv_bt = chol.solve(&b.transpose());
    Ok(a - &b * c_inv_bt)
}

/// Conditional covariance `Φ_{tt|g}` of `target` given `given`.
pub fn schur_conditional(phi: &SpdMatrix, target: &[usize], given: &[usize]) -> Result<SpdMatrix> {
    SpdMatrix::new(schur_complement(phi.matrix(), target, given)?)
}

/// Assembles `Θ = Σ_i [(Ψ_{C_iC_i})⁻¹]⁰ − Σ_i [(Ψ_{S_iS_i})⁻¹]⁰` from clique blocks.
///
/// `blocks[i]` is indexed by the sorted vertices of clique `i`. Separator
/// blocks are read from the clique that follows them and must agree with the
/// earlier clique they are contained in.
pub fn clique_inverse_assemble(blocks: &[DMatrix<f64>], seq: &PerfectSequence, p: usize) -> Result<SpdMatrix> {
    let cliques = seq.cliques();
    if blocks.len() != cliques.len() {
        return Err(Error::dim(format!(
            "{} clique blocks for {} cliques",
            blocks.len(),
            cliques.len()
        )));
    }
    let mut theta = DMatrix::<f64>::zeros(p, p);
    for (i, (c, block)) in cliques.iter().zip(blocks).enumerate() {
        if block.nrows() != c.len() || block.ncols() != c.len() {
            return Err(Error::dim(format!("block {i} does not match clique size {}", c.len())));
        }
        let inv = inverse_spd(block)?;
        for (a, &u) in c.iter().enumerate() {
            for (b, &v) in c.iter().enumerate() {
                theta[(u, v)] += inv[(a, b)];
            }
        }
        let s = seq.separator(i);
        if s.is_empty() {
            continue;
        }
        let local = local_positions(c, s);
        let sep_block = submatrix(block, &local, &local);
        if let Some(j) = (0..i).find(|&j| crate::graph::is_subset(s, &cliques[j])) {
            let other = submatrix(&blocks[j], &local_positions(&cliques[j], s), &local_positions(&cliques[j], s));
            let scale = sep_block.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let diff = (&sep_block - &other).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if diff > OVERLAP_TOL * scale {
                return Err(Error::numerical(format!(
                    "clique blocks {j} and {i} disagree on their separator by {diff:e}"
                )));
            }
        }
        let inv = inverse_spd(&sep_block)?;
        for (a, &u) in s.iter().enumerate() {
            for (b, &v) in s.iter().enumerate() {
                theta[(u, v)] -= inv[(a, b)];
            }
        }
    }
    SpdMatrix::new(theta)
}

/// Positions of `subset` members inside the sorted list `set`.
pub fn local_positions(set: &[usize], subset: &[usize]) -> Vec<usize> {
    subset
        .iter()
        .map(|v| set.binary_search(v).expect("subset member"))
        .collect()
}

/// Conditional mean and covariance of `X_t` given `X_{∖t} = x_given` for a
/// zero-mean Gaussian with precision `Θ`.
///
/// `x_given` lists the complement of `target` in increasing vertex order.
pub fn conditional_gaussian_params(
    theta: &SpdMatrix,
    target: &[usize],
    x_given: &[f64],
) -> Result<(DVector<f64>, SpdMatrix)> {
    let p = theta.dim();
    if target.is_empty() {
        return Err(Error::domain("conditional target set is empty"));
    }
    let rest: Vec<usize> = (0..p).filter(|v| !target.contains(v)).collect();
    check_index_sets(p, target, &rest)?;
    if x_given.len() != rest.len() {
        return Err(Error::dim(format!(
            "conditioning vector has {} entries, expected {}",
            x_given.len(),
            rest.len()
        )));
    }
    let tt = theta.submatrix(target);
    let sigma = SpdMatrix::new(inverse_spd(&tt)?)?;
    if rest.is_empty() {
        return Ok((DVector::zeros(target.len()), sigma));
    }
    let tr = submatrix(theta.matrix(), target, &rest);
    let x = DVector::from_column_slice(x_given);
    let mean = -(sigma.matrix() * (tr * x));
    Ok((mean, sigma))
}

/// `log Γ_p(a) = p(p−1)/4 · log π + Σ_{i=1..p} log Γ(a − (i−1)/2)`.
pub fn log_multivariate_gamma(p: usize, a: f64) -> Result<f64> {
    let lim = (p as f64 - 1.0) / 2.0;
    if !(a > lim) {
        return Err(Error::domain(format!(
            "multivariate gamma needs a > (p-1)/2 = {lim}, got {a}"
        )));
    }
    let pf = p as f64;
    let mut acc = pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for i in 0..p {
        acc += ln_gamma(a - i as f64 / 2.0);
    }
    Ok(acc)
}

/// `(y − μ)ᵀ Θ (y − μ)` for a precision matrix `Θ`.
pub fn mahalanobis_precision(y: &[f64], mu: &[f64], theta: &DMatrix<f64>) -> f64 {
    let p = y.len();
    debug_assert_eq!(mu.len(), p);
    debug_assert_eq!(theta.nrows(), p);
    let mut acc = 0.0;
    for j in 0..p {
        let dj = y[j] - mu[j];
        if dj == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for k in 0..p {
            row += theta[(j, k)] * (y[k] - mu[k]);
        }
        acc += dj * row;
    }
    acc.max(0.0)
}

/// `(y − μ)ᵀ Ψ⁻¹ (y − μ)` for a covariance matrix `Ψ`.
pub fn mahalanobis_cov(y: &[f64], mu: &[f64], psi: &SpdMatrix) -> f64 {
    let d = DVector::from_iterator(y.len(), y.iter().zip(mu).map(|(a, b)| a - b));
    let z = psi
        .chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .expect("nonzero pivots");
    z.norm_squared()
}

/// Writes `rows cols` then whitespace-separated rows.
pub fn write_dense<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_dense<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut tokens = Vec::new();
    for line in r.lines() {
        let line = line?;
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let mut it = tokens.into_iter();
    let mut dim = || -> Result<usize> {
        it.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("missing 'rows cols' header".into()))
    };
    let rows = dim()?;
    let cols = dim()?;
    let values: Vec<f64> = it
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{t}'"))))
        .collect::<Result<_>>()?;
    if values.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} values for {rows}x{cols}, found {}",
            rows * cols,
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}
