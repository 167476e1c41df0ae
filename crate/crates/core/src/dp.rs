//! Dirichlet-process clustering of the per-cell divisors of each observation.
//!
//! Every observation `i` carries its own partition of the `p` coordinates;
//! all coordinates in a cluster share one divisor `η`. Labels are 0-based in
//! memory and 1-based in the text format.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::random::{noncentral_t_logpdf, sample_beta, sample_gamma, sample_sqrt_gamma, SqrtGammaParams};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Treatment of the concentration parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaPrior {
    Fixed(f64),
    /// `α ∼ Γ(a, b)` (shape, rate), updated through the auxiliary `w`.
    Gamma { a: f64, b: f64 },
}

impl AlphaPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AlphaPrior::Fixed(a) => a >= 0.0 && a.is_finite(),
            AlphaPrior::Gamma { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid concentration prior {self:?}")))
        }
    }

    pub fn initial(&self) -> f64 {
        match *self {
            AlphaPrior::Fixed(a) => a,
            AlphaPrior::Gamma { a, b } => a / b,
        }
    }
}

/// Partition and cluster values of one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct DpRow {
    pub labels: Vec<usize>,
    pub values: Vec<f64>,
}

impl DpRow {
    pub fn single(p: usize, eta: f64) -> Self {
        DpRow { labels: vec![0; p], values: vec![eta] }
    }

    /// One cluster per coordinate.
    pub fn declustered(values: Vec<f64>) -> Self {
        DpRow { labels: (0..values.len()).collect(), values }
    }

    pub fn num_clusters(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn tau(&self, j: usize) -> f64 {
        self.values[self.labels[j]]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.values.len()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Members of every cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.values.len()];
        for (j, &l) in self.labels.iter().enumerate() {
            m[l].push(j);
        }
        m
    }

    /// Drops empty clusters and renumbers labels by first appearance.
    pub fn compact(&mut self) {
        let mut map = vec![usize::MAX; self.values.len()];
        let mut values = Vec::with_capacity(self.values.len());
        for l in self.labels.iter_mut() {
            if map[*l] == usize::MAX {
                map[*l] = values.len();
                values.push(self.values[*l]);
            }
            *l = map[*l];
        }
        self.values = values;
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.iter().any(|&l| l >= self.values.len()) {
            return Err(Error::domain("cluster label out of range"));
        }
        let counts = self.counts();
        if counts.contains(&0) {
            return Err(Error::domain("empty cluster in a compacted row"));
        }
        if self.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::domain("cluster values must be positive"));
        }
        let mut next = 0;
        for &l in &self.labels {
            if l > next {
                return Err(Error::domain("labels are not numbered by first appearance"));
            }
            if l == next {
                next += 1;
            }
        }
        Ok(())
    }
}

/// Full clustering state: one [`DpRow`] per observation plus `α` and `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpState {
    pub rows: Vec<DpRow>,
    pub alpha: f64,
    pub w: Vec<f64>,
    pub prior: AlphaPrior,
}

impl DpState {
    pub fn new(rows: Vec<DpRow>, prior: AlphaPrior) -> Result<Self> {
        prior.validate()?;
        let n = rows.len();
        let s = DpState { rows, alpha: prior.initial(), w: vec![0.5; n], prior };
        s.validate()?;
        Ok(s)
    }

    /// Each observation starts as one cluster with the given divisor.
    pub fn single_cluster(p: usize, eta: &[f64], prior: AlphaPrior) -> Result<Self> {
        DpState::new(eta.iter().map(|&e| DpRow::single(p, e)).collect(), prior)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.rows.first().map_or(0, |r| r.labels.len())
    }

    pub fn num_clusters(&self) -> Vec<usize> {
        self.rows.iter().map(DpRow::num_clusters).collect()
    }

    pub fn mean_clusters(&self) -> f64 {
        let k = self.num_clusters();
        k.iter().sum::<usize>() as f64 / k.len().max(1) as f64
    }

    /// The implied `n×p` divisor matrix `τ_ij = η_{i,z_ij}`.
    pub fn tau_matrix(&self) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        DMatrix::from_fn(n, p, |i, j| self.rows[i].tau(j))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        for (i, r) in self.rows.iter().enumerate() {
            if r.labels.len() != p {
                return Err(Error::dim(format!("row {i} has {} labels, expected {p}", r.labels.len())));
            }
            r.validate().map_err(|e| Error::domain(format!("row {i}: {e}")))?;
        }
        if self.w.len() != self.rows.len() {
            return Err(Error::dim("auxiliary vector length differs from row count"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::domain(format!("concentration must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Updates `w` then `α` when `α` carries a Gamma prior.
    pub fn update_concentration<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if let AlphaPrior::Gamma { a, b } = self.prior {
            let p = self.p();
            for w in self.w.iter_mut() {
                *w = sample_w(self.alpha, p, rng)?;
            }
            self.alpha = sample_alpha(&self.num_clusters(), &self.w, a, b, p, rng)?;
        }
        Ok(())
    }

    /// Header `dpstate <n> <p> <alpha>`, then per observation
    /// `K_i; labels; values; w_i`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dpstate {} {} {}", self.n(), self.p(), self.alpha)?;
        for (row, w) in self.rows.iter().zip(&self.w) {
            let labels: Vec<String> = row.labels.iter().map(|l| (l + 1).to_string()).collect();
            let values: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}; {}; {}; {}", row.num_clusters(), labels.join(" "), values.join(" "), w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R, prior: AlphaPrior) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("dp state: {m}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty input"))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "dpstate" {
            return Err(bad("missing 'dpstate n p alpha' header"));
        }
        let n: usize = parts[1].parse().map_err(|_| bad("bad n"))?;
        let p: usize = parts[2].parse().map_err(|_| bad("bad p"))?;
        let alpha: f64 = parts[3].parse().map_err(|_| bad("bad alpha"))?;
        let mut rows = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for line in lines.take(n) {
            let line = line?;
            let f: Vec<&str> = line.split(';').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad("expected 'K; labels; values; w'"));
            }
            let k: usize = f[0].parse().map_err(|_| bad("bad K"))?;
            let labels = f[1]
                .split_whitespace()
                .map(|t| match t.parse::<usize>() {
                    Ok(l) if l >= 1 => Ok(l - 1),
                    _ => Err(bad("bad label")),
                })
                .collect::<Result<Vec<_>>>()?;
            let values = f[2]
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != k || labels.len() != p {
                return Err(bad("row length mismatch"));
            }
            rows.push(DpRow { labels, values });
            w.push(f[3].parse().map_err(|_| bad("bad w"))?);
        }
        if rows.len() != n {
            return Err(bad("fewer rows than declared"));
        }
        let s = DpState { rows, alpha, w, prior };
        s.validate()?;
        Ok(s)
    }
}

/// Unnormalized log weights of the assignment conditional.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentWeights {
    /// New cluster.
    pub log_q0: f64,
    /// Existing clusters by label; `-inf` for labels with no other members.
    pub log_qk: Vec<f64>,
}

impl AssignmentWeights {
    /// Probabilities `(q0, qk)` summing to one.
    pub fn normalized(&self) -> Result<(f64, Vec<f64>)> {
        let m = self.log_qk.iter().copied().fold(self.log_q0, f64::max);
        if !m.is_finite() {
            return Err(Error::numerical("all assignment weights vanish"));
        }
        let q0 = (self.log_q0 - m).exp();
        let qk: Vec<f64> = self.log_qk.iter().map(|l| (l - m).exp()).collect();
        let z = q0 + qk.iter().sum::<f64>();
        Ok((q0 / z, qk.into_iter().map(|q| q / z).collect()))
    }
}

/// Conditional mean and variance of the latent `X_j` given the other latent
/// coordinates: `μ_c = −θ_jj⁻¹ Σ_{l≠j} θ_jl x_l`, `σ_c² = θ_jj⁻¹`.
#[inline]
pub fn latent_conditional(j: usize, x: &[f64], theta: &DMatrix<f64>) -> (f64, f64) {
    let tjj = theta[(j, j)];
    (-cross_term(j, x, theta) / tjj, 1.0 / tjj)
}

/// `Σ_{l≠j} θ_jl x_l`.
#[inline]
pub fn cross_term(j: usize, x: &[f64], theta: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for (l, &xl) in x.iter().enumerate() {
        if l != j {
            acc += theta[(j, l)] * xl;
        }
    }
    acc
}

/// Weights for reassigning coordinate `j` of one observation.
///
/// `r` is the centered row `Y_i − μ`, `x` the current latent row
/// `√τ_i ⊙ r` (entry `j` is ignored) and `counts` the cluster sizes with `j`
/// already removed.
pub fn assignment_weights(
    j: usize,
    r: &[f64],
    x: &[f64],
    row: &DpRow,
    counts: &[usize],
    theta: &DMatrix<f64>,
    alpha: f64,
    nu: f64,
) -> AssignmentWeights {
    let y = r[j];
    let (mc, vc) = latent_conditional(j, x, theta);
    let sc = vc.sqrt();
    let log_q0 = if alpha > 0.0 {
        alpha.ln() + noncentral_t_logpdf(y / sc, nu, mc / sc) - sc.ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_qk = row
        .values
        .iter()
        .zip(counts)
        .map(|(&eta, &c)| {
            if c == 0 {
                return f64::NEG_INFINITY;
            }
            let se = eta.sqrt();
            let z = (y * se - mc) / sc;
            (c as f64).ln() + se.ln() - sc.ln() - LN_SQRT_2PI - 0.5 * z * z
        })
        .collect();
    AssignmentWeights { log_q0, log_qk }
}

/// Outcome of an assignment draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Existing(usize),
    /// Open a cluster under this label.
    New(usize),
}

/// Categorical draw from the assignment weights.
///
/// A new cluster gets the next free label, unless the departing coordinate
/// was alone in its cluster, in which case that label is reused.
pub fn draw_assignment<R: Rng + ?Sized>(
    weights: &AssignmentWeights,
    departing_singleton: Option<usize>,
    rng: &mut R,
) -> Result<Assignment> {
    let (q0, qk) = weights.normalized()?;
    let u: f64 = rng.random();
    let mut acc = q0;
    if u < acc {
        return Ok(Assignment::New(departing_singleton.unwrap_or(qk.len())));
    }
    let mut last = None;
    for (k, q) in qk.iter().enumerate() {
        if *q > 0.0 {
            acc += q;
            last = Some(k);
            if u < acc {
                return Ok(Assignment::Existing(k));
            }
        }
    }
    // Rounding left a sliver of mass past the final bin.
    Ok(match last {
        Some(k) => Assignment::Existing(k),
        None => Assignment::New(departing_singleton.unwrap_or(qk.len())),
    })
}

/// Parameters of the divisor shared by the coordinates in `members`:
/// shape `(ν+n_k)/2`, rate `(ν + r_kᵀ Θ_kk r_k)/2`, tilt `r_kᵀ Θ_{k,∖k} x_{∖k}`.
///
/// A singleton `{j}` gives exactly the per-cell conditional of the
/// alternative model.
pub fn cluster_value_params(
    members: &[usize],
    r: &[f64],
    x: &[f64],
    theta: &DMatrix<f64>,
    nu: f64,
) -> Result<SqrtGammaParams> {
    if members.is_empty() {
        return Err(Error::domain("cluster has no members"));
    }
    let p = r.len();
    let mut inside = vec![false; p];
    for &a in members {
        inside[a] = true;
    }
    let mut quad = 0.0;
    let mut tilt = 0.0;
    for &a in members {
        let mut qa = 0.0;
        for &b in members {
            qa += theta[(a, b)] * r[b];
        }
        quad += r[a] * qa;
        let mut ta = 0.0;
        for l in 0..p {
            if !inside[l] {
                ta += theta[(a, l)] * x[l];
            }
        }
        tilt += r[a] * ta;
    }
    SqrtGammaParams::new(0.5 * (nu + members.len() as f64), 0.5 * (nu + quad), tilt)
}

pub fn draw_cluster_value<R: Rng + ?Sized>(
    members: &[usize],
    r: &[f64],
    x: &[f64],
    theta: &DMatrix<f64>,
    nu: f64,
    rng: &mut R,
) -> Result<f64> {
    sample_sqrt_gamma(cluster_value_params(members, r, x, theta, nu)?, rng)
}

/// Reassignment sweep over the coordinates of one observation, followed by
/// compaction. New clusters draw their value from the single-cell
/// conditional.
pub fn sweep_assignments<R: Rng + ?Sized>(
    row: &mut DpRow,
    r: &[f64],
    theta: &DMatrix<f64>,
    alpha: f64,
    nu: f64,
    rng: &mut R,
) -> Result<()> {
    let p = r.len();
    let mut x: Vec<f64> = (0..p).map(|l| row.tau(l).sqrt() * r[l]).collect();
    let mut counts = row.counts();
    for j in 0..p {
        let old = row.labels[j];
        counts[old] -= 1;
        let singleton = (counts[old] == 0).then_some(old);
        let w = assignment_weights(j, r, &x, row, &counts, theta, alpha, nu);
        match draw_assignment(&w, singleton, rng)? {
            Assignment::Existing(k) => row.labels[j] = k,
            Assignment::New(label) => {
                let eta = draw_cluster_value(&[j], r, &x, theta, nu, rng)?;
                if label == row.values.len() {
                    row.values.push(eta);
                    counts.push(0);
                } else {
                    row.values[label] = eta;
                }
                row.labels[j] = label;
            }
        }
        counts[row.labels[j]] += 1;
        x[j] = row.tau(j).sqrt() * r[j];
    }
    row.compact();
    Ok(())
}

/// Redraws each cluster's value in label order.
pub fn sweep_values<R: Rng + ?Sized>(
    row: &mut DpRow,
    r: &[f64],
    theta: &DMatrix<f64>,
    nu: f64,
    rng: &mut R,
) -> Result<()> {
    let p = r.len();
    let mut x: Vec<f64> = (0..p).map(|l| row.tau(l).sqrt() * r[l]).collect();
    for (k, members) in row.members().iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let eta = draw_cluster_value(members, r, &x, theta, nu, rng)?;
        row.values[k] = eta;
        let s = eta.sqrt();
        for &a in members {
            x[a] = s * r[a];
        }
    }
    Ok(())
}

/// `w_i ∼ Beta(α + 1, p)`.
pub fn sample_w<R: Rng + ?Sized>(alpha: f64, p: usize, rng: &mut R) -> Result<f64> {
    if p == 0 {
        return Err(Error::domain("p must be at least one"));
    }
    sample_beta(alpha + 1.0, p as f64, rng)
}

/// Log mixture weights `log π_j`, `j = 0..n`, of the concentration
/// conditional; components with nonpositive shape get `-inf`.
pub fn alpha_mixture_log_weights(k: &[usize], w: &[f64], a: f64, b: f64, p: usize) -> Result<(Vec<f64>, f64)> {
    let n = k.len();
    if w.len() != n {
        return Err(Error::dim("auxiliary and cluster-count vectors differ in length"));
    }
    if w.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::domain("auxiliary variables must lie in (0,1)"));
    }
    let rate = b - w.iter().map(|x| x.ln()).sum::<f64>();
    let total: usize = k.iter().sum();
    let ln_p = (p as f64).ln();
    let ln_rate = rate.ln();
    let logs = (0..=n)
        .map(|j| {
            let shape = a + total as f64 - j as f64;
            if shape <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ln_binomial(n, j) + j as f64 * (ln_p + ln_rate) + ln_gamma(shape)
        })
        .collect();
    Ok((logs, rate))
}

/// Draws `α` from the `(n+1)`-component Gamma mixture given `w` and the
/// per-observation cluster counts `k`.
pub fn sample_alpha<R: Rng + ?Sized>(k: &[usize], w: &[f64], a: f64, b: f64, p: usize, rng: &mut R) -> Result<f64> {
    let (logs, rate) = alpha_mixture_log_weights(k, w, a, b, p)?;
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::numerical("no admissible concentration mixture component"));
    }
    let probs: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * z;
    let mut pick = probs.len() - 1;
    for (j, q) in probs.iter().enumerate() {
        if u < *q {
            pick = j;
            break;
        }
        u -= q;
    }
    while probs[pick] == 0.0 {
        pick -= 1;
    }
    let total: usize = k.iter().sum();
    sample_gamma(a + total as f64 - pick as f64, rate, rng)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `log |s(n, k)|` for `k = 0..=n` (unsigned Stirling numbers of the first
/// kind), via `|s(m+1,k)| = m |s(m,k)| + |s(m,k−1)|` in log space.
pub fn log_stirling_first_row(n: usize) -> Vec<f64> {
    let mut row = vec![f64::NEG_INFINITY; n + 1];
    row[0] = 0.0;
    for m in 0..n {
        let ln_m = (m as f64).ln();
        let mut next = vec![f64::NEG_INFINITY; n + 1];
        for k in 1..=m + 1 {
            next[k] = log_add(ln_m + row[k], row[k - 1]);
        }
        row = next;
    }
    row
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log P(k | α, n) = log|s(n,k)| + k log α + log Γ(α) − log Γ(α + n)`.
pub fn log_pmf_num_clusters(k: usize, alpha: f64, n: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::domain(format!("cluster count {k} outside 1..={n}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("concentration must be positive, got {alpha}")));
    }
    let s = log_stirling_first_row(n);
    Ok(s[k] + k as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n as f64))
}

/// Covariance of two coordinates of a Dirichlet t vector with scale entry `ψ`.
pub fn dirichlet_t_marginal_cov(psi: f64, alpha: f64, nu: f64) -> Result<f64> {
    if !(nu > 2.0) {
        return Err(Error::domain(format!("covariance needs nu > 2, got {nu}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::domain(format!("concentration must be nonnegative, got {alpha}")));
    }
    if psi == 0.0 {
        return Ok(0.0);
    }
    let same = nu / (nu - 2.0);
    let apart = nu * (2.0 * (ln_gamma(0.5 * (nu - 1.0)) - ln_gamma(0.5 * nu))).exp() / 2.0;
    let weight_same = if alpha.is_infinite() { 0.0 } else { 1.0 / (alpha + 1.0) };
    Ok(psi * (weight_same * same + (1.0 - weight_same) * apart))
}
