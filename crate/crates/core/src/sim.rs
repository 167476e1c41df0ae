//! Ground-truth generators for the simulation studies.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::graph::{write_edge_list, Graph};
use crate::linalg::{write_dense, SpdMatrix};
use crate::random::{sample_dirichlet_gamma_prior, sample_gamma, sample_mvn, MvnParam};

/// Parameters the data were generated from.
#[derive(Clone, Debug)]
pub struct Truth {
    pub graph: Graph,
    pub theta: SpdMatrix,
    pub mu: Vec<f64>,
    /// `n×p` divisors (all ones for normal data).
    pub tau: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub names: Vec<String>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>) -> Self {
        let names = (1..=y.ncols()).map(|j| format!("V{j}")).collect();
        Dataset { y, names, truth: None }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    /// CSV with a header row of variable names.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names).map_err(crate::report::csv_err)?;
        for i in 0..self.n() {
            w.write_record(self.y.row(i).iter().map(|v| v.to_string())).map_err(crate::report::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<prefix>.csv` and, when known, the truth sidecars
    /// `<prefix>.graph`, `<prefix>.theta`, `<prefix>.mu` and `<prefix>.tau`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let with = |ext: &str| -> Result<BufWriter<File>> {
            let mut path = prefix.as_os_str().to_owned();
            path.push(format!(".{ext}"));
            Ok(BufWriter::new(File::create(path)?))
        };
        self.write_csv(with("csv")?)?;
        if let Some(t) = &self.truth {
            write_edge_list(&t.graph, with("graph")?)?;
            write_dense(t.theta.matrix(), with("theta")?)?;
            write_dense(&DMatrix::from_row_slice(1, t.mu.len(), &t.mu), with("mu")?)?;
            write_dense(&t.tau, with("tau")?)?;
        }
        Ok(())
    }
}

/// Tridiagonal precision: `−1` off the diagonal, `3` on it except `2` at
/// both ends.
pub fn ar1_precision(p: usize) -> Result<(SpdMatrix, Graph)> {
    if p < 2 {
        return Err(Error::domain("AR(1) design needs p ≥ 2"));
    }
    let theta = DMatrix::from_fn(p, p, |j, k| {
        if j == k {
            if j == 0 || j == p - 1 { 2.0 } else { 3.0 }
        } else if j.abs_diff(k) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    Ok((SpdMatrix::new(theta)?, Graph::chain(p)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CliqueDesign {
    pub n_cliques: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub min_eig: f64,
}

impl Default for CliqueDesign {
    fn default() -> Self {
        CliqueDesign { n_cliques: 20, min_size: 2, max_size: 5, min_eig: 0.6 }
    }
}

/// Union of random cliques, `−1` on edges and `3c` on the diagonal with the
/// smallest `c ≥ 1` giving minimum eigenvalue `min_eig`.
///
/// The union need not be decomposable.
pub fn random_clique_graph<R: Rng + ?Sized>(p: usize, design: CliqueDesign, rng: &mut R) -> Result<(SpdMatrix, Graph)> {
    if design.min_size < 2 || design.min_size > design.max_size || design.max_size > p {
        return Err(Error::domain(format!(
            "clique sizes {}..={} invalid for p = {p}",
            design.min_size, design.max_size
        )));
    }
    // Overlapping cliques share edges.
    let mut edges = std::collections::BTreeSet::new();
    for _ in 0..design.n_cliques {
        let size = rng.random_range(design.min_size..=design.max_size);
        let nodes = sample_indices(rng, p, size).into_vec();
        for (a, &j) in nodes.iter().enumerate() {
            for &k in &nodes[a + 1..] {
                edges.insert((j.min(k), j.max(k)));
            }
        }
    }
    let graph = Graph::from_edges(p, edges)?;
    let mut off = DMatrix::zeros(p, p);
    for e in graph.edges() {
        off[(e.lo(), e.hi())] = -1.0;
        off[(e.hi(), e.lo())] = -1.0;
    }
    let lambda_min: f64 = SymmetricEigen::new(off.clone()).eigenvalues.min();
    // eig(3c·I + A) = 3c + eig(A).
    let c = ((design.min_eig - lambda_min) / 3.0).max(1.0);
    let theta = off + DMatrix::identity(p, p) * (3.0 * c);
    Ok((SpdMatrix::new(theta)?, graph))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SimKind {
    Normal,
    ClassicalT,
    AlternativeT,
    DirichletT,
}

impl SimKind {
    pub fn name(self) -> &'static str {
        match self {
            SimKind::Normal => "normal",
            SimKind::ClassicalT => "classical-t",
            SimKind::AlternativeT => "alternative-t",
            SimKind::DirichletT => "dirichlet-t",
        }
    }
}

impl std::str::FromStr for SimKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [SimKind::Normal, SimKind::ClassicalT, SimKind::AlternativeT, SimKind::DirichletT]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown data kind '{s}'")))
    }
}

/// `n` rows of `N(0, Θ⁻¹)`.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, theta: &SpdMatrix, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = theta.dim();
    let zero = DVector::zeros(p);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let row = sample_mvn(&zero, MvnParam::Precision(theta), rng)?;
        x.set_row(i, &row.transpose());
    }
    Ok(x)
}

/// Draws `Y_ij = μ_j + X_ij/√τ_ij` with divisors per `kind`.
pub fn sample_dataset<R: Rng + ?Sized>(
    kind: SimKind,
    n: usize,
    theta: &SpdMatrix,
    graph: &Graph,
    mu: &[f64],
    nu: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let p = theta.dim();
    if mu.len() != p || graph.p() != p {
        return Err(Error::dim("mean, graph and precision disagree on p"));
    }
    let th = theta.matrix();
    for j in 0..p {
        for k in j + 1..p {
            if (th[(j, k)] != 0.0) != graph.has_edge(j, k) {
                return Err(Error::domain("graph does not match the precision's zero pattern"));
            }
        }
    }
    let x = sample_latent(n, theta, rng)?;
    let mut tau = DMatrix::from_element(n, p, 1.0);
    for i in 0..n {
        match kind {
            SimKind::Normal => {}
            SimKind::ClassicalT => {
                let t = sample_gamma(0.5 * nu, 0.5 * nu, rng)?;
                tau.row_mut(i).fill(t);
            }
            SimKind::AlternativeT => {
                for j in 0..p {
                    tau[(i, j)] = sample_gamma(0.5 * nu, 0.5 * nu, rng)?;
                }
            }
            SimKind::DirichletT => {
                let (values, _) = sample_dirichlet_gamma_prior(p, alpha, nu, rng)?;
                for (j, v) in values.into_iter().enumerate() {
                    tau[(i, j)] = v;
                }
            }
        }
    }
    let y = DMatrix::from_fn(n, p, |i, j| mu[j] + x[(i, j)] / tau[(i, j)].sqrt());
    let mut ds = Dataset::new(y);
    ds.truth = Some(Truth { graph: graph.clone(), theta: theta.clone(), mu: mu.to_vec(), tau });
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contamination {
    pub n_events: usize,
    pub row_rate: f64,
    pub col_rate: f64,
    pub low: f64,
    pub high: f64,
    /// Divide by `√τ` instead of `τ`.
    pub sqrt: bool,
}

impl Default for Contamination {
    fn default() -> Self {
        Contamination { n_events: 10, row_rate: 10.0, col_rate: 10.0, low: 0.01, high: 0.2, sqrt: false }
    }
}

fn poisson_count<R: Rng + ?Sized>(rate: f64, cap: usize, rng: &mut R) -> Result<usize> {
    if rate <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(rate).map_err(|e| Error::domain(e.to_string()))?;
    Ok((d.sample(rng) as usize).min(cap))
}

/// Block contamination of latent data: each event picks a Poisson number of
/// rows and columns and assigns one shared uniform divisor to that
/// submatrix. Returns `(Y, τ)` with `Y_ij = μ_j + X_ij/τ_ij`.
pub fn contaminate<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    mu: &[f64],
    opts: Contamination,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if mu.len() != p {
        return Err(Error::dim("mean length differs from data"));
    }
    if !(opts.low > 0.0 && opts.low <= opts.high) {
        return Err(Error::domain("contamination range must satisfy 0 < low ≤ high"));
    }
    let mut tau = DMatrix::from_element(n, p, 1.0);
    for _ in 0..opts.n_events {
        let nr = poisson_count(opts.row_rate, n, rng)?;
        let nc = poisson_count(opts.col_rate, p, rng)?;
        let rows = sample_indices(rng, n, nr).into_vec();
        let cols = sample_indices(rng, p, nc).into_vec();
        let v = rng.random_range(opts.low..=opts.high);
        for &i in &rows {
            for &j in &cols {
                tau[(i, j)] = v;
            }
        }
    }
    let y = DMatrix::from_fn(n, p, |i, j| {
        let d = if opts.sqrt { tau[(i, j)].sqrt() } else { tau[(i, j)] };
        mu[j] + x[(i, j)] / d
    });
    Ok((y, tau))
}
