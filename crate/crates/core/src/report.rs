//! Posterior summaries: edge marginals, ROC tables, edge-count traces and
//! divisor outlier maps.

use std::io::Write;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_from_index, pair_index, Edge, Graph};

/// Per-pair inclusion counts over recorded graph states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgePosterior {
    p: usize,
    counts: Vec<u64>,
    total: u64,
}

impl EdgePosterior {
    pub fn new(p: usize) -> Self {
        EdgePosterior { p, counts: vec![0; num_pairs(p)], total: 0 }
    }

    pub fn from_counts(p: usize, counts: Vec<u64>, total: u64) -> Result<Self> {
        if counts.len() != num_pairs(p) {
            return Err(Error::dim(format!("{} counts for {} pairs", counts.len(), num_pairs(p))));
        }
        if counts.iter().any(|&c| c > total) {
            return Err(Error::domain("edge count exceeds the number of recorded states"));
        }
        Ok(EdgePosterior { p, counts, total })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn record(&mut self, g: &Graph) -> Result<()> {
        self.record_weighted(g, 1)
    }

    /// Records the same graph state `times` times.
    pub fn record_weighted(&mut self, g: &Graph, times: u64) -> Result<()> {
        if g.p() != self.p {
            return Err(Error::dim(format!("graph on {} vertices, posterior on {}", g.p(), self.p)));
        }
        for e in g.edges() {
            self.counts[pair_index(self.p, e)] += times;
        }
        self.total += times;
        Ok(())
    }

    pub fn prob(&self, e: Edge) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts[pair_index(self.p, e)] as f64 / self.total as f64
    }

    /// Probabilities in pair-index order.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Writes `j,k,prob` rows with 1-based vertices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "k", "prob"]).map_err(csv_err)?;
        for (idx, prob) in self.probabilities().into_iter().enumerate() {
            let e = pair_from_index(self.p, idx);
            w.write_record([(e.lo() + 1).to_string(), (e.hi() + 1).to_string(), prob.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `j,k,prob` format back as probabilities in pair-index order.
    pub fn read_probabilities_csv<R: std::io::Read>(input: R) -> Result<(usize, Vec<f64>)> {
        let mut rd = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let get = |i: usize| rec.get(i).ok_or_else(|| Error::Parse("short edge row".into()));
            let j: usize = get(0)?.trim().parse().map_err(|_| Error::Parse("bad j".into()))?;
            let k: usize = get(1)?.trim().parse().map_err(|_| Error::Parse("bad k".into()))?;
            let pr: f64 = get(2)?.trim().parse().map_err(|_| Error::Parse("bad prob".into()))?;
            if j == 0 || k == 0 {
                return Err(Error::Parse("vertices are 1-based".into()));
            }
            rows.push((Edge::new(j - 1, k - 1)?, pr));
        }
        let p = rows.iter().map(|(e, _)| e.hi() + 1).max().unwrap_or(0);
        let mut probs = vec![0.0; num_pairs(p)];
        for (e, pr) in rows {
            probs[pair_index(p, e)] = pr;
        }
        Ok((p, probs))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Edge marginals from a stream of graph snapshots.
pub fn accumulate_edges<'a, I: IntoIterator<Item = &'a Graph>>(p: usize, snapshots: I) -> Result<EdgePosterior> {
    let mut post = EdgePosterior::new(p);
    for g in snapshots {
        post.record(g)?;
    }
    Ok(post)
}

/// One threshold of an ROC table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocRow {
    pub epsilon: f64,
    pub tp: u64,
    pub fp: u64,
    pub tpr: f64,
    pub fpr: f64,
}

/// TP/FP counts pooled over replicates, one row per threshold.
///
/// A pair counts as positive when its posterior probability is at least `ε`,
/// so `ε = 0` calls everything positive and any `ε > 1` nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct RocTable {
    pub rows: Vec<RocRow>,
}

impl RocTable {
    /// `k + 1` evenly spaced thresholds on `[0, 1]`.
    pub fn uniform_grid(k: usize) -> Vec<f64> {
        (0..=k).map(|i| i as f64 / k as f64).collect()
    }

    /// Every distinct posterior value plus the endpoints, giving the exact
    /// empirical curve.
    pub fn distinct_grid(probs: &[Vec<f64>]) -> Vec<f64> {
        let mut g: Vec<f64> = probs.iter().flatten().copied().collect();
        g.push(0.0);
        g.push(1.0);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g.push(f64::INFINITY);
        g
    }

    /// Pools replicate `r`'s probabilities (pair-index order) against its
    /// true graph.
    pub fn compute(probs: &[Vec<f64>], truths: &[Graph], grid: &[f64]) -> Result<Self> {
        if probs.len() != truths.len() {
            return Err(Error::dim(format!("{} posteriors for {} true graphs", probs.len(), truths.len())));
        }
        let mut pos = 0u64;
        let mut neg = 0u64;
        for (pr, g) in probs.iter().zip(truths) {
            if pr.len() != num_pairs(g.p()) {
                return Err(Error::dim("posterior and true graph sizes differ"));
            }
            let e = g.num_edges() as u64;
            pos += e;
            neg += pr.len() as u64 - e;
        }
        let mut grid: Vec<f64> = grid.to_vec();
        grid.sort_by(f64::total_cmp);
        let rows = grid
            .into_iter()
            .map(|eps| {
                let (mut tp, mut fp) = (0u64, 0u64);
                for (pr, g) in probs.iter().zip(truths) {
                    for (idx, &v) in pr.iter().enumerate() {
                        if v >= eps {
                            if g.contains(pair_from_index(g.p(), idx)) {
                                tp += 1;
                            } else {
                                fp += 1;
                            }
                        }
                    }
                }
                RocRow {
                    epsilon: eps,
                    tp,
                    fp,
                    tpr: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
                    fpr: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
                }
            })
            .collect();
        Ok(RocTable { rows })
    }

    /// Trapezoidal area under the curve, closed with `(0,0)` and `(1,1)`.
    pub fn auc(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.fpr, r.tpr)).collect();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1)).sum()
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].tpr <= w[0].tpr && w[1].fpr <= w[0].fpr)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epsilon", "tp", "fp", "tpr", "fpr"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.epsilon.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.tpr.to_string(),
                r.fpr.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(iteration, edge count)` for every snapshot.
pub fn trace_edges<'a, I: IntoIterator<Item = &'a (u64, Graph)>>(snapshots: I) -> Vec<(u64, usize)> {
    snapshots.into_iter().map(|(it, g)| (*it, g.num_edges())).collect()
}

pub fn write_trace_csv<W: Write>(trace: &[(u64, usize)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "edges"]).map_err(csv_err)?;
    for (it, e) in trace {
        w.write_record([it.to_string(), e.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The `q`-quantile of the `Γ(ν/2, ν/2)` divisor prior.
pub fn divisor_quantile(nu: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("quantile level must lie in [0,1], got {q}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(f64::INFINITY);
    }
    let g = Gamma::new(0.5 * nu, 0.5 * nu).map_err(|e| Error::domain(e.to_string()))?;
    Ok(g.inverse_cdf(q))
}

/// Online fraction of snapshots in which each `τ_ij` lies below a threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct TauOutlierAccumulator {
    threshold: f64,
    below: DMatrix<f64>,
    sum: DMatrix<f64>,
    count: u64,
}

impl TauOutlierAccumulator {
    pub fn new(n: usize, p: usize, nu: f64, q: f64) -> Result<Self> {
        Ok(TauOutlierAccumulator {
            threshold: divisor_quantile(nu, q)?,
            below: DMatrix::zeros(n, p),
            sum: DMatrix::zeros(n, p),
            count: 0,
        })
    }

    pub fn from_parts(threshold: f64, below: DMatrix<f64>, sum: DMatrix<f64>, count: u64) -> Self {
        TauOutlierAccumulator { threshold, below, sum, count }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, tau: &DMatrix<f64>) -> Result<()> {
        if tau.shape() != self.below.shape() {
            return Err(Error::dim("divisor snapshot shape differs"));
        }
        for (b, &t) in self.below.iter_mut().zip(tau.iter()) {
            if t < self.threshold {
                *b += 1.0;
            }
        }
        self.sum += tau;
        self.count += 1;
        Ok(())
    }

    /// Counts of below-threshold snapshots (unnormalized).
    pub fn below_counts(&self) -> &DMatrix<f64> {
        &self.below
    }

    pub fn sums(&self) -> &DMatrix<f64> {
        &self.sum
    }

    pub fn probabilities(&self) -> DMatrix<f64> {
        &self.below / self.count.max(1) as f64
    }

    pub fn mean(&self) -> DMatrix<f64> {
        &self.sum / self.count.max(1) as f64
    }
}

/// Posterior probability that each `τ_ij` falls below the `q`-quantile of
/// its `Γ(ν/2, ν/2)` prior, over a list of snapshots.
pub fn tau_outlier_map(snapshots: &[DMatrix<f64>], nu: f64, q: f64) -> Result<DMatrix<f64>> {
    let first = snapshots.first().ok_or_else(|| Error::domain("no divisor snapshots"))?;
    let mut acc = TauOutlierAccumulator::new(first.nrows(), first.ncols(), nu, q)?;
    for s in snapshots {
        acc.push(s)?;
    }
    Ok(acc.probabilities())
}

/// Dense CSV without header.
pub fn write_dense_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
