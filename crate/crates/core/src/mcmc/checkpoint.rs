//! Plain-text chain checkpoints.
//!
//! Sections start with `[name]`. The file stores the full sampler state and
//! every accumulator, so resuming reproduces an uninterrupted run exactly.

use std::collections::HashMap;
use std::fmt::Display;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::chain::ChainRunner;
use super::{ChainConfig, TauState};
use crate::dp::DpState;
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::linalg::SpdMatrix;
use crate::parallel::Execution;
use crate::random::RngStream;
use crate::report::TauOutlierAccumulator;

const MAGIC: &str = "robust-ggm-checkpoint 1";

/// Identifies a configuration and data set; the execution mode is excluded
/// because it does not change results.
fn fingerprint(cfg: &ChainConfig, y: &DMatrix<f64>) -> String {
    let mut c = cfg.clone();
    c.execution = Execution::Parallel;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in y.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    format!("{}x{} {h:016x} {:?}", y.nrows(), y.ncols(), c)
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn write_matrix<W: Write>(m: &DMatrix<f64>, out: &mut W) -> Result<()> {
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        writeln!(out, "{}", join(&row))?;
    }
    Ok(())
}

fn graph_line(g: &Graph) -> String {
    g.edges().map(|e| format!("{}-{}", e.lo() + 1, e.hi() + 1)).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(r: &ChainRunner, mut out: W) -> Result<()> {
    let o = &mut out;
    writeln!(o, "{MAGIC}")?;
    writeln!(o, "[fingerprint]\n{}", fingerprint(&r.cfg, &r.y))?;
    writeln!(o, "[state]\n{} {} {} {}", r.iter, r.tau_updates, r.rng.seed(), r.rng.word_pos())?;
    writeln!(o, "[graph]\n{}", graph_line(r.graph.graph()))?;
    writeln!(o, "[theta]")?;
    if let Some(t) = &r.theta {
        write_matrix(t.matrix(), o)?;
    }
    writeln!(o, "[mu]\n{}", join(&r.mu))?;
    writeln!(o, "[tau]")?;
    match &r.tau {
        TauState::None => writeln!(o, "none")?,
        TauState::Fixed(t) => writeln!(o, "fixed\n{}", join(t))?,
        TauState::PerRow(t) => writeln!(o, "per-row\n{}", join(t))?,
        TauState::PerCell(m) => {
            writeln!(o, "per-cell")?;
            write_matrix(m, o)?;
        }
        TauState::Dirichlet(dp) => {
            writeln!(o, "dirichlet")?;
            dp.write_text(&mut *o)?;
        }
    }
    writeln!(o, "[edge_time]\n{}", join(&r.edge_time))?;
    writeln!(o, "[on_since]\n{}", join(&r.on_since))?;
    writeln!(o, "[trace]")?;
    for (i, e) in &r.trace {
        writeln!(o, "{i} {e}")?;
    }
    writeln!(o, "[graphs]")?;
    for (i, g) in &r.graphs {
        writeln!(o, "{i}: {}", graph_line(g))?;
    }
    writeln!(o, "[tau_snapshots]")?;
    for m in &r.tau_snapshots {
        write_matrix(m, o)?;
    }
    writeln!(o, "[outliers]")?;
    if let Some(acc) = &r.outliers {
        writeln!(o, "{} {}", acc.threshold(), acc.count())?;
        write_matrix(acc.below_counts(), o)?;
        write_matrix(acc.sums(), o)?;
    }
    writeln!(o, "[mu_sum]\n{}\n{}", r.mu_count, join(&r.mu_sum))?;
    writeln!(o, "[cluster_trace]\n{}", join(&r.cluster_trace))?;
    writeln!(o, "[alpha_trace]\n{}", join(&r.alpha_trace))?;
    writeln!(o, "[moves]\n{} {} {}", r.moves.proposed, r.moves.accepted, r.moves.not_decomposable)?;
    Ok(())
}

fn bad(m: impl Into<String>) -> Error {
    Error::Parse(format!("checkpoint: {}", m.into()))
}

struct Tokens<'a> {
    it: std::iter::Peekable<Box<dyn Iterator<Item = &'a str> + 'a>>,
}

impl<'a> Tokens<'a> {
    fn new(lines: &'a [String]) -> Self {
        let it: Box<dyn Iterator<Item = &'a str>> = Box::new(lines.iter().flat_map(|l| l.split_whitespace()));
        Tokens { it: it.peekable() }
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        self.it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("bad or missing {what}")))
    }

    fn is_empty(&mut self) -> bool {
        self.it.peek().is_none()
    }

    fn rest<T: std::str::FromStr>(&mut self, what: &str) -> Result<Vec<T>> {
        let mut v = Vec::new();
        while !self.is_empty() {
            v.push(self.next(what)?);
        }
        Ok(v)
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r: usize = self.next("rows")?;
        let c: usize = self.next("cols")?;
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                m[(i, j)] = self.next("matrix entry")?;
            }
        }
        Ok(m)
    }
}

fn parse_graph(p: usize, s: &str) -> Result<Graph> {
    let edges = s
        .split_whitespace()
        .map(|t| {
            let (a, b) = t.split_once('-').ok_or_else(|| bad("bad edge"))?;
            let a: usize = a.parse().map_err(|_| bad("bad edge"))?;
            let b: usize = b.parse().map_err(|_| bad("bad edge"))?;
            if a == 0 || b == 0 {
                return Err(bad("edges are 1-based"));
            }
            Edge::new(a - 1, b - 1).map(|e| (e.lo(), e.hi()))
        })
        .collect::<Result<Vec<_>>>()?;
    Graph::from_edges(p, edges)
}

/// Restores a runner saved by [`write_checkpoint`]. The configuration and
/// data must be the ones the checkpoint was written with (the execution mode
/// may differ).
pub fn read_checkpoint<R: BufRead>(input: R, cfg: ChainConfig, y: DMatrix<f64>) -> Result<ChainRunner> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| bad("empty file"))??;
    if first.trim() != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut sections: HashMap<String, Vec<String>> = HashMap::new();
    let mut current: Option<String> = None;
    for line in lines {
        let line = line?;
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.to_string());
            sections.entry(name.to_string()).or_default();
        } else if let Some(name) = &current {
            sections.get_mut(name).expect("section").push(line);
        } else {
            return Err(bad("content before the first section"));
        }
    }
    let section = |name: &str| sections.get(name).ok_or_else(|| bad(format!("missing section [{name}]")));

    let expected = fingerprint(&cfg, &y);
    if section("fingerprint")?.first().map(String::as_str) != Some(expected.as_str()) {
        return Err(Error::Config("checkpoint was written for a different configuration or data set".into()));
    }
    let mut r = ChainRunner::new(cfg, y)?;
    let (n, p) = r.y.shape();

    let mut t = Tokens::new(section("state")?);
    r.iter = t.next("iteration")?;
    r.tau_updates = t.next("update count")?;
    let seed: u64 = t.next("rng seed")?;
    let pos: u128 = t.next("rng position")?;
    if r.iter > r.total {
        return Err(bad("iteration beyond the chain length"));
    }
    r.set_main_rng(RngStream::from_position(seed, pos));

    r.set_graph(parse_graph(p, section("graph")?.join(" ").as_str())?)?;

    let theta = section("theta")?;
    r.theta = if theta.iter().all(|l| l.trim().is_empty()) {
        None
    } else {
        Some(SpdMatrix::new(Tokens::new(theta).matrix()?)?)
    };

    r.mu = Tokens::new(section("mu")?).rest("mean entry")?;
    if r.mu.len() != p {
        return Err(bad("mean length"));
    }

    let tau = section("tau")?;
    let kind = tau.first().map(|s| s.trim()).unwrap_or("");
    let body = &tau[1.min(tau.len())..];
    let state = match kind {
        "none" => TauState::None,
        "fixed" => TauState::Fixed(Tokens::new(body).rest("divisor")?),
        "per-row" => TauState::PerRow(Tokens::new(body).rest("divisor")?),
        "per-cell" => TauState::PerCell(Tokens::new(body).matrix()?),
        "dirichlet" => TauState::Dirichlet(DpState::read_text(body.join("\n").as_bytes(), r.cfg.alpha_prior)?),
        other => return Err(bad(format!("unknown divisor kind '{other}'"))),
    };
    if std::mem::discriminant(&state) != std::mem::discriminant(&r.tau) {
        return Err(bad("divisor kind does not match the model"));
    }
    let shape_ok = match &state {
        TauState::Fixed(v) | TauState::PerRow(v) => v.len() == n,
        TauState::PerCell(m) => m.shape() == (n, p),
        TauState::Dirichlet(dp) => dp.n() == n && dp.p() == p,
        TauState::None => true,
    };
    if !shape_ok {
        return Err(bad("divisor shape"));
    }
    r.tau = state;

    r.edge_time = Tokens::new(section("edge_time")?).rest("edge time")?;
    r.on_since = Tokens::new(section("on_since")?).rest("edge start")?;
    if r.edge_time.len() != r.on_since.len() || r.edge_time.len() != crate::graph::num_pairs(p) {
        return Err(bad("edge accumulator length"));
    }

    r.trace = section("trace")?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut t = l.split_whitespace();
            let i = t.next().and_then(|v| v.parse().ok());
            let e = t.next().and_then(|v| v.parse().ok());
            i.zip(e).ok_or_else(|| bad("trace line"))
        })
        .collect::<Result<_>>()?;

    r.graphs = section("graphs")?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (i, rest) = l.split_once(':').ok_or_else(|| bad("graph snapshot line"))?;
            Ok((i.trim().parse().map_err(|_| bad("snapshot iteration"))?, parse_graph(p, rest)?))
        })
        .collect::<Result<_>>()?;

    let mut t = Tokens::new(section("tau_snapshots")?);
    r.tau_snapshots.clear();
    while !t.is_empty() {
        r.tau_snapshots.push(t.matrix()?);
    }

    let mut t = Tokens::new(section("outliers")?);
    r.outliers = if t.is_empty() {
        None
    } else {
        let threshold: f64 = t.next("threshold")?;
        let count: u64 = t.next("count")?;
        let below = t.matrix()?;
        let sum = t.matrix()?;
        Some(TauOutlierAccumulator::from_parts(threshold, below, sum, count))
    };
    if r.outliers.is_some() != r.cfg.model.is_t() {
        return Err(bad("outlier accumulator does not match the model"));
    }

    let mut t = Tokens::new(section("mu_sum")?);
    r.mu_count = t.next("mean count")?;
    r.mu_sum = t.rest("mean sum")?;
    if r.mu_sum.len() != p {
        return Err(bad("mean sum length"));
    }
    r.cluster_trace = Tokens::new(section("cluster_trace")?).rest("cluster trace")?;
    r.alpha_trace = Tokens::new(section("alpha_trace")?).rest("alpha trace")?;
    let mut t = Tokens::new(section("moves")?);
    r.moves.proposed = t.next("proposed")?;
    r.moves.accepted = t.next("accepted")?;
    r.moves.not_decomposable = t.next("not decomposable")?;

    r.refresh_posterior()?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{run_chain, ModelKind, MuMode};

    fn data() -> DMatrix<f64> {
        let mut rng = RngStream::new(21);
        DMatrix::from_fn(30, 4, |_, _| crate::random::std_normal(&mut rng))
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let y = data();
        for model in ModelKind::ALL {
            let mut cfg = ChainConfig::new(model);
            cfg.edge_proposals = Some(1200);
            cfg.thin = 50;
            cfg.tau_snapshot_every = 3;
            cfg.mu_mode = MuMode::ApproxDraw;
            let whole = run_chain(cfg.clone(), &y).unwrap();

            let mut r = ChainRunner::new(cfg.clone(), y.clone()).unwrap();
            r.run_until(517).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&r, &mut buf).unwrap();
            drop(r);
            let resumed = read_checkpoint(buf.as_slice(), cfg, y.clone()).unwrap().finish().unwrap();

            assert_eq!(whole.edge_posterior, resumed.edge_posterior, "{model}");
            assert_eq!(whole.trace, resumed.trace);
            assert_eq!(whole.graphs, resumed.graphs);
            assert_eq!(whole.tau_snapshots, resumed.tau_snapshots);
            assert_eq!(whole.tau_outlier, resumed.tau_outlier);
            assert_eq!(whole.mu_mean, resumed.mu_mean);
            assert_eq!(whole.alpha_trace, resumed.alpha_trace);
            assert_eq!(whole.final_tau, resumed.final_tau);
            assert_eq!(whole.moves, resumed.moves);
        }
    }

    #[test]
    fn rejects_mismatched_config() {
        let y = data();
        let mut cfg = ChainConfig::new(ModelKind::ClassicalT);
        cfg.edge_proposals = Some(100);
        let mut r = ChainRunner::new(cfg.clone(), y.clone()).unwrap();
        r.run_until(50).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&r, &mut buf).unwrap();
        cfg.seed = 2;
        assert!(matches!(read_checkpoint(buf.as_slice(), cfg, y), Err(Error::Config(_))));
        assert!(read_checkpoint(&b"garbage"[..], ChainConfig::new(ModelKind::Gaussian), data()).is_err());
    }
}
