//! Undirected graphs, chordality testing and perfect clique sequences.
//!
//! Vertices are `0..p` internally; the edge-list text format is 1-based.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Unordered vertex pair stored as `(min, max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    lo: usize,
    hi: usize,
}

impl Edge {
    pub fn new(j: usize, k: usize) -> Result<Self> {
        if j == k {
            return Err(Error::domain(format!("self-loop on vertex {j}")));
        }
        Ok(Edge {
            lo: j.min(k),
            hi: j.max(k),
        })
    }

    #[inline]
    pub fn lo(self) -> usize {
        self.lo
    }

    #[inline]
    pub fn hi(self) -> usize {
        self.hi
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.lo + 1, self.hi + 1)
    }
}

/// Number of unordered pairs on `p` vertices.
#[inline]
pub fn num_pairs(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Position of `{j,k}` (j < k) in the lexicographic enumeration of pairs.
#[inline]
pub fn pair_index(p: usize, e: Edge) -> usize {
    let j = e.lo;
    j * (2 * p - j - 1) / 2 + (e.hi - j - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(p: usize, mut idx: usize) -> Edge {
    let mut j = 0;
    loop {
        let row = p - j - 1;
        if idx < row {
            return Edge {
                lo: j,
                hi: j + 1 + idx,
            };
        }
        idx -= row;
        j += 1;
    }
}

/// Simple undirected graph with a dense adjacency matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    p: usize,
    adj: Vec<bool>,
    n_edges: usize,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("p", &self.p)
            .field("edges", &self.edges().collect::<Vec<_>>())
            .finish()
    }
}

impl Graph {
    pub fn empty(p: usize) -> Self {
        Graph {
            p,
            adj: vec![false; p * p],
            n_edges: 0,
        }
    }

    pub fn complete(p: usize) -> Self {
        let mut g = Graph::empty(p);
        for j in 0..p {
            for k in j + 1..p {
                g.insert(j, k);
            }
        }
        g
    }

    /// Path `0 - 1 - ... - (p-1)`.
    pub fn chain(p: usize) -> Self {
        let mut g = Graph::empty(p);
        for j in 1..p {
            g.insert(j - 1, j);
        }
        g
    }

    pub fn from_edges<I>(p: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Graph::empty(p);
        for (j, k) in edges {
            let e = Edge::new(j, k)?;
            if e.hi >= p {
                return Err(Error::domain(format!("vertex {} out of range for p={p}", e.hi)));
            }
            if g.contains(e) {
                return Err(Error::domain(format!("duplicate edge {e}")));
            }
            g.insert(e.lo, e.hi);
        }
        Ok(g)
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.n_edges
    }

    #[inline]
    pub fn has_edge(&self, j: usize, k: usize) -> bool {
        self.adj[j * self.p + k]
    }

    #[inline]
    pub fn contains(&self, e: Edge) -> bool {
        self.has_edge(e.lo, e.hi)
    }

    /// Edges in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.p).flat_map(move |j| {
            (j + 1..self.p)
                .filter(move |&k| self.has_edge(j, k))
                .map(move |k| Edge { lo: j, hi: k })
        })
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.adj[v * self.p..(v + 1) * self.p];
        row.iter()
            .enumerate()
            .filter_map(|(k, &on)| if on { Some(k) } else { None })
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).count()
    }

    fn insert(&mut self, j: usize, k: usize) {
        if !self.adj[j * self.p + k] {
            self.adj[j * self.p + k] = true;
            self.adj[k * self.p + j] = true;
            self.n_edges += 1;
        }
    }

    fn erase(&mut self, j: usize, k: usize) {
        if self.adj[j * self.p + k] {
            self.adj[j * self.p + k] = false;
            self.adj[k * self.p + j] = false;
            self.n_edges -= 1;
        }
    }

    pub fn with_edge(&self, e: Edge) -> Graph {
        let mut g = self.clone();
        g.insert(e.lo, e.hi);
        g
    }

    pub fn without_edge(&self, e: Edge) -> Graph {
        let mut g = self.clone();
        g.erase(e.lo, e.hi);
        g
    }

    /// Applies a move; the caller guarantees the move is legal for `self`.
    pub fn toggled(&self, mv: EdgeMove) -> Graph {
        match mv.kind {
            MoveKind::Add => self.with_edge(mv.edge),
            MoveKind::Remove => self.without_edge(mv.edge),
        }
    }

    /// True when every pair of distinct vertices in `set` is adjacent.
    pub fn is_clique(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(a, &u)| set[a + 1..].iter().all(|&v| self.has_edge(u, v)))
    }
}

/// Maximum cardinality search visiting order; ties go to the smallest index.
pub fn max_cardinality_search(g: &Graph) -> Vec<usize> {
    let p = g.p();
    let mut weight = vec![0usize; p];
    let mut visited = vec![false; p];
    let mut order = Vec::with_capacity(p);
    for _ in 0..p {
        let mut best = usize::MAX;
        for v in 0..p {
            if !visited[v] && (best == usize::MAX || weight[v] > weight[best]) {
                best = v;
            }
        }
        visited[best] = true;
        order.push(best);
        for u in g.neighbors(best) {
            if !visited[u] {
                weight[u] += 1;
            }
        }
    }
    order
}

fn earlier_neighbors(g: &Graph, order: &[usize], pos: &[usize], i: usize) -> Vec<usize> {
    let v = order[i];
    let mut pa: Vec<usize> = g.neighbors(v).filter(|&u| pos[u] < i).collect();
    pa.sort_unstable();
    pa
}

fn positions(order: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; order.len()];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    pos
}

/// Chordality test by maximum cardinality search.
///
/// Returns a perfect elimination order (reverse visiting order) when `g` is
/// decomposable and `None` otherwise.
pub fn mcs_decomposable(g: &Graph) -> Option<Vec<usize>> {
    let order = max_cardinality_search(g);
    let pos = positions(&order);
    for i in 0..order.len() {
        let pa = earlier_neighbors(g, &order, &pos, i);
        if let Some(&follower) = pa.iter().max_by_key(|&&u| pos[u]) {
            if pa.iter().any(|&w| w != follower && !g.has_edge(w, follower)) {
                return None;
            }
        }
    }
    let mut peo = order;
    peo.reverse();
    Some(peo)
}

pub fn is_decomposable(g: &Graph) -> bool {
    mcs_decomposable(g).is_some()
}

/// Cliques `C_1..C_m` with separators `S_2..S_m` satisfying running intersection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerfectSequence {
    p: usize,
    cliques: Vec<Vec<usize>>,
    separators: Vec<Vec<usize>>,
}

impl PerfectSequence {
    /// Builds the sequence from an MCS ordering.
    pub fn from_graph(g: &Graph) -> Result<Self> {
        if g.p() == 0 {
            return Err(Error::domain("graph has no vertices"));
        }
        let order = max_cardinality_search(g);
        let pos = positions(&order);
        let mut cliques: Vec<Vec<usize>> = Vec::new();
        let mut separators: Vec<Vec<usize>> = Vec::new();
        let mut prev_len = 0usize;
        for i in 0..order.len() {
            let v = order[i];
            let pa = earlier_neighbors(g, &order, &pos, i);
            if let Some(&follower) = pa.iter().max_by_key(|&&u| pos[u]) {
                if pa.iter().any(|&w| w != follower && !g.has_edge(w, follower)) {
                    return Err(Error::NotDecomposable);
                }
            }
            if i > 0 && pa.len() == prev_len + 1 {
                let current = cliques.last_mut().expect("clique started");
                current.push(v);
                current.sort_unstable();
            } else {
                let mut c = pa.clone();
                c.push(v);
                c.sort_unstable();
                if i > 0 {
                    separators.push(pa.clone());
                }
                cliques.push(c);
            }
            prev_len = pa.len();
        }
        Ok(PerfectSequence {
            p: g.p(),
            cliques,
            separators,
        })
    }

    /// Assembles a sequence from explicit parts, checking running intersection.
    pub fn from_parts(p: usize, cliques: Vec<Vec<usize>>, separators: Vec<Vec<usize>>) -> Result<Self> {
        let mut seq = PerfectSequence {
            p,
            cliques,
            separators,
        };
        for c in seq.cliques.iter_mut().chain(seq.separators.iter_mut()) {
            c.sort_unstable();
        }
        if !seq.satisfies_running_intersection() {
            return Err(Error::domain("sequence violates running intersection"));
        }
        Ok(seq)
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    /// `S_2..S_m`; one entry per clique after the first.
    pub fn separators(&self) -> &[Vec<usize>] {
        &self.separators
    }

    /// Separator preceding clique `i` (empty for the first clique).
    pub fn separator(&self, i: usize) -> &[usize] {
        if i == 0 {
            &[]
        } else {
            &self.separators[i - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    /// Graph whose edges are all pairs inside some clique.
    pub fn to_graph(&self) -> Graph {
        let mut g = Graph::empty(self.p);
        for c in &self.cliques {
            for (a, &u) in c.iter().enumerate() {
                for &v in &c[a + 1..] {
                    g.insert(u, v);
                }
            }
        }
        g
    }

    /// Checks `S_i = C_i ∩ (C_1 ∪ … ∪ C_{i-1})`, `S_i ⊆ C_j` for some `j < i`,
    /// and that the cliques cover every vertex.
    pub fn satisfies_running_intersection(&self) -> bool {
        if self.cliques.is_empty() || self.separators.len() + 1 != self.cliques.len() {
            return false;
        }
        let mut seen = vec![false; self.p];
        for &v in &self.cliques[0] {
            if v >= self.p {
                return false;
            }
            seen[v] = true;
        }
        for i in 1..self.cliques.len() {
            let c = &self.cliques[i];
            if c.iter().any(|&v| v >= self.p) {
                return false;
            }
            let mut inter: Vec<usize> = c.iter().copied().filter(|&v| seen[v]).collect();
            inter.sort_unstable();
            if inter != self.separators[i - 1] {
                return false;
            }
            if !self.cliques[..i].iter().any(|prev| is_subset(&inter, prev)) {
                return false;
            }
            for &v in c {
                seen[v] = true;
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Indices of cliques that contain both endpoints of `e`.
    pub fn cliques_containing(&self, e: Edge) -> Vec<usize> {
        self.cliques
            .iter()
            .enumerate()
            .filter(|(_, c)| c.binary_search(&e.lo).is_ok() && c.binary_search(&e.hi).is_ok())
            .map(|(i, _)| i)
            .collect()
    }
}

/// `a ⊆ b` for sorted slices.
pub fn is_subset(a: &[usize], b: &[usize]) -> bool {
    let mut it = b.iter();
    'outer: for x in a {
        for y in it.by_ref() {
            if y == x {
                continue 'outer;
            }
            if y > x {
                return false;
            }
        }
        return false;
    }
    true
}

fn without(set: &[usize], drop: &[usize]) -> Vec<usize> {
    set.iter().copied().filter(|v| !drop.contains(v)).collect()
}

/// Pieces of a clique split by removing one edge it contains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemovalSplit {
    /// Index of the single clique containing the edge.
    pub clique_index: usize,
    /// `C_q`.
    pub clique: Vec<usize>,
    /// `S_{q2} = C_q ∖ {j,k}`.
    pub separator: Vec<usize>,
    /// First piece placed after `S_q` (contains the endpoint not in `S_q`'s complement).
    pub first: Vec<usize>,
    /// Second piece.
    pub second: Vec<usize>,
    /// Perfect sequence of the graph with the edge removed.
    pub sequence: PerfectSequence,
}

/// Result of [`removal_decomposition`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Removal {
    Split(RemovalSplit),
    /// The edge lies in more than one clique; removing it breaks decomposability.
    NotApplicable,
}

/// Splices the perfect sequence for `G − {j,k}` from that of `G`.
pub fn removal_decomposition(seq: &PerfectSequence, e: Edge) -> Result<Removal> {
    let holders = seq.cliques_containing(e);
    match holders.len() {
        0 => return Err(Error::EdgeNotPresent(e.lo, e.hi)),
        1 => {}
        _ => return Ok(Removal::NotApplicable),
    }
    let q = holders[0];
    let cq = seq.cliques[q].clone();
    let sq = seq.separator(q).to_vec();
    let (j, k) = if sq.binary_search(&e.hi).is_err() {
        (e.lo, e.hi)
    } else if sq.binary_search(&e.lo).is_err() {
        (e.hi, e.lo)
    } else {
        // Both endpoints in S_q would put the edge in an earlier clique as well.
        return Ok(Removal::NotApplicable);
    };
    let first = without(&cq, &[k]);
    let second = without(&cq, &[j]);
    let sep = without(&cq, &[j, k]);

    let mut cliques: Vec<Vec<usize>> = seq.cliques[..q].to_vec();
    let mut seps: Vec<Vec<usize>> = seq.separators[..q.saturating_sub(1)].to_vec();
    // `first == S_q` means it is contained in an earlier clique.
    let first_kept = q == 0 || first != sq;
    if first_kept {
        if q > 0 {
            seps.push(sq.clone());
        }
        cliques.push(first.clone());
    }
    // `second == S_{q+1}` means it is contained in C_{q+1}, which then inherits S_{q2}.
    let next_sep = seq.separators.get(q);
    let second_kept = next_sep != Some(&second);
    seps.push(sep.clone());
    if second_kept {
        cliques.push(second.clone());
        if let Some(ns) = next_sep {
            seps.push(ns.clone());
        }
    }
    cliques.extend_from_slice(&seq.cliques[q + 1..]);
    seps.extend_from_slice(seq.separators.get(q + 1..).unwrap_or(&[]));

    let candidate = PerfectSequence {
        p: seq.p,
        cliques,
        separators: seps,
    };
    let maximal = |piece: &Vec<usize>, kept: bool| {
        !kept
            || candidate
                .cliques
                .iter()
                .filter(|c| *c != piece)
                .all(|c| !is_subset(piece, c))
    };
    let sequence = if candidate.separators.len() + 1 == candidate.cliques.len()
        && maximal(&first, first_kept)
        && maximal(&second, second_kept)
        && candidate.satisfies_running_intersection()
    {
        candidate
    } else {
        PerfectSequence::from_graph(&seq.to_graph().without_edge(e))?
    };
    Ok(Removal::Split(RemovalSplit {
        clique_index: q,
        clique: cq,
        separator: sep,
        first,
        second,
        sequence,
    }))
}

/// A decomposable graph with a lazily rebuilt perfect sequence.
///
/// Single-edge moves are validated locally from the common neighbourhood of
/// the edge's endpoints; the perfect sequence is recomputed only when asked
/// for after the graph has changed.
#[derive(Clone, Debug)]
pub struct DecomposableGraph {
    graph: Graph,
    seq: Option<PerfectSequence>,
}

impl PartialEq for DecomposableGraph {
    fn eq(&self, other: &Self) -> bool {
        self.graph == other.graph
    }
}

impl Eq for DecomposableGraph {}

impl DecomposableGraph {
    pub fn new(graph: Graph) -> Result<Self> {
        let seq = PerfectSequence::from_graph(&graph)?;
        Ok(DecomposableGraph { graph, seq: Some(seq) })
    }

    pub fn empty(p: usize) -> Self {
        DecomposableGraph::new(Graph::empty(p)).expect("empty graph is decomposable")
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Perfect sequence of the current graph, rebuilt if stale.
    pub fn sequence(&mut self) -> &PerfectSequence {
        if self.seq.is_none() {
            let seq = PerfectSequence::from_graph(&self.graph).expect("graph kept decomposable");
            self.seq = Some(seq);
        }
        self.seq.as_ref().expect("just filled")
    }

    pub fn p(&self) -> usize {
        self.graph.p()
    }

    /// Separator `N(j) ∩ N(k)` of the clique that holds the edge after an add
    /// or before a remove, when the move keeps the graph decomposable.
    pub fn move_separator(&self, mv: EdgeMove) -> Option<Vec<usize>> {
        move_separator(&self.graph, mv)
    }

    /// Applies a move already validated by [`DecomposableGraph::move_separator`].
    pub fn apply(&mut self, mv: EdgeMove) {
        match mv.kind {
            MoveKind::Add => self.graph.insert(mv.edge.lo, mv.edge.hi),
            MoveKind::Remove => self.graph.erase(mv.edge.lo, mv.edge.hi),
        }
        self.seq = None;
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }
}

/// Common neighbours of `j` and `k`, in increasing order.
pub fn common_neighbors(g: &Graph, j: usize, k: usize) -> Vec<usize> {
    (0..g.p()).filter(|&v| g.has_edge(j, v) && g.has_edge(k, v)).collect()
}

/// For a decomposable `g`, returns `S = N(j) ∩ N(k)` when flipping the edge
/// keeps the graph decomposable, and `None` otherwise.
///
/// Removing `{j,k}` is valid iff the edge lies in a single clique, i.e. `S` is
/// complete; that clique is then `S ∪ {j,k}`. Adding `{j,k}` is valid iff `S`
/// separates `j` from `k`: a path avoiding `S` would close a chordless cycle.
/// Moves that do not match the current graph (adding a present edge, removing
/// an absent one) return `None`.
pub fn move_separator(g: &Graph, mv: EdgeMove) -> Option<Vec<usize>> {
    let (j, k) = (mv.edge.lo, mv.edge.hi);
    let present = g.has_edge(j, k);
    match mv.kind {
        MoveKind::Remove => {
            if !present {
                return None;
            }
            let s = common_neighbors(g, j, k);
            g.is_clique(&s).then_some(s)
        }
        MoveKind::Add => {
            if present {
                return None;
            }
            let s = common_neighbors(g, j, k);
            let p = g.p();
            let mut blocked = vec![false; p];
            for &v in &s {
                blocked[v] = true;
            }
            blocked[j] = true;
            let mut stack = vec![j];
            while let Some(u) = stack.pop() {
                for w in g.neighbors(u) {
                    if w == k {
                        return None;
                    }
                    if !blocked[w] {
                        blocked[w] = true;
                        stack.push(w);
                    }
                }
            }
            Some(s)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Add,
    Remove,
}

/// A single-edge flip proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeMove {
    pub kind: MoveKind,
    pub edge: Edge,
}

/// Proposal weights over vertex pairs.
#[derive(Clone, Debug)]
pub struct PairWeights {
    p: usize,
    cumulative: Vec<f64>,
}

impl PairWeights {
    /// `weights` is indexed by [`pair_index`].
    pub fn new(p: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != num_pairs(p) {
            return Err(Error::dim(format!(
                "expected {} pair weights, got {}",
                num_pairs(p),
                weights.len()
            )));
        }
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(weights.len());
        for &w in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::domain(format!("invalid proposal weight {w}")));
            }
            acc += w;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::domain("proposal weights have zero total mass"));
        }
        Ok(PairWeights { p, cumulative })
    }

    /// Weights from the absolute values of the upper triangle of a symmetric matrix.
    pub fn from_abs_matrix(m: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let p = m.nrows();
        let mut w = Vec::with_capacity(num_pairs(p));
        for j in 0..p {
            for k in j + 1..p {
                w.push(m[(j, k)].abs());
            }
        }
        PairWeights::new(p, &w)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1)
    }
}

/// Picks a vertex pair and flips its presence.
pub fn propose_edge_move<R: Rng + ?Sized>(
    g: &Graph,
    rng: &mut R,
    weights: Option<&PairWeights>,
) -> Result<EdgeMove> {
    let p = g.p();
    if p < 2 {
        return Err(Error::domain("edge moves need at least two vertices"));
    }
    let idx = match weights {
        Some(w) => {
            if w.p() != p {
                return Err(Error::dim("proposal weights built for a different p"));
            }
            w.draw(rng)
        }
        None => rng.random_range(0..num_pairs(p)),
    };
    let edge = pair_from_index(p, idx);
    let kind = if g.contains(edge) {
        MoveKind::Remove
    } else {
        MoveKind::Add
    };
    Ok(EdgeMove { kind, edge })
}

/// Writes `p=<int>` followed by one 1-based `j k` line per edge.
pub fn write_edge_list<W: Write>(g: &Graph, mut w: W) -> Result<()> {
    writeln!(w, "p={}", g.p())?;
    for e in g.edges() {
        writeln!(w, "{} {}", e.lo + 1, e.hi + 1)?;
    }
    Ok(())
}

pub fn read_edge_list<R: BufRead>(r: R) -> Result<Graph> {
    let mut lines = r.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                let t = line.trim();
                if !t.is_empty() {
                    break t.to_string();
                }
            }
            None => return Err(Error::Parse("missing p=<int> header".into())),
        }
    };
    let p: usize = header
        .strip_prefix("p=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad header '{header}'")))?;
    let mut edges = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let mut it = t.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            let v: usize = s
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad edge line '{t}'")))?;
            if v == 0 || v > p {
                return Err(Error::Parse(format!("vertex {v} out of range 1..={p}")));
            }
            Ok(v - 1)
        };
        let j = parse(it.next())?;
        let k = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Parse(format!("bad edge line '{t}'")));
        }
        edges.push((j, k));
    }
    Graph::from_edges(p, edges)
}
