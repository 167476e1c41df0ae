//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use robust_ggm::graph::{is_decomposable, num_pairs, pair_from_index, Graph, PerfectSequence};
use robust_ggm::hiw::{log_marginal_likelihood, posterior_params, GraphPrior, HiwParams};
use robust_ggm::linalg::SpdMatrix;
use robust_ggm::random::std_normal;

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, eps, 50)
}

/// `log ∫ exp(g)` over `[a, b]`, split into `pieces` panels around a grid
/// maximum so narrow peaks are resolved.
pub fn log_integrate<G: Fn(f64) -> f64>(g: G, a: f64, b: f64, pieces: usize) -> f64 {
    let grid = 4000;
    let peak = (0..=grid)
        .map(|i| g(a + (b - a) * i as f64 / grid as f64))
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let h = (b - a) / pieces as f64;
    let total: f64 = (0..pieces)
        .map(|k| {
            let lo = a + h * k as f64;
            adaptive_simpson(|x| (g(x) - peak).exp(), lo, lo + h, 1e-13)
        })
        .sum();
    peak + total.ln()
}

pub fn random_spd<R: Rng + ?Sized>(p: usize, rng: &mut R) -> SpdMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| std_normal(rng));
    SpdMatrix::new(&a * a.transpose() + DMatrix::identity(p, p) * 0.5).unwrap()
}

/// Random decomposable graph from `flips` random edge toggles that keep
/// decomposability.
pub fn random_decomposable<R: Rng + ?Sized>(p: usize, flips: usize, rng: &mut R) -> Graph {
    let mut g = Graph::empty(p);
    for _ in 0..flips {
        let e = pair_from_index(p, rng.random_range(0..num_pairs(p)));
        let h = if g.contains(e) { g.without_edge(e) } else { g.with_edge(e) };
        if is_decomposable(&h) {
            g = h;
        }
    }
    g
}

/// Every graph on `p` vertices, by bitmask over pair indices.
pub fn all_graphs(p: usize) -> Vec<Graph> {
    let m = num_pairs(p);
    (0..1u64 << m)
        .map(|mask| Graph::from_edges(p, (0..m).filter(|i| mask >> i & 1 == 1).map(|i| {
            let e = pair_from_index(p, i);
            (e.lo(), e.hi())
        }))
        .unwrap())
        .collect()
}

/// Exact posterior over decomposable graphs from the closed-form marginal
/// likelihood and the edge prior.
pub fn exact_graph_posterior(
    p: usize,
    n: usize,
    scatter: &DMatrix<f64>,
    prior: &HiwParams,
    graph_prior: Option<GraphPrior>,
) -> Vec<(Graph, f64)> {
    let post = posterior_params(prior, n, scatter).unwrap();
    let logs: Vec<(Graph, f64)> = all_graphs(p)
        .into_iter()
        .filter(is_decomposable)
        .map(|g| {
            let seq = PerfectSequence::from_graph(&g).unwrap();
            let mut l = log_marginal_likelihood(&seq, prior, &post, n, p).unwrap();
            if let Some(gp) = graph_prior {
                l += gp.log_prior(g.num_edges(), p);
            }
            (g, l)
        })
        .collect();
    let max = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|(_, l)| (l - max).exp()).sum();
    logs.into_iter().map(|(g, l)| (g, (l - max).exp() / z)).collect()
}

/// Sample mean and variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}
