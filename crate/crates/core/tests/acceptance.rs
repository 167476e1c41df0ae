//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed. With `ACCEPTANCE_STRICT=1` the process exits non-zero if any
//! criterion fails.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use common::{exact_graph_posterior, log_integrate, random_decomposable, random_spd};
use nalgebra::DMatrix;
use robust_ggm::dp::{dirichlet_t_marginal_cov, log_pmf_num_clusters};
use robust_ggm::experiment::{run_study, study_roc, Replicate, SimDesign};
use robust_ggm::graph::{Graph, PerfectSequence};
use robust_ggm::hiw::{log_h, log_ml_ratio_edge, weighted_scatter, GraphPrior, HiwParams, TauRef};
use robust_ggm::linalg::SpdMatrix;
use robust_ggm::mcmc::{run_chain, weighted_mean, ChainConfig, ChainRunner, ModelKind, MuMode};
use robust_ggm::parallel::Execution;
use robust_ggm::random::{sample_dirichlet_gamma_prior, sample_sqrt_gamma, std_normal, RngStream, SqrtGammaParams};
use robust_ggm::sim::{sample_dataset, SimKind};
use statrs::distribution::{ChiSquared, ContinuousCDF};

// Tolerances and sizes.
const C1_GRAPHS: usize = 100;
const C1_TOL: f64 = 1e-9;
const C2_PROPOSALS: u64 = 1_000_000;
const C2_TV: f64 = 0.02;
const C3_DRAWS: usize = 100_000;
const C3_SE: f64 = 3.0;
const C4_DRAWS: usize = 100_000;
const C4_P_VALUE: f64 = 0.01;
const C5_REPLICATES: usize = 25;
const C5_PROPOSALS: u64 = 100_000;
const C5_MARGIN: f64 = 0.03;
const C5_NORMAL_BAND: f64 = 0.05;
const C6_REPLICATES: usize = 5;
const C6_PROPOSALS: u64 = 300_000;
const C7_FACTOR: f64 = 3.0;
const C7_PROPOSALS: u64 = 300_000;
const C8_PROPOSALS: u64 = 300_000;
const C8_REL: f64 = 0.01;
const C9_DRAWS: usize = 10_000_000;
const C9_REL: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn run(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let in_time = took <= limit;
    let pass = v.pass && in_time;
    println!(
        "{} [{id}] {name}: {}; {:.1}s (limit {}s{})",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", exceeded" }
    );
    pass
}

fn c1_normalizing_constants() -> Verdict {
    let mut rng = RngStream::new(101);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..C1_GRAPHS {
        let p = 2 + i % 5;
        let g = random_decomposable(p, 60, &mut rng);
        let g = if g.num_edges() == 0 { Graph::chain(p) } else { g };
        let prior = HiwParams::new(1.0 + (i % 4) as f64, random_spd(p, &mut rng)).unwrap();
        let post = HiwParams::new(prior.delta() + 15.0, random_spd(p, &mut rng)).unwrap();
        let seq = PerfectSequence::from_graph(&g).unwrap();
        for e in g.edges() {
            if seq.cliques_containing(e).len() != 1 {
                continue;
            }
            let without = PerfectSequence::from_graph(&g.without_edge(e)).unwrap();
            let oracle = (log_h(&seq, prior.delta(), prior.phi()).unwrap()
                - log_h(&seq, post.delta(), post.phi()).unwrap())
                - (log_h(&without, prior.delta(), prior.phi()).unwrap()
                    - log_h(&without, post.delta(), post.phi()).unwrap());
            let fast = log_ml_ratio_edge(&seq, e, &prior, &post).unwrap();
            worst = worst.max((fast - oracle).abs());
            checked += 1;
        }
    }
    Verdict {
        pass: worst <= C1_TOL && checked > 0,
        detail: format!("{checked} edges on {C1_GRAPHS} graphs, max |diff| {worst:.2e} (tol {C1_TOL:.0e})"),
    }
}

fn c2_exact_posterior() -> Verdict {
    let mut rng = RngStream::new(202);
    let (theta, g) = robust_ggm::sim::ar1_precision(3).unwrap();
    let ds = sample_dataset(SimKind::Normal, 20, &theta, &g, &[0.0; 3], 3.0, 1.0, &mut rng).unwrap();
    let mut cfg = ChainConfig::new(ModelKind::Gaussian);
    cfg.edge_proposals = Some(C2_PROPOSALS);
    cfg.burn_in_frac = 0.01;
    cfg.seed = 2;
    let burn = cfg.burn_in(3);
    let mut runner = ChainRunner::new(cfg.clone(), ds.y.clone()).unwrap();
    runner.run_until(burn).unwrap();
    let mut freq: HashMap<Graph, u64> = HashMap::new();
    while !runner.is_finished() {
        let next = runner.iteration() + 1;
        runner.run_until(next).unwrap();
        *freq.entry(runner.graph().clone()).or_default() += 1;
    }
    let recorded: u64 = freq.values().sum();
    let mu = weighted_mean(&ds.y, TauRef::Ones).unwrap();
    let scatter = weighted_scatter(&ds.y, TauRef::Ones, &mu).unwrap();
    let prior = HiwParams::new(cfg.delta, SpdMatrix::scaled_identity(3, cfg.phi_scale_for(3))).unwrap();
    let exact = exact_graph_posterior(3, 20, &scatter, &prior, Some(GraphPrior::new(cfg.d).unwrap()));
    let tv = exact
        .iter()
        .map(|(g, p)| (freq.get(g).copied().unwrap_or(0) as f64 / recorded as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    Verdict {
        pass: exact.len() == 8 && tv <= C2_TV,
        detail: format!("{} graphs enumerated, TV distance {tv:.4} (tol {C2_TV})", exact.len()),
    }
}

/// Raw moments `E[τ^k]`, `k = 1..4`, by quadrature in `s = √τ`.
fn sqrt_gamma_raw_moments(shape: f64, rate: f64, tilt: f64) -> [f64; 4] {
    let c = 2.0 * shape - 1.0;
    let logf = |s: f64| if s <= 0.0 { f64::NEG_INFINITY } else { c * s.ln() - rate * s * s - tilt * s };
    let hi = 10.0 * (1.0 + (shape / rate).sqrt() + tilt.abs() / rate);
    let z = log_integrate(logf, 0.0, hi, 64);
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let pow = 2.0 * (k + 1) as f64;
        *o = (log_integrate(|s| logf(s) + pow * s.ln(), 0.0, hi, 64) - z).exp();
    }
    out
}

fn c3_sqrt_gamma() -> Verdict {
    let mut rng = RngStream::new(303);
    let mut worst = 0.0f64;
    let mut worst_cell = String::new();
    let mut cells = 0;
    for &shape in &[0.75, 2.5, 10.0] {
        for &rate in &[0.2, 1.0, 5.0] {
            for &tilt in &[-4.0, -1.0, 0.0, 1.0, 4.0] {
                let [m1, m2, m3, m4] = sqrt_gamma_raw_moments(shape, rate, tilt);
                let var = m2 - m1 * m1;
                let mu4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1.powi(4);
                let params = SqrtGammaParams::new(shape, rate, tilt).unwrap();
                let draws: Vec<f64> = (0..C3_DRAWS).map(|_| sample_sqrt_gamma(params, &mut rng).unwrap()).collect();
                let (em, ev) = common::mean_var(&draws);
                let n = C3_DRAWS as f64;
                let z_mean = (em - m1).abs() / (var / n).sqrt();
                let z_var = (ev - var).abs() / ((mu4 - var * var) / n).sqrt();
                if z_mean.max(z_var) > worst {
                    worst = z_mean.max(z_var);
                    worst_cell = format!("({shape},{rate},{tilt}) z_mean {z_mean:.2} z_var {z_var:.2}");
                }
                cells += 1;
            }
        }
    }
    Verdict {
        pass: worst <= C3_SE,
        detail: format!("{cells} cells, worst deviation {worst:.2} standard errors at {worst_cell} (tol {C3_SE})"),
    }
}

fn c4_dp_prior() -> Verdict {
    let mut rng = RngStream::new(404);
    let mut min_p = 1.0f64;
    let mut parts = Vec::new();
    for &(p, alpha) in &[(5usize, 1.0), (10, 0.5), (10, 5.0)] {
        let mut counts = vec![0u64; p + 1];
        for _ in 0..C4_DRAWS {
            let (_, labels) = sample_dirichlet_gamma_prior(p, alpha, 3.0, &mut rng).unwrap();
            counts[labels.iter().max().unwrap() + 1] += 1;
        }
        let n = C4_DRAWS as f64;
        // Pool sparse bins so every expected count is at least 5.
        let mut bins: Vec<(f64, f64)> = Vec::new();
        let mut acc = (0.0, 0.0);
        for (k, &count) in counts.iter().enumerate().skip(1) {
            acc.0 += count as f64;
            acc.1 += n * log_pmf_num_clusters(k, alpha, p).unwrap().exp();
            if acc.1 >= 5.0 {
                bins.push(acc);
                acc = (0.0, 0.0);
            }
        }
        if acc.1 > 0.0 {
            match bins.last_mut() {
                Some(last) => {
                    last.0 += acc.0;
                    last.1 += acc.1;
                }
                None => bins.push(acc),
            }
        }
        let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let df = (bins.len() - 1) as f64;
        let pv = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
        min_p = min_p.min(pv);
        parts.push(format!("(p={p},α={alpha}) p-value {pv:.3}"));
    }
    Verdict { pass: min_p > C4_P_VALUE, detail: format!("{} (min {C4_P_VALUE})", parts.join(", ")) }
}

fn ar1_config(model: ModelKind, proposals: u64) -> ChainConfig {
    let mut cfg = ChainConfig::new(model);
    cfg.edge_proposals = Some(proposals);
    cfg.mu_mode = MuMode::Known;
    cfg
}

fn c5_roc_ordering() -> Verdict {
    let mut auc: HashMap<(SimKind, ModelKind), f64> = HashMap::new();
    for (d, kind) in [SimKind::Normal, SimKind::ClassicalT, SimKind::AlternativeT].into_iter().enumerate() {
        let design = SimDesign::ar1(10, 50, kind);
        for model in ModelKind::ALL {
            let cfg = ar1_config(model, C5_PROPOSALS);
            let reps = run_study(&design, &cfg, 500 + d as u64, C5_REPLICATES, Execution::Parallel).unwrap();
            auc.insert((kind, model), study_roc(&reps).unwrap().auc());
        }
    }
    use ModelKind::*;
    let a = |k, m| auc[&(k, m)];
    let classical_ok = a(SimKind::ClassicalT, ClassicalT) - a(SimKind::ClassicalT, Gaussian) >= C5_MARGIN
        && a(SimKind::ClassicalT, DirichletT) - a(SimKind::ClassicalT, Gaussian) >= C5_MARGIN;
    let alternative_ok = a(SimKind::AlternativeT, AlternativeT) - a(SimKind::AlternativeT, ClassicalT) >= C5_MARGIN
        && a(SimKind::AlternativeT, DirichletT) - a(SimKind::AlternativeT, ClassicalT) >= C5_MARGIN;
    let normal_ok = ModelKind::ALL
        .iter()
        .all(|&m| (a(SimKind::Normal, m) - a(SimKind::Normal, Gaussian)).abs() <= C5_NORMAL_BAND);
    let row = |k: SimKind| {
        ModelKind::ALL.iter().map(|&m| format!("{}={:.3}", m.name(), a(k, m))).collect::<Vec<_>>().join(" ")
    };
    Verdict {
        pass: classical_ok && alternative_ok && normal_ok,
        detail: format!(
            "AUC normal[{}] classical-t[{}] alternative-t[{}]; checks normal={} classical={} alternative={}",
            row(SimKind::Normal),
            row(SimKind::ClassicalT),
            row(SimKind::AlternativeT),
            normal_ok,
            classical_ok,
            alternative_ok
        ),
    }
}

fn mean_clusters(reps: &[Replicate]) -> f64 {
    let all: Vec<f64> = reps.iter().flat_map(|r| r.output.cluster_trace.iter().copied()).collect();
    all.iter().sum::<f64>() / all.len() as f64
}

fn c6_dirichlet_adaptivity() -> Verdict {
    let cfg = ar1_config(ModelKind::DirichletT, C6_PROPOSALS);
    let classical = run_study(&SimDesign::ar1(25, 50, SimKind::ClassicalT), &cfg, 600, C6_REPLICATES, Execution::Parallel)
        .unwrap();
    let alternative =
        run_study(&SimDesign::ar1(25, 50, SimKind::AlternativeT), &cfg, 601, C6_REPLICATES, Execution::Parallel)
            .unwrap();
    let (c, a) = (mean_clusters(&classical), mean_clusters(&alternative));
    Verdict {
        pass: (1.0..=2.5).contains(&c) && a >= 5.0,
        detail: format!("mean clusters per row: classical-t data {c:.2} (want 1.0–2.5), alternative-t data {a:.2} (want ≥ 5.0)"),
    }
}

fn c7_outlier_localization() -> Verdict {
    let design = SimDesign::contaminated(30, 100);
    let mut cfg = ChainConfig::new(ModelKind::DirichletT);
    cfg.edge_proposals = Some(C7_PROPOSALS);
    cfg.tau_every = 30;
    let reps = run_study(&design, &cfg, 700, 3, Execution::Parallel).unwrap();
    let (mut dirty, mut clean) = ((0.0, 0usize), (0.0, 0usize));
    for r in &reps {
        let map = r.output.tau_outlier.as_ref().unwrap();
        let truth = &r.dataset.truth.as_ref().unwrap().tau;
        for (v, t) in map.iter().zip(truth.iter()) {
            let slot = if *t < 1.0 { &mut dirty } else { &mut clean };
            slot.0 += v;
            slot.1 += 1;
        }
    }
    let (md, mc) = (dirty.0 / dirty.1 as f64, clean.0 / clean.1 as f64);
    let ratio = md / mc;
    Verdict {
        pass: ratio >= C7_FACTOR,
        detail: format!(
            "mean outlier probability contaminated {md:.3} ({} cells) vs clean {mc:.4}; ratio {ratio:.1} (want ≥ {C7_FACTOR})",
            dirty.1
        ),
    }
}

fn c8_robust_centering() -> Verdict {
    let mut rng = RngStream::new(808);
    let (theta, g) = robust_ggm::sim::ar1_precision(25).unwrap();
    let mu: Vec<f64> = (0..25).map(|_| std_normal(&mut rng)).collect();
    let ds = sample_dataset(SimKind::ClassicalT, 100, &theta, &g, &mu, 3.0, 1.0, &mut rng).unwrap();
    let fit = |mode| {
        let mut cfg = ChainConfig::new(ModelKind::ClassicalT);
        cfg.edge_proposals = Some(C8_PROPOSALS);
        cfg.sigma_mu = 1e5;
        cfg.mu_mode = mode;
        cfg.seed = 8;
        DMatrix::from_vec(25, 1, run_chain(cfg, &ds.y).unwrap().mu_mean)
    };
    let robust = fit(MuMode::Robust);
    let approx = fit(MuMode::ApproxDraw);
    let exact = fit(MuMode::ExactDraw);
    let naive = fit(MuMode::Naive);
    let scale = robust.norm();
    let d_ra = (&robust - &approx).norm() / scale;
    let d_re = (&robust - &exact).norm() / scale;
    let d_ae = (&approx - &exact).norm() / scale;
    let naive_gap = (&naive - &robust).abs().max() / robust.abs().max();
    Verdict {
        pass: d_ra <= C8_REL && d_re <= C8_REL && d_ae <= C8_REL && naive_gap > C8_REL,
        detail: format!(
            "relative distances robust/approx {d_ra:.4}, robust/exact {d_re:.4}, approx/exact {d_ae:.4} (tol {C8_REL}); naive max gap {naive_gap:.3} (want > {C8_REL})"
        ),
    }
}

fn c9_marginal_covariance() -> Verdict {
    let (nu, psi) = (3.0, 0.5);
    let bound = dirichlet_t_marginal_cov(psi, 0.0, nu).unwrap();
    let bound_ok = (bound - psi * nu / (nu - 2.0)).abs() < 1e-12;
    let mut rng = RngStream::new(909);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for &alpha in &[0.1, 1.0, 10.0] {
        let f = dirichlet_t_marginal_cov(psi, alpha, nu).unwrap();
        let mut acc = 0.0;
        for _ in 0..C9_DRAWS {
            let z1 = std_normal(&mut rng);
            let z2 = std_normal(&mut rng);
            let (x1, x2) = (z1, psi * z1 + (1.0 - psi * psi).sqrt() * z2);
            let (tau, _) = sample_dirichlet_gamma_prior(2, alpha, nu, &mut rng).unwrap();
            acc += x1 / tau[0].sqrt() * x2 / tau[1].sqrt();
        }
        let mc = acc / C9_DRAWS as f64;
        let rel = (mc / f - 1.0).abs();
        worst = worst.max(rel);
        parts.push(format!("α={alpha}: MC {mc:.4} vs {f:.4}"));
    }
    Verdict {
        pass: bound_ok && worst <= C9_REL,
        detail: format!(
            "{}; α→0 bound {bound:.4} = ψν/(ν−2): {bound_ok}; worst relative error {worst:.4} (tol {C9_REL})",
            parts.join(", ")
        ),
    }
}

fn main() {
    // Respect `cargo test -- <filter>` by running nothing when filtered out.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let min = |m: u64| Duration::from_secs(60 * m);
    let results = [
        run(1, "normalizing-constant oracle", min(1), c1_normalizing_constants),
        run(2, "exact-posterior recovery", min(5), c2_exact_posterior),
        run(3, "sqrt-tilted gamma fidelity", min(5), c3_sqrt_gamma),
        run(4, "DP prior cluster counts", min(2), c4_dp_prior),
        run(5, "ROC ordering", min(60), c5_roc_ordering),
        run(6, "Dirichlet adaptivity", min(30), c6_dirichlet_adaptivity),
        run(7, "outlier localization", min(20), c7_outlier_localization),
        run(8, "robust-centering equivalence", min(15), c8_robust_centering),
        run(9, "marginal covariance formula", min(2), c9_marginal_covariance),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    // Failures are reported, not fatal, unless strict mode is requested.
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
