mod common;

use std::collections::HashMap;

use common::exact_graph_posterior;
use nalgebra::DMatrix;
use proptest::prelude::*;
use robust_ggm::dp::{AlphaPrior, DpState};
use robust_ggm::graph::{num_pairs, Graph};
use robust_ggm::hiw::{weighted_scatter, GraphPrior, HiwParams, TauRef};
use robust_ggm::linalg::SpdMatrix;
use robust_ggm::mcmc::{step_dirichlet, weighted_mean, ChainConfig, ChainRunner, ModelKind};
use robust_ggm::parallel::Execution;
use robust_ggm::random::{std_normal, RngStream};
use robust_ggm::report::{accumulate_edges, tau_outlier_map, RocTable};
use statrs::function::gamma::ln_gamma;

/// Canonical partition key: labels renumbered by first appearance.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Exact partition posterior for one observation under a diagonal precision,
/// where each cluster's divisor integrates out in closed form.
#[test]
fn dirichlet_reassignment_matches_partition_posterior() {
    let r = [0.3, 2.5, -0.4];
    let theta_diag = [1.0, 2.0, 0.5];
    let (alpha, nu) = (1.0f64, 3.0f64);
    let partitions: Vec<Vec<usize>> = vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 0], vec![0, 1, 1], vec![0, 1, 2]];
    let log_w: Vec<f64> = partitions
        .iter()
        .map(|labels| {
            let k = labels.iter().max().unwrap() + 1;
            let mut lw = k as f64 * alpha.ln() - (alpha * (alpha + 1.0) * (alpha + 2.0)).ln();
            for c in 0..k {
                let members: Vec<usize> = (0..3).filter(|&j| labels[j] == c).collect();
                let m = members.len() as f64;
                lw += ln_gamma(m); // (n_c − 1)!
                let q: f64 = members.iter().map(|&j| theta_diag[j] * r[j] * r[j]).sum();
                lw += 0.5 * nu * (0.5 * nu).ln() - ln_gamma(0.5 * nu) + ln_gamma(0.5 * (nu + m))
                    - 0.5 * (nu + m) * (0.5 * (nu + q)).ln();
            }
            lw
        })
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = log_w.iter().map(|l| (l - max).exp()).sum();
    let exact: Vec<f64> = log_w.iter().map(|l| (l - max).exp() / z).collect();

    let y = DMatrix::from_row_slice(1, 3, &r);
    let theta = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&theta_diag));
    let mut dp = DpState::single_cluster(3, &[1.0], AlphaPrior::Fixed(alpha)).unwrap();
    let streams = RngStream::new(4);
    let iters = 300_000u64;
    let mut counts = vec![0u64; 5];
    for t in 0..iters {
        step_dirichlet(&mut dp, &y, &[0.0; 3], &theta, nu, true, &streams, t, Execution::Sequential).unwrap();
        let key = canonical(&dp.rows[0].labels);
        counts[partitions.iter().position(|p| *p == key).unwrap()] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(&exact)
        .map(|(&c, &e)| (c as f64 / iters as f64 - e).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.01, "TV {tv}: {counts:?} vs {exact:?}");
}

fn gaussian_data(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = RngStream::new(seed);
    let mut y = DMatrix::from_fn(n, p, |_, _| std_normal(&mut rng));
    for i in 0..n {
        y[(i, 1)] += 0.8 * y[(i, 0)];
    }
    y
}

/// Short-run version of the exact-posterior recovery check.
#[test]
fn gaussian_chain_matches_enumeration() {
    let y = gaussian_data(20, 3, 5);
    let mut cfg = ChainConfig::new(ModelKind::Gaussian);
    cfg.edge_proposals = Some(200_000);
    cfg.burn_in_frac = 0.05;
    let mut runner = ChainRunner::new(cfg.clone(), y.clone()).unwrap();
    let burn = cfg.burn_in(3);
    runner.run_until(burn).unwrap();
    let mut freq: HashMap<Graph, u64> = HashMap::new();
    while !runner.is_finished() {
        let next = runner.iteration() + 1;
        runner.run_until(next).unwrap();
        *freq.entry(runner.graph().clone()).or_default() += 1;
    }
    let recorded: u64 = freq.values().sum();

    let mu = weighted_mean(&y, TauRef::Ones).unwrap();
    let scatter = weighted_scatter(&y, TauRef::Ones, &mu).unwrap();
    let prior = HiwParams::new(cfg.delta, SpdMatrix::scaled_identity(3, cfg.phi_scale_for(3))).unwrap();
    let exact = exact_graph_posterior(3, 20, &scatter, &prior, Some(GraphPrior::new(cfg.d).unwrap()));
    let tv: f64 = exact
        .iter()
        .map(|(g, p)| (freq.get(g).copied().unwrap_or(0) as f64 / recorded as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.03, "TV {tv}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn roc_is_monotone(seed in any::<u64>(), p in 2usize..7, reps in 1usize..4) {
        let mut rng = RngStream::new(seed);
        let m = num_pairs(p);
        let probs: Vec<Vec<f64>> = (0..reps)
            .map(|_| (0..m).map(|_| (rand::Rng::random_range(&mut rng, 0..5) as f64) / 4.0).collect())
            .collect();
        let truths: Vec<Graph> = (0..reps)
            .map(|_| common::random_decomposable(p, 20, &mut rng))
            .collect();
        let roc = RocTable::compute(&probs, &truths, &RocTable::distinct_grid(&probs)).unwrap();
        prop_assert!(roc.is_monotone());
        let auc = roc.auc();
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn edge_accumulation_is_order_invariant(seed in any::<u64>(), p in 2usize..6, k in 1usize..20) {
        let mut rng = RngStream::new(seed);
        let mut snaps: Vec<Graph> = (0..k).map(|_| common::random_decomposable(p, 10, &mut rng)).collect();
        let a = accumulate_edges(p, snaps.iter()).unwrap();
        snaps.reverse();
        let mid = snaps.len() / 2;
        snaps.rotate_left(mid);
        let b = accumulate_edges(p, snaps.iter()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn outlier_map_extreme_quantiles(seed in any::<u64>(), n in 1usize..5, p in 1usize..5) {
        let mut rng = RngStream::new(seed);
        let snaps: Vec<DMatrix<f64>> = (0..6)
            .map(|_| DMatrix::from_fn(n, p, |_, _| 1e-3 + 5.0 * rand::Rng::random::<f64>(&mut rng)))
            .collect();
        let zero = tau_outlier_map(&snaps, 3.0, 0.0).unwrap();
        let one = tau_outlier_map(&snaps, 3.0, 1.0).unwrap();
        prop_assert!(zero.iter().all(|&v| v == 0.0));
        prop_assert!(one.iter().all(|&v| v == 1.0));
    }
}
