//! Replicated simulation studies: generate data, run chains, pool ROC counts.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mcmc::{run_chain, ChainConfig, ChainOutput};
use crate::parallel::Execution;
use crate::random::{std_normal, RngStream};
use crate::report::RocTable;
use crate::sim::{
    ar1_precision, contaminate, random_clique_graph, sample_dataset, sample_latent, CliqueDesign, Contamination,
    Dataset, SimKind, Truth,
};

const TAG_DATA: u64 = 0x4441_5441;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GraphDesign {
    Ar1,
    RandomCliques(CliqueDesign),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DataDesign {
    Model { kind: SimKind, nu: f64, alpha: f64 },
    /// Normal latent data with block divisors.
    Contaminated(Contamination),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanDesign {
    Zero,
    StandardNormal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimDesign {
    pub p: usize,
    pub n: usize,
    pub graph: GraphDesign,
    pub data: DataDesign,
    pub mean: MeanDesign,
}

impl SimDesign {
    /// AR(1) precision, zero mean.
    pub fn ar1(p: usize, n: usize, kind: SimKind) -> Self {
        SimDesign {
            p,
            n,
            graph: GraphDesign::Ar1,
            data: DataDesign::Model { kind, nu: 3.0, alpha: 1.0 },
            mean: MeanDesign::Zero,
        }
    }

    /// Random cliques, standard normal mean, block contamination.
    pub fn contaminated(p: usize, n: usize) -> Self {
        SimDesign {
            p,
            n,
            graph: GraphDesign::RandomCliques(CliqueDesign::default()),
            data: DataDesign::Contaminated(Contamination::default()),
            mean: MeanDesign::StandardNormal,
        }
    }
}

pub fn simulate<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<Dataset> {
    let (theta, graph) = match design.graph {
        GraphDesign::Ar1 => ar1_precision(design.p)?,
        GraphDesign::RandomCliques(c) => random_clique_graph(design.p, c, rng)?,
    };
    let mu: Vec<f64> = match design.mean {
        MeanDesign::Zero => vec![0.0; design.p],
        MeanDesign::StandardNormal => (0..design.p).map(|_| std_normal(rng)).collect(),
    };
    match design.data {
        DataDesign::Model { kind, nu, alpha } => sample_dataset(kind, design.n, &theta, &graph, &mu, nu, alpha, rng),
        DataDesign::Contaminated(opts) => {
            let x = sample_latent(design.n, &theta, rng)?;
            let (y, tau) = contaminate(&x, &mu, opts, rng)?;
            let mut ds = Dataset::new(y);
            ds.truth = Some(Truth { graph, theta, mu, tau });
            Ok(ds)
        }
    }
}

/// Data set `r` of a study seeded with `seed`.
pub fn replicate_dataset(design: &SimDesign, seed: u64, r: usize) -> Result<Dataset> {
    simulate(design, &mut RngStream::new(seed).derive(&[TAG_DATA, r as u64]))
}

#[derive(Clone, Debug)]
pub struct Replicate {
    pub dataset: Dataset,
    pub output: ChainOutput,
}

/// Simulates `replicates` data sets and fits each with `cfg`; chain `r` uses
/// seed `cfg.seed + r`. Replicates run concurrently under `exec`.
pub fn run_study(
    design: &SimDesign,
    cfg: &ChainConfig,
    data_seed: u64,
    replicates: usize,
    exec: Execution,
) -> Result<Vec<Replicate>> {
    exec.map_range(replicates, |r| {
        let dataset = replicate_dataset(design, data_seed, r)?;
        let output = fit_one(cfg, &dataset, r)?;
        Ok(Replicate { dataset, output })
    })
    .into_iter()
    .collect()
}

/// Fits every data set with its own seed offset.
pub fn fit_datasets(cfg: &ChainConfig, datasets: &[Dataset], exec: Execution) -> Result<Vec<ChainOutput>> {
    exec.map_range(datasets.len(), |r| fit_one(cfg, &datasets[r], r)).into_iter().collect()
}

/// Independent chains on one data set, seeds `cfg.seed + r`.
pub fn run_chains(cfg: &ChainConfig, y: &nalgebra::DMatrix<f64>, chains: usize, exec: Execution) -> Result<Vec<ChainOutput>> {
    exec.map_range(chains, |r| {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(r as u64);
        run_chain(c, y)
    })
    .into_iter()
    .collect()
}

fn fit_one(cfg: &ChainConfig, ds: &Dataset, r: usize) -> Result<ChainOutput> {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(r as u64);
    run_chain(c, &ds.y)
}

/// Pooled ROC over replicates on the distinct-value grid.
pub fn study_roc(reps: &[Replicate]) -> Result<RocTable> {
    let probs: Vec<Vec<f64>> = reps.iter().map(|r| r.output.edge_posterior.probabilities()).collect();
    let truths = reps
        .iter()
        .map(|r| {
            r.dataset
                .truth
                .as_ref()
                .map(|t| t.graph.clone())
                .ok_or_else(|| Error::Data("replicate without a true graph".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    RocTable::compute(&probs, &truths, &RocTable::distinct_grid(&probs))
}
