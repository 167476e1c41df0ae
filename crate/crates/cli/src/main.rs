mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use robust_ggm::experiment::{replicate_dataset, run_study, DataDesign, GraphDesign, MeanDesign, SimDesign};
use robust_ggm::graph::read_edge_list;
use robust_ggm::ingest::{ingest_csv, HeaderMode, IngestOptions};
use robust_ggm::mcmc::{read_checkpoint, write_checkpoint, ChainConfig, ChainOutput, ChainRunner};
use robust_ggm::report::{write_dense_csv, write_trace_csv, EdgePosterior, RocTable};
use robust_ggm::sim::{CliqueDesign, Contamination, Dataset, SimKind};
use robust_ggm::{Error, Result};

use config::Settings;

#[derive(Parser, Debug)]
#[command(name = "robust-ggm", version, about = "Robust Bayesian structure learning for Gaussian graphical models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a data set and its truth sidecars.
    Simulate(SimulateArgs),
    /// Run chains on a data file and write edge posteriors, traces and divisor maps.
    Fit(FitArgs),
    /// ROC table from edge posteriors and truth graphs, or from a simulated study.
    Roc(RocArgs),
    /// Edge-count trace of one chain.
    Trace(RunArgs),
    /// Divisor outlier map of one chain (t models).
    Taumap(TaumapArgs),
    /// Parse a data file and report its shape.
    IngestCheck(IngestArgs),
}

macro_rules! config_args {
    ($($key:ident),* $(,)?) => {
        /// Configuration file plus per-key overrides.
        #[derive(Args, Debug, Default)]
        struct ConfigArgs {
            /// Flat key=value configuration file.
            #[arg(long, value_name = "PATH")]
            config: Option<PathBuf>,
            $(
                #[arg(
                    long = stringify!($key),
                    value_name = "VALUE",
                    allow_hyphen_values = true,
                    help_heading = "Configuration keys"
                )]
                $key: Option<String>,
            )*
        }

        impl ConfigArgs {
            fn settings(&self) -> Result<Settings> {
                let mut s = match &self.config {
                    Some(p) => Settings::load(p)?,
                    None => Settings::default(),
                };
                $(
                    if let Some(v) = &self.$key {
                        s.set(stringify!($key), v)?;
                    }
                )*
                Ok(s)
            }
        }
    };
}

config_args!(
    model, nu, alpha, alpha_prior_a, alpha_prior_b, delta, phi_scale, d, sigma_mu, seed, edge_proposals, tau_every,
    recluster_every, burn_in_frac, mu_mode, include_graph_prior, proposal_weighting, tau_init, proposals_per_edge, thin,
    trace_every, tau_snapshot_every, outlier_quantile, mu_known, warmup_sweeps, replicates, checkpoint_every, parallel,
);

#[derive(Args, Debug)]
struct DesignArgs {
    /// ar1, cliques or contaminated.
    #[arg(long, default_value = "ar1")]
    design: String,
    /// Data distribution: normal, classical-t, alternative-t or dirichlet-t (ignored for contaminated).
    #[arg(long, default_value = "normal")]
    kind: String,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Degrees of freedom of the generating distribution.
    #[arg(long = "data-nu", default_value_t = 3.0)]
    data_nu: f64,
    /// Concentration of the generating Dirichlet-t distribution.
    #[arg(long = "data-alpha", default_value_t = 1.0)]
    data_alpha: f64,
    /// zero or normal; defaults to zero for ar1 and normal otherwise.
    #[arg(long)]
    mean: Option<String>,
    #[arg(long, default_value_t = 20)]
    cliques: usize,
    #[arg(long = "min-size", default_value_t = 2)]
    min_size: usize,
    #[arg(long = "max-size", default_value_t = 5)]
    max_size: usize,
    #[arg(long = "min-eig", default_value_t = 0.6)]
    min_eig: f64,
    #[arg(long = "data-seed", default_value_t = 1)]
    data_seed: u64,
}

impl DesignArgs {
    fn design(&self) -> Result<SimDesign> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p < 2 || self.n == 0 {
            return bad(format!("need p ≥ 2 and n ≥ 1, got p={} n={}", self.p, self.n));
        }
        if !(self.data_nu > 0.0 && self.data_nu.is_finite()) || self.data_alpha.is_nan() || self.data_alpha < 0.0 {
            return bad("data-nu must be positive and data-alpha nonnegative".into());
        }
        if self.design != "ar1"
            && !(2 <= self.min_size && self.min_size <= self.max_size && self.max_size <= self.p && self.min_eig > 0.0)
        {
            return bad("clique sizes need 2 ≤ min-size ≤ max-size ≤ p and min-eig > 0".into());
        }
        let cliques = CliqueDesign {
            n_cliques: self.cliques,
            min_size: self.min_size,
            max_size: self.max_size,
            min_eig: self.min_eig,
        };
        let kind: SimKind = self.kind.parse()?;
        let model = DataDesign::Model { kind, nu: self.data_nu, alpha: self.data_alpha };
        let (graph, data) = match self.design.as_str() {
            "ar1" => (GraphDesign::Ar1, model),
            "cliques" => (GraphDesign::RandomCliques(cliques), model),
            "contaminated" => (GraphDesign::RandomCliques(cliques), DataDesign::Contaminated(Contamination::default())),
            other => return Err(Error::Config(format!("unknown design '{other}'"))),
        };
        let mean = match self.mean.as_deref() {
            None if matches!(graph, GraphDesign::Ar1) => MeanDesign::Zero,
            None => MeanDesign::StandardNormal,
            Some("zero") => MeanDesign::Zero,
            Some("normal") => MeanDesign::StandardNormal,
            Some(other) => return Err(Error::Config(format!("unknown mean '{other}'"))),
        };
        Ok(SimDesign { p: self.p, n: self.n, graph, data, mean })
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Output prefix; replicate r of several goes to `<prefix>-<r>`.
    #[arg(long, value_name = "PREFIX")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Numeric CSV, one row per observation.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// auto, present or absent.
    #[arg(long, default_value = "auto")]
    header: String,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output prefix.
    #[arg(long, value_name = "PREFIX")]
    out: PathBuf,
    /// Checkpoint file, rewritten every `checkpoint_every` proposals.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Continue from an existing checkpoint.
    #[arg(long, requires = "checkpoint")]
    resume: bool,
}

#[derive(Args, Debug)]
struct RocArgs {
    /// Edge posterior CSVs, one per replicate.
    #[arg(long, num_args = 1.., value_name = "PATH")]
    edges: Vec<PathBuf>,
    /// Truth graphs in the same order.
    #[arg(long, num_args = 1.., value_name = "PATH")]
    truth: Vec<PathBuf>,
    /// Use `k+1` evenly spaced thresholds instead of the distinct probabilities.
    #[arg(long, value_name = "K")]
    grid: Option<usize>,
    /// Simulate and fit `replicates` data sets instead of reading files.
    #[arg(long, conflicts_with_all = ["edges", "truth"])]
    study: bool,
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output file; `-` for standard output.
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TaumapArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Write posterior mean divisors instead of outlier probabilities.
    #[arg(long)]
    mean: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Dimension(_) | Error::Parse(_) | Error::Io(_) => 2,
        // Arguments are validated up front, so a domain error here comes from
        // a degenerate intermediate quantity.
        Error::Domain(_) | Error::Numerical(_) | Error::NotDecomposable | Error::EdgeNotPresent(..) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Roc(a) => roc(a),
        Command::Trace(a) => trace(a),
        Command::Taumap(a) => taumap(a),
        Command::IngestCheck(a) => ingest_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let f = File::create(path).map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    let header = match a.header.as_str() {
        "auto" => HeaderMode::Auto,
        "present" => HeaderMode::Present,
        "absent" => HeaderMode::Absent,
        other => return Err(Error::Config(format!("unknown header mode '{other}'"))),
    };
    let ing = ingest_csv(&a.data, IngestOptions { header }).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("cannot read {}: {io}", a.data.display())),
        other => other,
    })?;
    if ing.dropped > 0 {
        eprintln!("note: dropped {} row(s) with missing cells", ing.dropped);
    }
    Ok(ing.dataset)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let design = a.design.design()?;
    if a.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    for r in 0..a.replicates {
        let ds = replicate_dataset(&design, a.design.data_seed, r)?;
        let prefix = if a.replicates == 1 { a.out.clone() } else { with_suffix(&a.out, &format!("-{}", r + 1)) };
        ds.save(&prefix)?;
        println!("wrote {}.csv (n={}, p={})", prefix.display(), ds.n(), ds.p());
    }
    Ok(())
}

/// Runs one chain, checkpointing along the way when asked.
fn run_with_checkpoints(
    cfg: ChainConfig,
    ds: &Dataset,
    checkpoint: Option<&Path>,
    resume: bool,
    every: Option<u64>,
) -> Result<ChainOutput> {
    let mut runner = match checkpoint {
        Some(path) if resume && path.exists() => {
            let r = read_checkpoint(open(path)?, cfg, ds.y.clone())?;
            eprintln!("resumed {} at proposal {}", path.display(), r.iteration());
            r
        }
        _ => ChainRunner::new(cfg, ds.y.clone())?,
    };
    let total = runner.total_iterations();
    let step = match (checkpoint, every) {
        (Some(_), Some(k)) => k,
        (Some(_), None) => (total / 10).max(1),
        (None, _) => total.max(1),
    };
    while !runner.is_finished() {
        let target = (runner.iteration() + step).min(total);
        runner.run_until(target)?;
        if let Some(path) = checkpoint {
            let tmp = with_suffix(path, ".tmp");
            let mut w = create(&tmp)?;
            write_checkpoint(&runner, &mut w)?;
            w.flush()?;
            drop(w);
            std::fs::rename(&tmp, path)?;
        }
    }
    runner.finish()
}

fn pooled_edges(outputs: &[ChainOutput]) -> Result<EdgePosterior> {
    let p = outputs[0].edge_posterior.p();
    let mut counts = vec![0u64; outputs[0].edge_posterior.counts().len()];
    let mut total = 0;
    for o in outputs {
        for (c, v) in counts.iter_mut().zip(o.edge_posterior.counts()) {
            *c += v;
        }
        total += o.edge_posterior.total();
    }
    EdgePosterior::from_counts(p, counts, total)
}

fn fit(a: FitArgs) -> Result<()> {
    let settings = a.config.settings()?;
    let cfg = settings.chain_config()?;
    let replicates = settings.replicates()?;
    let every = settings.checkpoint_every()?;
    let ds = load_data(&a.data)?;
    let start = Instant::now();
    let chain_path = |base: &Path, r: usize| {
        if replicates == 1 { base.to_path_buf() } else { with_suffix(base, &format!(".{}", r + 1)) }
    };
    let outputs: Vec<ChainOutput> = cfg
        .execution
        .map_range(replicates, |r| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(r as u64);
            let ck = a.checkpoint.as_deref().map(|p| chain_path(p, r));
            run_with_checkpoints(c, &ds, ck.as_deref(), a.resume, every)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed();

    pooled_edges(&outputs)?.write_csv(create(&with_suffix(&a.out, ".edges.csv"))?)?;
    for (r, o) in outputs.iter().enumerate() {
        let prefix = if replicates == 1 { a.out.clone() } else { with_suffix(&a.out, &format!(".chain{}", r + 1)) };
        write_trace_csv(&o.trace, create(&with_suffix(&prefix, ".trace.csv"))?)?;
        write_mu(&ds, &o.mu_mean, create(&with_suffix(&prefix, ".mu.csv"))?)?;
        if let Some(m) = &o.tau_outlier {
            write_dense_csv(m, create(&with_suffix(&prefix, ".taumap.csv"))?)?;
        }
        if let Some(m) = &o.tau_mean {
            write_dense_csv(m, create(&with_suffix(&prefix, ".taumean.csv"))?)?;
        }
    }
    let mut summary = create(&with_suffix(&a.out, ".summary.txt"))?;
    write_summary(&mut summary, &cfg, &ds, &outputs, elapsed.as_secs_f64())?;
    summary.flush()?;
    write_summary(&mut io::stdout(), &cfg, &ds, &outputs, elapsed.as_secs_f64())?;
    Ok(())
}

fn write_mu<W: Write>(ds: &Dataset, mu: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "variable,mu")?;
    for (name, v) in ds.names.iter().zip(mu) {
        writeln!(w, "{name},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary<W: Write>(w: &mut W, cfg: &ChainConfig, ds: &Dataset, outs: &[ChainOutput], secs: f64) -> Result<()> {
    writeln!(w, "model={}", cfg.model)?;
    writeln!(w, "n={} p={}", ds.n(), ds.p())?;
    writeln!(w, "chains={} proposals_per_chain={}", outs.len(), cfg.total_proposals(ds.p()))?;
    for (r, o) in outs.iter().enumerate() {
        let mut line = format!(
            "chain {}: acceptance={:.4} not_decomposable={} final_edges={}",
            r + 1,
            o.moves.acceptance_rate(),
            o.moves.not_decomposable,
            o.final_graph.num_edges()
        );
        if !o.cluster_trace.is_empty() {
            let m = o.cluster_trace.iter().sum::<f64>() / o.cluster_trace.len() as f64;
            line.push_str(&format!(" mean_clusters={m:.3}"));
        }
        writeln!(w, "{line}")?;
    }
    writeln!(w, "seconds={secs:.2}")?;
    Ok(())
}

fn roc(a: RocArgs) -> Result<()> {
    let (probs, truths) = if a.study {
        let settings = a.config.settings()?;
        let cfg = settings.chain_config()?;
        let design = a.design.design()?;
        let reps = run_study(&design, &cfg, a.design.data_seed, settings.replicates()?, cfg.execution)?;
        let probs: Vec<Vec<f64>> = reps.iter().map(|r| r.output.edge_posterior.probabilities()).collect();
        let truths = reps.into_iter().map(|r| r.dataset.truth.map(|t| t.graph)).collect::<Option<Vec<_>>>();
        (probs, truths.ok_or_else(|| Error::Data("simulated data lack a truth graph".into()))?)
    } else {
        if a.edges.is_empty() || a.edges.len() != a.truth.len() {
            return Err(Error::Config("give matching --edges and --truth lists, or --study".into()));
        }
        let mut probs = Vec::new();
        let mut truths = Vec::new();
        for (e, t) in a.edges.iter().zip(&a.truth) {
            let (p, pr) = EdgePosterior::read_probabilities_csv(open(e)?)?;
            let g = read_edge_list(open(t)?)?;
            if g.p() != p {
                return Err(Error::Data(format!("{} has p={p} but {} has p={}", e.display(), t.display(), g.p())));
            }
            probs.push(pr);
            truths.push(g);
        }
        (probs, truths)
    };
    let grid = match a.grid {
        Some(0) => return Err(Error::Config("grid needs at least one interval".into())),
        Some(k) => RocTable::uniform_grid(k),
        None => RocTable::distinct_grid(&probs),
    };
    let table = RocTable::compute(&probs, &truths, &grid)?;
    table.write_csv(create(&a.out)?)?;
    println!("replicates={} auc={:.4}", probs.len(), table.auc());
    Ok(())
}

fn single_chain(a: &RunArgs) -> Result<ChainOutput> {
    let cfg = a.config.settings()?.chain_config()?;
    let ds = load_data(&a.data)?;
    run_with_checkpoints(cfg, &ds, None, false, None)
}

fn trace(a: RunArgs) -> Result<()> {
    let out = single_chain(&a)?;
    let mut w = create(&a.out)?;
    write_trace_csv(&out.trace, &mut w)?;
    w.flush()?;
    Ok(())
}

fn taumap(a: TaumapArgs) -> Result<()> {
    let cfg = a.run.config.settings()?.chain_config()?;
    if !cfg.model.is_t() {
        return Err(Error::Config(format!("taumap needs a t model, got {}", cfg.model)));
    }
    let out = single_chain(&a.run)?;
    let m = if a.mean { out.tau_mean } else { out.tau_outlier };
    let m = m.ok_or_else(|| Error::Numerical("chain recorded no divisor states; lower burn_in_frac".into()))?;
    let mut w = create(&a.run.out)?;
    write_dense_csv(&m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn ingest_check(a: IngestArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    println!("rows={} columns={}", ds.n(), ds.p());
    println!("names={}", ds.names.join(","));
    Ok(())
}
