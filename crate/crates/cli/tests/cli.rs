use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use robust_ggm::ingest::{ingest_csv, IngestOptions};
use robust_ggm::mcmc::{write_checkpoint, ChainConfig, ChainRunner, ModelKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-ggm"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn simulate(dir: &Path, kind: &str, p: &str, n: &str, prefix: &str) {
    let o = run(dir, &["simulate", "--kind", kind, "--p", p, "--n", n, "--out", prefix]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_fit_roc_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["simulate", "--kind", "classical-t", "--p", "6", "--n", "40", "--replicates", "2", "--out", "s"]);
    assert_eq!(code(&o), 0);
    for ext in ["csv", "graph", "theta", "mu", "tau"] {
        assert!(d.join(format!("s-1.{ext}")).exists(), "missing s-1.{ext}");
    }
    for r in ["1", "2"] {
        let o = run(
            d,
            &["fit", "--data", &format!("s-{r}.csv"), "--model", "classical-t", "--edge_proposals", "4000", "--out", &format!("f{r}")],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let edges = fs::read_to_string(d.join("f1.edges.csv")).unwrap();
    let mut lines = edges.lines();
    assert_eq!(lines.next(), Some("j,k,prob"));
    assert_eq!(lines.count(), 15);
    assert!(fs::read_to_string(d.join("f1.trace.csv")).unwrap().starts_with("iter,edges\n"));
    let taumap = fs::read_to_string(d.join("f1.taumap.csv")).unwrap();
    assert_eq!(taumap.lines().count(), 40);
    assert!(taumap.lines().all(|l| l.split(',').count() == 6));

    let o = run(d, &["roc", "--edges", "f1.edges.csv", "f2.edges.csv", "--truth", "s-1.graph", "s-2.graph", "--out", "roc.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("auc="));
    let roc = fs::read_to_string(d.join("roc.csv")).unwrap();
    assert!(roc.starts_with("epsilon,tp,fp,tpr,fpr\n"));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "normal", "4", "30", "s");
    fs::write(d.join("run.cfg"), "# gaussian run\nmodel=gaussian\nedge_proposals=1000\ntrace_every=100\n").unwrap();
    let o = run(d, &["trace", "--data", "s.csv", "--config", "run.cfg", "--trace_every", "250"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    let iters: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["250", "500", "750", "1000"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "normal", "3", "10", "s");
    // Configuration errors.
    assert_eq!(code(&run(d, &["fit", "--data", "s.csv", "--out", "x", "--model", "bogus"])), 1);
    assert_eq!(code(&run(d, &["fit", "--data", "s.csv", "--out", "x", "--nu", "-1"])), 1);
    assert_eq!(code(&run(d, &["fit", "--data", "s.csv", "--out", "x", "--unknown", "1"])), 1);
    fs::write(d.join("bad.cfg"), "colour=blue\n").unwrap();
    assert_eq!(code(&run(d, &["fit", "--data", "s.csv", "--out", "x", "--config", "bad.cfg"])), 1);
    assert_eq!(code(&run(d, &["taumap", "--data", "s.csv", "--model", "gaussian"])), 1);
    // Data errors.
    assert_eq!(code(&run(d, &["ingest-check", "--data", "missing.csv"])), 2);
    fs::write(d.join("ragged.csv"), "1,2\n3\n").unwrap();
    assert_eq!(code(&run(d, &["ingest-check", "--data", "ragged.csv"])), 2);
    fs::write(d.join("header.csv"), "a,b\n").unwrap();
    assert_eq!(code(&run(d, &["ingest-check", "--data", "header.csv"])), 2);
    assert_eq!(code(&run(d, &["simulate", "--p", "1", "--out", "y"])), 1);
    assert_eq!(code(&run(d, &["simulate", "--design", "cliques", "--p", "4", "--max-size", "6", "--out", "y"])), 1);
    // Numerical failure: squared deviations overflow.
    fs::write(d.join("huge.csv"), "1e200,2e200\n-3e200,1e200\n2e200,-1e200\n").unwrap();
    for model in ["gaussian", "classical-t"] {
        let o = run(d, &["fit", "--data", "huge.csv", "--out", "x", "--model", model, "--edge_proposals", "50"]);
        assert_eq!(code(&o), 3, "{model}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&run(d, &["--help"])), 0);
}

#[test]
fn ingest_check_reports_dropped_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("x.csv"), "g1,g2,g3\n1,2,3\nNA,1,1\n4,5,6\n").unwrap();
    let o = run(d, &["ingest-check", "--data", "x.csv"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rows=2 columns=3"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("names=g1,g2,g3"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dropped 1"));
}

#[test]
fn resumed_fit_matches_uninterrupted_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "alternative-t", "5", "25", "s");
    let common = ["--data", "s.csv", "--model", "dirichlet-t", "--seed", "9"];
    let full: Vec<&str> = ["fit"].into_iter().chain(common).chain(["--edge_proposals", "3000", "--out", "full"]).collect();
    assert_eq!(code(&run(d, &full)), 0);

    // Run the same chain in checkpointed chunks; the checkpoint file lets the
    // second invocation continue where the first one stopped.
    let chunked: Vec<&str> = ["fit"]
        .into_iter()
        .chain(common)
        .chain(["--edge_proposals", "3000", "--checkpoint", "ck", "--checkpoint_every", "700", "--out", "chunked"])
        .collect();
    assert_eq!(code(&run(d, &chunked)), 0);
    assert!(d.join("ck").exists());
    let mut resumed = chunked.clone();
    resumed.push("--resume");
    *resumed.iter_mut().find(|a| **a == "chunked").unwrap() = "resumed";
    assert_eq!(code(&run(d, &resumed)), 0);

    let read = |name: &str| fs::read_to_string(d.join(name)).unwrap();
    assert_eq!(read("full.edges.csv"), read("chunked.edges.csv"));
    assert_eq!(read("full.taumap.csv"), read("chunked.taumap.csv"));
    // Resuming a finished checkpoint reproduces the same result.
    assert_eq!(read("full.edges.csv"), read("resumed.edges.csv"));

    // Interrupt the chain part-way with the library, then let the CLI finish it.
    let data = ingest_csv(&d.join("s.csv"), IngestOptions::default()).unwrap().dataset;
    let mut cfg = ChainConfig::new(ModelKind::DirichletT);
    cfg.seed = 9;
    cfg.edge_proposals = Some(3000);
    let mut runner = ChainRunner::new(cfg, data.y).unwrap();
    runner.run_until(1234).unwrap();
    write_checkpoint(&runner, fs::File::create(d.join("ck")).unwrap()).unwrap();
    *resumed.iter_mut().find(|a| **a == "resumed").unwrap() = "midway";
    let o = run(d, &resumed);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at proposal 1234"));
    assert_eq!(read("full.edges.csv"), read("midway.edges.csv"));
    assert_eq!(read("full.trace.csv"), read("midway.trace.csv"));

    // A checkpoint from a different configuration is refused.
    let mut other = resumed.clone();
    *other.iter_mut().find(|a| **a == "9").unwrap() = "10";
    assert_eq!(code(&run(d, &other)), 1);
}

#[test]
fn replicated_fit_pools_edges() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "normal", "4", "30", "s");
    let o = run(d, &["fit", "--data", "s.csv", "--edge_proposals", "2000", "--replicates", "3", "--out", "f"]);
    assert_eq!(code(&o), 0);
    for r in 1..=3 {
        assert!(d.join(format!("f.chain{r}.trace.csv")).exists());
    }
    let probs: Vec<f64> = fs::read_to_string(d.join("f.edges.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 6);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
}
