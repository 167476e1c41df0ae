//! Flat `key=value` configuration, merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use robust_ggm::dp::AlphaPrior;
use robust_ggm::ingest::{ingest_csv, HeaderMode, IngestOptions};
use robust_ggm::mcmc::{ChainConfig, ModelKind, MuMode, TauInit};
use robust_ggm::parallel::Execution;
use robust_ggm::{Error, Result};

/// Keys accepted in a config file or as `--key value`.
pub const KEYS: &[&str] = &[
    "model",
    "nu",
    "alpha",
    "alpha_prior_a",
    "alpha_prior_b",
    "delta",
    "phi_scale",
    "d",
    "sigma_mu",
    "seed",
    "edge_proposals",
    "tau_every",
    "recluster_every",
    "burn_in_frac",
    "mu_mode",
    "include_graph_prior",
    "proposal_weighting",
    "tau_init",
    // Extensions.
    "proposals_per_edge",
    "thin",
    "trace_every",
    "tau_snapshot_every",
    "outlier_quantile",
    "mu_known",
    "warmup_sweeps",
    "replicates",
    "checkpoint_every",
    "parallel",
];

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Settings {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key=value", lineno + 1)))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Settings::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(config_err(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| config_err(format!("bad value '{v}' for {key}"))))
            .transpose()
    }

    fn parse_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(config_err(format!("bad value '{v}' for {key}; expected true or false"))),
            })
            .transpose()
    }

    pub fn replicates(&self) -> Result<usize> {
        match self.parse::<usize>("replicates")? {
            Some(0) => Err(config_err("replicates must be at least 1")),
            r => Ok(r.unwrap_or(1)),
        }
    }

    pub fn checkpoint_every(&self) -> Result<Option<u64>> {
        match self.parse::<u64>("checkpoint_every")? {
            Some(0) => Err(config_err("checkpoint_every must be at least 1")),
            r => Ok(r),
        }
    }

    pub fn execution(&self) -> Result<Execution> {
        Ok(match self.parse_bool("parallel")? {
            Some(false) => Execution::Sequential,
            _ => Execution::Parallel,
        })
    }

    /// Builds a validated sampler configuration. Missing keys take the
    /// library defaults; the model defaults to `gaussian`.
    pub fn chain_config(&self) -> Result<ChainConfig> {
        let model: ModelKind = self.parse("model")?.unwrap_or(ModelKind::Gaussian);
        let mut c = ChainConfig::new(model);
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = self.parse($key)? {
                    $field = v;
                }
            };
        }
        take!("nu", c.nu);
        take!("delta", c.delta);
        take!("d", c.d);
        take!("sigma_mu", c.sigma_mu);
        take!("seed", c.seed);
        take!("proposals_per_edge", c.proposals_per_edge);
        take!("tau_every", c.tau_every);
        take!("recluster_every", c.recluster_every);
        take!("burn_in_frac", c.burn_in_frac);
        take!("mu_mode", c.mu_mode);
        take!("proposal_weighting", c.proposal_weighting);
        take!("thin", c.thin);
        take!("tau_snapshot_every", c.tau_snapshot_every);
        take!("outlier_quantile", c.outlier_quantile);
        take!("warmup_sweeps", c.warmup_sweeps);
        c.phi_scale = self.parse("phi_scale")?;
        c.edge_proposals = self.parse("edge_proposals")?;
        c.trace_every = self.parse("trace_every")?;
        if c.trace_every == Some(0) {
            return Err(config_err("trace_every must be at least 1"));
        }
        if let Some(b) = self.parse_bool("include_graph_prior")? {
            c.include_graph_prior = b;
        }
        c.execution = self.execution()?;
        c.alpha_prior = self.alpha_prior()?;
        if let Some(v) = self.get("mu_known") {
            c.mu_known = Some(parse_list(v)?);
            if self.get("mu_mode").is_none() {
                c.mu_mode = MuMode::Known;
            }
        }
        if let Some(v) = self.get("tau_init") {
            c.tau_init = parse_tau_init(v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// A fixed `alpha` and a Gamma prior are mutually exclusive.
    fn alpha_prior(&self) -> Result<AlphaPrior> {
        let a = self.parse::<f64>("alpha_prior_a")?;
        let b = self.parse::<f64>("alpha_prior_b")?;
        let fixed = self.parse::<f64>("alpha")?;
        match (fixed, a.is_some() || b.is_some()) {
            (Some(_), true) => Err(config_err("set either alpha or alpha_prior_a/alpha_prior_b, not both")),
            (Some(alpha), false) => Ok(AlphaPrior::Fixed(alpha)),
            (None, _) => Ok(AlphaPrior::Gamma { a: a.unwrap_or(1.0), b: b.unwrap_or(1.0) }),
        }
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| config_err(format!("bad number '{t}' in list"))))
        .collect()
}

fn parse_tau_init(v: &str) -> Result<TauInit> {
    match v {
        "ones" => Ok(TauInit::Ones),
        "warmup" => Ok(TauInit::Warmup),
        _ => match v.strip_prefix("file:") {
            Some(path) => {
                let ing = ingest_csv(Path::new(path), IngestOptions { header: HeaderMode::Absent }).map_err(|e| match e {
                    Error::Io(io) => Error::Data(format!("cannot read {path}: {io}")),
                    other => other,
                })?;
                if ing.dropped > 0 {
                    return Err(Error::Data(format!("{path}: divisor file has missing cells")));
                }
                Ok(TauInit::Given(ing.dataset.y))
            }
            None => Err(config_err(format!("bad tau_init '{v}'; expected ones, warmup or file:<path>"))),
        },
    }
}
