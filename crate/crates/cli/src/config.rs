//! Run configurations: JSON file first, then command-line flags on top.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bconf::analysis::ProbeOptions;
use bconf::bridge::{BridgeOptions, MonteCarloOptions};
use bconf::continuum::{ContinuumOptions, SegmentRule};
use bconf::discrete::{Integrator, SimOptions};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

#[derive(Args)]
pub struct SimulateArgs {
    /// JSON config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// list:X,Y,.. | uniform:A:B | piecewise:B..:L.. | linear:A:B
    #[arg(long)]
    pub init: Option<String>,
    /// One opinion (or `opinion,weight`) per line.
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_time: Option<f64>,
    #[arg(long)]
    pub sample_interval: Option<f64>,
    #[arg(long, value_parser = ["exact-expm", "adaptive-rk"])]
    pub integrator: Option<String>,
    #[arg(long)]
    pub event_tolerance: Option<f64>,
    #[arg(long)]
    pub cluster_tol: Option<f64>,
    /// Also write plot.svg.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub init: Option<String>,
    pub init_file: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: u64,
    pub cluster_tol: f64,
    pub plot: bool,
    pub out: PathBuf,
    pub sim: SimOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            init: None,
            init_file: None,
            n: None,
            seed: 0,
            cluster_tol: 1e-6,
            plot: false,
            out: "out/simulate".into(),
            sim: SimOptions::default(),
        }
    }
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulateConfig> {
        let mut c: SimulateConfig = load(self.config.as_deref())?;
        if self.init.is_some() || self.init_file.is_some() {
            c.init = self.init.clone();
            c.init_file = self.init_file.clone();
        }
        if self.n.is_some() {
            c.n = self.n;
        }
        set!(c.seed, self.seed);
        set!(c.sim.max_time, self.max_time);
        set!(c.sim.sample_interval, self.sample_interval);
        set!(c.sim.event_tolerance, self.event_tolerance);
        set!(c.cluster_tol, self.cluster_tol);
        set!(c.out, self.out);
        c.plot |= self.plot;
        if let Some(i) = &self.integrator {
            c.sim.integrator = if i == "exact-expm" { Integrator::ExactExpm } else { Integrator::AdaptiveRk };
        }
        c.sim.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
pub struct ContinuumArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// linear:A:B | const:C | step:V..:W.. | quantile:<density> | file:PATH
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub knots: Option<usize>,
    /// Horizon.
    #[arg(long = "T", alias = "t-end")]
    pub t_end: Option<f64>,
    #[arg(long, value_parser = ["certified", "observed", "adaptive"])]
    pub rule: Option<String>,
    #[arg(long)]
    pub store_interval: Option<f64>,
    #[arg(long)]
    pub plateau_tol: Option<f64>,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuumConfig {
    pub init: Option<String>,
    pub knots: usize,
    pub t_end: f64,
    pub plateau_tol: f64,
    pub plot: bool,
    pub out: PathBuf,
    pub solver: ContinuumOptions,
}

impl Default for ContinuumConfig {
    fn default() -> Self {
        Self {
            init: None,
            knots: 512,
            t_end: 20.0,
            plateau_tol: 1e-4,
            plot: false,
            out: "out/continuum".into(),
            solver: ContinuumOptions { store_interval: 0.1, ..Default::default() },
        }
    }
}

impl ContinuumArgs {
    pub fn resolve(&self) -> Result<ContinuumConfig> {
        let mut c: ContinuumConfig = load(self.config.as_deref())?;
        if self.init.is_some() {
            c.init = self.init.clone();
        }
        set!(c.knots, self.knots);
        set!(c.t_end, self.t_end);
        set!(c.solver.store_interval, self.store_interval);
        set!(c.plateau_tol, self.plateau_tol);
        set!(c.out, self.out);
        c.plot |= self.plot;
        if let Some(r) = &self.rule {
            c.solver.rule = match r.as_str() {
                "certified" => SegmentRule::Certified,
                "observed" => SegmentRule::Observed,
                _ => SegmentRule::Adaptive,
            };
        }
        Ok(c)
    }
}

#[derive(Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clusters as POSITION:WEIGHT,POSITION:WEIGHT,..
    #[arg(long)]
    pub clusters: Option<String>,
    /// Run perturbing-agent probes.
    #[arg(long)]
    pub probe: bool,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub clusters: Option<String>,
    pub probe: bool,
    pub delta: f64,
    pub margin: f64,
    pub out: PathBuf,
    pub probe_options: ProbeOptions,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            clusters: None,
            probe: false,
            delta: 1e-3,
            margin: bconf::analysis::DEFAULT_MARGIN,
            out: "out/stability".into(),
            probe_options: ProbeOptions::default(),
        }
    }
}

impl StabilityArgs {
    pub fn resolve(&self) -> Result<StabilityConfig> {
        let mut c: StabilityConfig = load(self.config.as_deref())?;
        if self.clusters.is_some() {
            c.clusters = self.clusters.clone();
        }
        c.probe |= self.probe;
        set!(c.delta, self.delta);
        set!(c.margin, self.margin);
        set!(c.out, self.out);
        Ok(c)
    }
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long = "T", alias = "t-end")]
    pub t_end: Option<f64>,
    /// Comma-separated agent counts.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub init: Option<String>,
    pub knots: usize,
    pub t_end: f64,
    pub ns: Vec<usize>,
    pub out: PathBuf,
    pub bridge: BridgeOptions,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            init: None,
            knots: 512,
            t_end: 0.2,
            ns: vec![50, 100, 200, 400],
            out: "out/compare".into(),
            bridge: BridgeOptions::default(),
        }
    }
}

impl CompareArgs {
    pub fn resolve(&self) -> Result<CompareConfig> {
        let mut c: CompareConfig = load(self.config.as_deref())?;
        if self.init.is_some() {
            c.init = self.init.clone();
        }
        set!(c.knots, self.knots);
        set!(c.t_end, self.t_end);
        set!(c.ns, self.ns);
        set!(c.out, self.out);
        Ok(c)
    }
}

#[derive(Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// uniform:A:B | piecewise:B0,B1,..:L0,L1,..
    #[arg(long)]
    pub density: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also classify the continuum limit of the density.
    #[arg(long)]
    pub continuum_reference: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub density: Option<String>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub options: MonteCarloOptions,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            density: None,
            ns: vec![50, 100, 200, 400],
            trials: 100,
            seed: 0,
            out: "out/montecarlo".into(),
            options: MonteCarloOptions::default(),
        }
    }
}

impl MonteCarloArgs {
    pub fn resolve(&self) -> Result<MonteCarloConfig> {
        let mut c: MonteCarloConfig = load(self.config.as_deref())?;
        if self.density.is_some() {
            c.density = self.density.clone();
        }
        set!(c.ns, self.ns);
        set!(c.trials, self.trials);
        set!(c.seed, self.seed);
        set!(c.out, self.out);
        c.options.continuum_reference |= self.continuum_reference;
        Ok(c)
    }
}
