//! Links between the two models: step embeddings of discrete states,
//! sampling of continuum data, finite-horizon approximation errors and the
//! Monte-Carlo harness for random initial opinions.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{extract_clusters, Stability, DEFAULT_MARGIN};
use crate::continuum::{extract_continuum_clusters, solve_continuum, ContinuumOptions, OpinionFunction};
use crate::discrete::{simulate, SimOptions};
use crate::error::{Error, Result};
use crate::model::OpinionState;

/// Distribution of initial opinions: bounded, bounded away from zero on a
/// connected support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform { a: f64, b: f64 },
    /// Density proportional to `levels[k]` on `[breakpoints[k], breakpoints[k+1])`.
    PiecewiseConstant { breakpoints: Vec<f64>, levels: Vec<f64> },
}

impl DensitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DensitySpec::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return Err(Error::InvalidArgument(format!("uniform({a}, {b}) needs a < b")));
                }
            }
            DensitySpec::PiecewiseConstant { breakpoints, levels } => {
                if levels.is_empty() || breakpoints.len() != levels.len() + 1 {
                    return Err(Error::InvalidArgument("need one more breakpoint than levels".into()));
                }
                if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::InvalidArgument("breakpoints must be finite and increasing".into()));
                }
                if levels.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                    // a zero level would disconnect the support
                    return Err(Error::InvalidArgument("levels must be positive and finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            DensitySpec::Uniform { a, b } => (*a, *b),
            DensitySpec::PiecewiseConstant { breakpoints, .. } => (breakpoints[0], *breakpoints.last().unwrap()),
        }
    }

    /// Inverse distribution function on [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            DensitySpec::Uniform { a, b } => a + (b - a) * u,
            DensitySpec::PiecewiseConstant { breakpoints, levels } => {
                let mass: Vec<f64> = levels.iter().zip(breakpoints.windows(2)).map(|(l, b)| l * (b[1] - b[0])).collect();
                let total: f64 = mass.iter().sum();
                let mut target = u * total;
                for (k, m) in mass.iter().enumerate() {
                    if target <= *m || k + 1 == mass.len() {
                        return (breakpoints[k] + target / levels[k]).min(breakpoints[k + 1]);
                    }
                    target -= m;
                }
                unreachable!()
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// `n` sorted draws from a ChaCha stream seeded with `seed`.
    pub fn draw(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..n).map(|_| self.sample(&mut rng)).collect();
        x.sort_by(f64::total_cmp);
        x
    }

    /// The quantile function on `k` uniform pieces: the continuum state
    /// whose agents are distributed like this density.
    pub fn quantile_function(&self, k: usize) -> Result<OpinionFunction> {
        OpinionFunction::from_fn(k, |u| self.quantile(u))
    }
}

impl FromStr for DensitySpec {
    type Err = Error;

    /// `uniform:A:B` or `piecewise:B0,B1,...:L0,L1,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse density `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let list = |t: &str| t.split(',').map(num).collect::<Result<Vec<f64>>>();
        let d = match parts.as_slice() {
            ["uniform", a, b] => DensitySpec::Uniform { a: num(a)?, b: num(b)? },
            ["piecewise", b, l] => DensitySpec::PiecewiseConstant { breakpoints: list(b)?, levels: list(l)? },
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Step function with plateau i of width w_i/Σw at height x_i.
pub fn embed_discrete(state: &OpinionState) -> Result<OpinionFunction> {
    if state.opinions.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidArgument("embedding needs sorted opinions".into()));
    }
    OpinionFunction::step(&state.opinions, &state.weights)
}

/// ξ_i = x0(i/n) for i = 1..n, each with weight 1/n.
pub fn sample_continuum(x0: &OpinionFunction, n: usize) -> Result<OpinionState> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let xi = (1..=n).map(|i| x0.eval(i as f64 / n as f64)).collect();
    OpinionState::new(xi, vec![1.0 / n as f64; n], 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeOptions {
    pub sim: SimOptions,
    pub continuum: ContinuumOptions,
    /// Allowance for solver error when comparing against the analytic bound.
    pub solver_tol: f64,
    /// Size of the order-preserving shift applied to sampled data that puts
    /// some pair at distance exactly 1 (see `approximation_error`).
    pub tangency_offset: f64,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            sim: SimOptions::default(),
            continuum: ContinuumOptions { stop_at_equilibrium: false, ..Default::default() },
            solver_tol: 1e-6,
            tangency_offset: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    pub n: usize,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// ‖embedded discrete − continuum‖∞ per compared time.
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// Embedding error of the sampled data at t = 0.
    pub initial_error: f64,
    /// ‖y0 − x0‖∞ · e^{T(2 + (8/m)e^T)}.
    pub analytic_bound: f64,
    pub within_bound: bool,
    pub tangency_offset_applied: bool,
    pub events: usize,
    pub notes: Vec<String>,
}

/// Runs both models from x0 over [0, T] (discrete on `sample_continuum(x0, n)`)
/// and compares them at every stored continuum time.
///
/// Uniform samples of linear data often contain pairs at distance exactly 1,
/// which the event-driven simulator rejects as tangent. Those runs are
/// repeated after subtracting δ(1 − i/n)² from ξ_i, with δ =
/// `tangency_offset`: the shift is order-preserving, widens every gap, so
/// the initial interaction graph is unchanged, and never raises the
/// embedding error.
pub fn approximation_error(x0: &OpinionFunction, n: usize, horizon: f64, opts: &BridgeOptions) -> Result<ApproximationReport> {
    if !x0.is_regular() {
        return Err(Error::NonRegular("approximation needs regular initial data".into()));
    }
    let cont = solve_continuum(x0, horizon, &ContinuumOptions { store_interval: 0.0, ..opts.continuum.clone() })?;
    let mut xi = sample_continuum(x0, n)?;
    let sim = SimOptions {
        max_time: horizon,
        sample_interval: horizon,
        sample_times: cont.times.clone(),
        ..opts.sim.clone()
    };
    sim.validate()?;
    let mut notes = Vec::new();
    let (traj, shifted) = match simulate(&xi, &sim) {
        Err(Error::NonGenericInitial(i, j)) => {
            for (i, x) in xi.opinions.iter_mut().enumerate() {
                let s = 1.0 - (i + 1) as f64 / n as f64;
                *x -= opts.tangency_offset * s * s;
            }
            notes.push(format!(
                "agents {i} and {j} started at distance 1; sample shifted by at most {}",
                opts.tangency_offset
            ));
            (simulate(&xi, &sim)?, true)
        }
        r => (r?, false),
    };
    let mut times = Vec::new();
    let mut errors = Vec::new();
    for (t, f) in cont.times.iter().zip(&cont.states) {
        let Some(s) = traj.samples.iter().find(|s| (s.time - t).abs() <= 1e-12 * t.max(1.0)) else {
            continue;
        };
        times.push(*t);
        errors.push(embed_discrete(s)?.sup_distance(f));
    }
    if times.len() != cont.times.len() {
        notes.push(format!("{} of {} continuum times had no discrete sample", cont.times.len() - times.len(), cont.times.len()));
    }
    let initial_error = embed_discrete(&xi)?.sup_distance(x0);
    let m = x0.m_lower();
    let analytic_bound = initial_error * (horizon * (2.0 + 8.0 / m * horizon.exp())).exp();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(ApproximationReport {
        n,
        horizon,
        within_bound: max_error <= analytic_bound + opts.solver_tol,
        times,
        errors,
        max_error,
        initial_error,
        analytic_bound,
        tangency_offset_applied: shifted,
        events: traj.events.len(),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloOptions {
    pub sim: SimOptions,
    pub cluster_tol: f64,
    pub margin: f64,
    /// Also solve the continuum equation from the quantile function of the
    /// density and classify its limit.
    pub continuum_reference: bool,
    pub continuum: ContinuumOptions,
    pub continuum_knots: usize,
    pub continuum_horizon: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            sim: SimOptions { sample_interval: 1e9, max_time: 1e6, ..Default::default() },
            cluster_tol: 1e-6,
            margin: DEFAULT_MARGIN,
            continuum_reference: false,
            continuum: ContinuumOptions { store_interval: 1e9, ..Default::default() },
            continuum_knots: 512,
            continuum_horizon: 5000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub clusters: usize,
    pub min_separation: Option<f64>,
    /// stable, marginal, unstable, or failed.
    pub classification: String,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub n: usize,
    pub trials: usize,
    pub converged: usize,
    pub failed: usize,
    pub stable: usize,
    pub marginal: usize,
    pub unstable: usize,
    pub stable_fraction: f64,
    pub mean_clusters: f64,
    /// Mean over trials with at least two clusters of the mean adjacent
    /// separation; `None` if there were none.
    pub mean_separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub density: DensitySpec,
    pub seed: u64,
    pub rungs: Vec<LadderRung>,
    pub records: Vec<TrialRecord>,
    /// Classification of the continuum limit: stable, unstable, or
    /// inconclusive when it falls in the marginal band. `None` when not run.
    pub continuum_reference: Option<String>,
    pub notes: Vec<String>,
}

impl MonteCarloReport {
    /// Flat CSV: `n,trial,clusters,min_separation,classification`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,trial,clusters,min_separation,classification\n");
        for r in &self.records {
            let sep = r.min_separation.map(|d| d.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.n, r.trial, r.clusters, sep, r.classification));
        }
        s
    }
}

/// Independent stream for (seed, n, trial).
pub fn trial_rng(seed: u64, n: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | trial as u64);
    rng
}

fn run_trial(density: &DensitySpec, n: usize, trial: usize, seed: u64, opts: &MonteCarloOptions) -> TrialRecord {
    let mut rng = trial_rng(seed, n, trial);
    let mut x: Vec<f64> = (0..n).map(|_| density.sample(&mut rng)).collect();
    x.sort_by(f64::total_cmp);
    let failed = |e: Error| TrialRecord {
        n,
        trial,
        clusters: 0,
        min_separation: None,
        classification: "failed".into(),
        converged: false,
        error: Some(e.to_string()),
    };
    let state = match OpinionState::unweighted(x) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    let mut sim = opts.sim.clone();
    sim.jitter_seed = sim.jitter_seed.wrapping_add(trial as u64);
    match simulate(&state, &sim) {
        Ok(t) => {
            let r = extract_clusters(&t.terminal, opts.cluster_tol).classified(opts.margin);
            TrialRecord {
                n,
                trial,
                clusters: r.clusters.len(),
                min_separation: r.min_separation(),
                classification: if t.converged { r.overall.unwrap().to_string() } else { "failed".into() },
                converged: t.converged,
                error: (!t.converged).then(|| "did not converge within max_time".into()),
            }
        }
        Err(e) => failed(e),
    }
}

fn rung(n: usize, records: &[TrialRecord]) -> LadderRung {
    let count = |c: &str| records.iter().filter(|r| r.classification == c).count();
    let seps: Vec<f64> = records
        .iter()
        .filter(|r| r.clusters >= 2 && r.classification != "failed")
        .filter_map(|r| r.min_separation)
        .collect();
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.classification != "failed").collect();
    LadderRung {
        n,
        trials: records.len(),
        converged: records.iter().filter(|r| r.converged).count(),
        failed: count("failed"),
        stable: count("stable"),
        marginal: count("marginal"),
        unstable: count("unstable"),
        stable_fraction: count("stable") as f64 / records.len() as f64,
        mean_clusters: ok.iter().map(|r| r.clusters as f64).sum::<f64>() / ok.len().max(1) as f64,
        mean_separation: (!seps.is_empty()).then(|| seps.iter().sum::<f64>() / seps.len() as f64),
    }
}

/// For each n, draws `trials` sorted i.i.d. samples from `density`, runs them
/// to equilibrium and classifies the outcome. Deterministic in `seed`.
pub fn monte_carlo_conjecture(
    density: &DensitySpec,
    ns: &[usize],
    trials: usize,
    seed: u64,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloReport> {
    density.validate()?;
    if trials == 0 || ns.contains(&0) {
        return Err(Error::InvalidArgument("trials and every n must be positive".into()));
    }
    let mut records = Vec::new();
    let mut rungs = Vec::new();
    for &n in ns {
        let recs: Vec<TrialRecord> =
            (0..trials).into_par_iter().map(|k| run_trial(density, n, k, seed, opts)).collect();
        rungs.push(rung(n, &recs));
        records.extend(recs);
    }
    let mut notes = Vec::new();
    let (a, b) = density.support();
    if b - a < 1.0 {
        notes.push("support diameter below 1: every sample is fully connected and reaches consensus".into());
    }
    let continuum_reference = if opts.continuum_reference {
        let f = density.quantile_function(opts.continuum_knots)?;
        let t = solve_continuum(&f, opts.continuum_horizon, &opts.continuum)?;
        let r = extract_continuum_clusters(t.terminal(), 1e-4, None);
        if !t.converged {
            notes.push("continuum reference did not converge; classification is provisional".into());
        }
        Some(match r.overall {
            Some(Stability::Marginal) => "inconclusive".to_string(),
            Some(s) => s.to_string(),
            None => "inconclusive".to_string(),
        })
    } else {
        None
    };
    Ok(MonteCarloReport { density: density.clone(), seed, rungs, records, continuum_reference, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::operator_l;
    use crate::discrete::derivative;
    use crate::model::build_graph;

    #[test]
    fn embedding_examples() {
        let f = embed_discrete(&OpinionState::unweighted(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(0.49), 0.0);
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(1.0), 1.0);
        let one = embed_discrete(&OpinionState::unweighted(vec![2.0]).unwrap()).unwrap();
        assert!(one.values().iter().all(|v| *v == 2.0));
        let w = embed_discrete(&OpinionState::new(vec![0.0, 3.0], vec![3.0, 1.0], 0.0).unwrap()).unwrap();
        assert_eq!(w.eval(0.74), 0.0);
        assert_eq!(w.eval(0.75), 3.0);
    }

    #[test]
    fn sampling_examples() {
        let f = OpinionFunction::linear(0.0, 1.0, 8).unwrap();
        let s = sample_continuum(&f, 4).unwrap();
        assert_eq!(s.opinions, vec![0.25, 0.5, 0.75, 1.0]);
        assert!(s.weights.iter().all(|w| *w == 0.25));
        assert!(sample_continuum(&f, 0).is_err());
        let g = OpinionFunction::linear(0.0, 10.0, 512).unwrap();
        let mut prev = f64::INFINITY;
        for n in [25, 50, 100, 200] {
            let e = embed_discrete(&sample_continuum(&g, n).unwrap()).unwrap().sup_distance(&g);
            assert!(e <= 10.0 / n as f64 + 1e-12);
            assert!((e - prev / 2.0).abs() < 1e-9 || prev.is_infinite());
            prev = e;
        }
    }

    #[test]
    fn operator_commutes_with_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..40);
            let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
            x.sort_by(f64::total_cmp);
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let total: f64 = w.iter().sum();
            let s = OpinionState::new(x, w.iter().map(|v| v / total).collect(), 0.0).unwrap();
            let d = derivative(&s, &build_graph(&s)).unwrap();
            let f = embed_discrete(&s).unwrap();
            let r = operator_l(&f);
            // knots come in pairs, one pair per agent
            for i in 0..n {
                assert!((r[2 * i] - d[i]).abs() < 1e-10 && (r[2 * i + 1] - d[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn density_parsing_and_quantiles() {
        let u: DensitySpec = "uniform:0:10".parse().unwrap();
        assert_eq!(u.quantile(0.25), 2.5);
        let p: DensitySpec = "piecewise:0,1,3:2,1".parse().unwrap();
        // masses 2 and 2: the median sits at the first breakpoint
        assert!((p.quantile(0.5) - 1.0).abs() < 1e-15);
        assert!((p.quantile(0.75) - 2.0).abs() < 1e-15);
        assert!("uniform:3:1".parse::<DensitySpec>().is_err());
        assert!("piecewise:0,1:0".parse::<DensitySpec>().is_err());
        assert!("normal:0:1".parse::<DensitySpec>().is_err());
        let q = p.quantile_function(64).unwrap();
        assert!(q.is_regular());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let d = DensitySpec::Uniform { a: 0.0, b: 4.0 };
        let o = MonteCarloOptions::default();
        let a = monte_carlo_conjecture(&d, &[10, 20], 6, 5, &o).unwrap();
        let b = monte_carlo_conjecture(&d, &[10, 20], 6, 5, &o).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        for r in &a.rungs {
            assert_eq!(r.stable + r.marginal + r.unstable + r.failed, r.trials);
        }
        assert_ne!(a, monte_carlo_conjecture(&d, &[10, 20], 6, 6, &o).unwrap());
    }

    #[test]
    fn narrow_support_always_stable() {
        let d = DensitySpec::Uniform { a: 0.0, b: 0.5 };
        let r = monte_carlo_conjecture(&d, &[5, 30], 10, 1, &MonteCarloOptions::default()).unwrap();
        for g in &r.rungs {
            assert_eq!(g.stable_fraction, 1.0);
            assert_eq!(g.mean_clusters, 1.0);
        }
    }

    #[test]
    fn short_horizon_ladder() {
        let f = OpinionFunction::linear(0.0, 10.0, 256).unwrap();
        let o = BridgeOptions::default();
        let mut prev = f64::INFINITY;
        for n in [20, 40, 80] {
            let r = approximation_error(&f, n, 0.1, &o).unwrap();
            assert!(r.tangency_offset_applied);
            assert!(r.initial_error <= 10.0 / n as f64 + 1e-12);
            assert!((r.errors[0] - r.initial_error).abs() < 1e-15);
            assert!(r.within_bound);
            assert!(r.max_error <= prev * 1.05);
            prev = r.max_error;
        }
    }
}
