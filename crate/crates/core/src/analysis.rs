//! Clusters of an equilibrium, the pairwise stability threshold, empirical
//! stability probes and conservation audits of trajectories.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::discrete::{add_perturbing_agent, simulate, SimOptions, Trajectory};
use crate::error::{Error, Result};
use crate::model::{weighted_mean, OpinionState};

/// Default half-width of the marginal band in `classify_pair`.
pub const DEFAULT_MARGIN: f64 = 1e-9;
/// Separations in [1, 1 + this] are flagged: they sit on the connectivity edge.
pub const UNIT_SEPARATION_FLAG: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub position: f64,
    pub weight: f64,
    /// Half-open index range of the members in the sorted state.
    pub member_indices: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Marginal => "marginal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub cluster_tol: f64,
    pub margin: Option<f64>,
    pub unit_separation_flag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<Cluster>,
    pub separations: Vec<f64>,
    /// One entry per adjacent pair; empty until classified.
    pub classifications: Vec<Stability>,
    pub overall: Option<Stability>,
    /// Adjacent pairs whose separation lies in [1, 1 + 1e-6].
    pub marginal_unit_separations: Vec<usize>,
    pub tolerances: Tolerances,
    pub notes: Vec<String>,
}

impl ClusterReport {
    /// Classifies every adjacent pair and derives the overall verdict from
    /// all pairs.
    pub fn classified(mut self, margin: f64) -> Self {
        let c = &self.clusters;
        self.classifications = c.windows(2).map(|p| classify_pair(&p[0], &p[1], margin)).collect();
        let mut overall = Stability::Stable;
        for a in 0..c.len() {
            for b in a + 1..c.len() {
                match classify_pair(&c[a], &c[b], margin) {
                    Stability::Unstable => overall = Stability::Unstable,
                    Stability::Marginal if overall == Stability::Stable => overall = Stability::Marginal,
                    _ => {}
                }
            }
        }
        if self.classifications.contains(&Stability::Marginal) {
            self.notes.push(
                "marginal: separation equals the threshold within the margin; exact equality is unstable \
                 (a perturber at the center of mass has non-unique continuations)"
                    .into(),
            );
        }
        self.overall = Some(overall);
        self.tolerances.margin = Some(margin);
        self
    }

    pub fn min_separation(&self) -> Option<f64> {
        self.separations.iter().copied().reduce(f64::min)
    }

    pub fn total_weight(&self) -> f64 {
        self.clusters.iter().map(|c| c.weight).sum()
    }
}

/// Maximal runs of agents with consecutive gaps below `tol`.
pub fn extract_clusters(state: &OpinionState, tol: f64) -> ClusterReport {
    let x = &state.opinions;
    let w = &state.weights;
    let mut clusters = Vec::new();
    let mut start = 0;
    for k in 1..=x.len() {
        if k == x.len() || x[k] - x[k - 1] >= tol {
            clusters.push(Cluster {
                position: weighted_mean(&x[start..k], &w[start..k]),
                weight: w[start..k].iter().sum(),
                member_indices: start..k,
            });
            start = k;
        }
    }
    report_from(clusters, tol)
}

pub(crate) fn report_from(clusters: Vec<Cluster>, tol: f64) -> ClusterReport {
    let separations: Vec<f64> = clusters.windows(2).map(|p| p[1].position - p[0].position).collect();
    let marginal_unit_separations = separations
        .iter()
        .enumerate()
        .filter(|(_, &d)| (1.0..=1.0 + UNIT_SEPARATION_FLAG).contains(&d))
        .map(|(k, _)| k)
        .collect();
    ClusterReport {
        clusters,
        separations,
        classifications: Vec::new(),
        overall: None,
        marginal_unit_separations,
        tolerances: Tolerances { cluster_tol: tol, margin: None, unit_separation_flag: UNIT_SEPARATION_FLAG },
        notes: Vec::new(),
    }
}

/// d = 1 + min/max of the two cluster weights.
pub fn stability_threshold(wa: f64, wb: f64) -> Result<f64> {
    if !(wa > 0.0 && wb > 0.0 && wa.is_finite() && wb.is_finite()) {
        return Err(Error::InvalidArgument(format!("cluster weights must be positive, got {wa} and {wb}")));
    }
    Ok(1.0 + wa.min(wb) / wa.max(wb))
}

pub fn classify_pair(a: &Cluster, b: &Cluster, margin: f64) -> Stability {
    let d = 1.0 + a.weight.min(b.weight) / a.weight.max(b.weight);
    let sep = (b.position - a.position).abs();
    if sep > d + margin {
        Stability::Stable
    } else if sep < d - margin {
        Stability::Unstable
    } else {
        Stability::Marginal
    }
}

pub fn center_of_mass(a: &Cluster, b: &Cluster) -> f64 {
    (a.weight * a.position + b.weight * b.position) / (a.weight + b.weight)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub sim: SimOptions,
    /// Perturbers are also placed at distance 1 − epsilon from each cluster.
    pub epsilon: f64,
    pub edge_probes: bool,
    pub cluster_tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            sim: SimOptions { sample_interval: 1.0, max_time: 1e5, ..SimOptions::default() },
            epsilon: 1e-3,
            edge_probes: true,
            cluster_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub location: f64,
    /// Adjacent pair index for center-of-mass probes, cluster index otherwise.
    pub origin: String,
    pub displacement: f64,
    pub merged: bool,
    pub converged: bool,
    /// Why the probe was not simulated, if it was not.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub delta: f64,
    pub max_displacement: f64,
    pub merged: bool,
    pub probes: Vec<ProbeOutcome>,
    pub notes: Vec<String>,
}

/// Adds a perturbing agent at each decisive location and measures how far
/// the original agents move.
pub fn probe_stability(equilibrium: &OpinionState, delta: f64, opts: &ProbeOptions) -> Result<ProbeReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let report = extract_clusters(equilibrium, opts.cluster_tol);
    if let Some(k) = report.separations.iter().position(|&d| d < 1.0) {
        return Err(Error::NotEquilibrium(format!("clusters {k} and {} are closer than 1", k + 1)));
    }
    let cl = &report.clusters;
    let mut locations: Vec<(f64, String)> = cl
        .windows(2)
        .enumerate()
        .map(|(k, p)| (center_of_mass(&p[0], &p[1]), format!("center of mass {k}-{}", k + 1)))
        .collect();
    if opts.edge_probes {
        let r = 1.0 - opts.epsilon;
        for (k, c) in cl.iter().enumerate() {
            locations.push((c.position - r, format!("cluster {k} - (1 - eps)")));
            locations.push((c.position + r, format!("cluster {k} + (1 - eps)")));
        }
    }
    let guard = 10.0 * opts.sim.event_tolerance;
    let mut probes = Vec::with_capacity(locations.len());
    for (loc, origin) in locations {
        if cl.iter().any(|c| ((loc - c.position).abs() - 1.0).abs() <= guard) {
            probes.push(ProbeOutcome {
                location: loc,
                origin,
                displacement: 0.0,
                merged: false,
                converged: false,
                skipped: Some("perturber at unit distance from a cluster: marginal, solution not unique".into()),
            });
            continue;
        }
        probes.push(run_probe(equilibrium, &report, delta, loc, origin, opts)?);
    }
    let max_displacement = probes.iter().map(|p| p.displacement).fold(0.0, f64::max);
    let merged = probes.iter().any(|p| p.merged);
    Ok(ProbeReport {
        delta,
        max_displacement,
        merged,
        probes,
        notes: vec!["displacement measured on the generic solution only; non-unique continuations are not explored".into()],
    })
}

fn run_probe(
    eq: &OpinionState,
    report: &ClusterReport,
    delta: f64,
    loc: f64,
    origin: String,
    opts: &ProbeOptions,
) -> Result<ProbeOutcome> {
    let state = add_perturbing_agent(eq, delta, loc)?;
    let pos = eq.opinions.partition_point(|&v| v <= loc);
    let traj = simulate(&state, &opts.sim)?;
    let original = |s: &OpinionState| -> Vec<f64> {
        s.opinions.iter().enumerate().filter(|(k, _)| *k != pos).map(|(_, v)| *v).collect()
    };
    let mut displacement: f64 = 0.0;
    for s in traj.samples.iter().chain(std::iter::once(&traj.terminal)) {
        for (x, x0) in original(s).iter().zip(&eq.opinions) {
            displacement = displacement.max((x - x0).abs());
        }
    }
    // clusters merged if two originally distinct clusters now share a value
    let fin = original(&traj.terminal);
    let merged = report.clusters.windows(2).any(|p| {
        let a = fin[p[0].member_indices.end - 1];
        let b = fin[p[1].member_indices.start];
        (b - a).abs() < 1e-6
    });
    Ok(ProbeOutcome { location: loc, origin, displacement, merged, converged: traj.converged, skipped: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub samples: usize,
    pub initial_mean: f64,
    /// max |mean(t) − mean(0)| relative to the larger of |mean(0)| and max |x_i(0)|.
    pub max_mean_drift_rel: f64,
    /// Largest V(t_{k+1}) − V(t_k), zero if V never increases.
    pub max_variance_increase: f64,
    /// (sample index, agent index) where x_{i+1} < x_i.
    pub order_violations: Vec<(usize, usize)>,
}

impl AuditRecord {
    pub fn passes(&self, drift_tol: f64, variance_tol: f64) -> bool {
        self.max_mean_drift_rel <= drift_tol && self.max_variance_increase <= variance_tol && self.order_violations.is_empty()
    }
}

pub fn audit(trajectory: &Trajectory) -> AuditRecord {
    let states: Vec<&OpinionState> =
        trajectory.samples.iter().chain(std::iter::once(&trajectory.terminal)).collect();
    let first = states[0];
    let mean0 = first.weighted_mean();
    let scale = first.opinions.iter().fold(mean0.abs(), |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut drift: f64 = 0.0;
    let mut var_inc: f64 = 0.0;
    let mut order = Vec::new();
    let mut prev_var = first.variance();
    for (k, s) in states.iter().enumerate() {
        drift = drift.max((s.weighted_mean() - mean0).abs() / scale);
        let v = s.variance();
        if k > 0 {
            var_inc = var_inc.max(v - prev_var);
        }
        prev_var = v;
        for i in 1..s.opinions.len() {
            if s.opinions[i] < s.opinions[i - 1] {
                order.push((k, i - 1));
            }
        }
    }
    AuditRecord {
        samples: trajectory.samples.len(),
        initial_mean: mean0,
        max_mean_drift_rel: drift,
        max_variance_increase: var_inc,
        order_violations: order,
    }
}
