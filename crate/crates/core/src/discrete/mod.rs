//! Event-driven integration of the finite-agent model.
//!
//! Between topology changes the system is linear, ẋ = −L_G x. A segment is
//! integrated until the first pair gap crosses 1, the edge is toggled after
//! checking the crossing is transversal, coincident agents are merged, and
//! the loop repeats until the state is an equilibrium.

mod flow;
mod segment;

use std::collections::VecDeque;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_graph, reach_of, weighted_mean, InteractionGraph, OpinionState};
use segment::{advance, boundary_pairs, Stepper};

/// Largest system the dense exact integrator accepts.
pub const EXACT_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Per-component eigendecomposition, exact within a regime.
    ExactExpm,
    /// Dormand–Prince 5(4) with error control.
    AdaptiveRk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Connect,
    Disconnect,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EventKind::Connect => "connect",
            EventKind::Disconnect => "disconnect",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub time: f64,
    pub pair: (usize, usize),
    pub kind: EventKind,
    /// |x_i − x_j| − 1 at the located time.
    pub boundary_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub event_tolerance: f64,
    pub equilibrium_velocity_tol: f64,
    pub cluster_merge_tol: f64,
    pub max_time: f64,
    pub max_transitions_per_unit_time: u64,
    pub sample_interval: f64,
    /// Extra sample times on top of the regular grid.
    pub sample_times: Vec<f64>,
    pub integrator: Integrator,
    pub rk_rtol: f64,
    pub rk_atol: f64,
    /// Crossings with |relative velocity| at or below this are refused.
    pub degeneracy_tol: f64,
    /// Relative size of the retry perturbation; 0 disables the retry.
    pub jitter: f64,
    pub jitter_seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            event_tolerance: 1e-10,
            equilibrium_velocity_tol: 1e-9,
            cluster_merge_tol: 1e-8,
            max_time: 1e4,
            max_transitions_per_unit_time: 50_000_000,
            sample_interval: 0.1,
            sample_times: Vec::new(),
            integrator: Integrator::AdaptiveRk,
            rk_rtol: 1e-10,
            rk_atol: 1e-12,
            degeneracy_tol: 1e-12,
            jitter: 1e-12,
            jitter_seed: 0,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("event_tolerance", self.event_tolerance),
            ("equilibrium_velocity_tol", self.equilibrium_velocity_tol),
            ("cluster_merge_tol", self.cluster_merge_tol),
            ("max_time", self.max_time),
            ("sample_interval", self.sample_interval),
            ("rk_rtol", self.rk_rtol),
            ("rk_atol", self.rk_atol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_transitions_per_unit_time == 0 {
            return Err(Error::InvalidArgument("max_transitions_per_unit_time must be positive".into()));
        }
        if !(self.degeneracy_tol >= 0.0 && self.jitter >= 0.0) {
            return Err(Error::InvalidArgument("degeneracy_tol and jitter must be nonnegative".into()));
        }
        if self.sample_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument("sample_times must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub steps: u64,
    pub rejected_steps: u64,
    pub merges: u64,
    /// Whether the run had to be restarted from a perturbed initial state.
    pub jittered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<OpinionState>,
    pub events: Vec<TransitionEvent>,
    pub terminal: OpinionState,
    pub converged: bool,
    pub stats: SimStats,
}

/// ẋ = −L_G x for the given graph.
pub fn derivative(state: &OpinionState, graph: &InteractionGraph) -> Result<Vec<f64>> {
    if graph.n() != state.len() {
        return Err(Error::DimensionMismatch { expected: state.len(), got: graph.n() });
    }
    let mut out = vec![0.0; state.len()];
    crate::model::neg_laplacian_into(&state.opinions, &state.weights, graph.reaches(), &graph.lower_ends(), &mut out);
    Ok(out)
}

fn velocity(x: &[f64], w: &[f64], graph: &InteractionGraph, i: usize) -> f64 {
    (graph.lower_end(i)..=graph.reach(i)).map(|k| w[k] * (x[k] - x[i])).sum()
}

/// Integrates under the frozen graph for `horizon`, or up to the first crossing.
pub fn integrate_segment(
    state: &OpinionState,
    graph: &InteractionGraph,
    horizon: f64,
    opts: &SimOptions,
) -> Result<(OpinionState, Option<TransitionEvent>)> {
    opts.validate()?;
    if graph.n() != state.len() {
        return Err(Error::DimensionMismatch { expected: state.len(), got: graph.n() });
    }
    let mut stepper = Stepper::new();
    let adv = advance(&state.opinions, &state.weights, graph, horizon, opts, &mut stepper)?;
    let time = state.time + adv.elapsed;
    let event = adv.crossings.first().map(|c| TransitionEvent {
        time,
        pair: (c.i, c.j),
        kind: c.kind,
        boundary_gap: c.gap - 1.0,
    });
    let out = OpinionState { opinions: adv.x, weights: state.weights.clone(), time };
    Ok((out, event))
}

/// Non-degeneracy check for one crossing, given the relative velocity
/// x_j' − x_i' in the graph before the toggle.
fn transversal(w: &[f64], rel_before: f64, i: usize, j: usize, kind: EventKind, time: f64, tol: f64) -> Result<()> {
    if rel_before.abs() <= tol {
        return Err(Error::ProblematicBoundary { time, i, j, rel_velocity: rel_before });
    }
    let rel_after = match kind {
        EventKind::Disconnect => rel_before + w[i] + w[j],
        EventKind::Connect => rel_before - (w[i] + w[j]),
    };
    let away = match kind {
        EventKind::Disconnect => rel_after > 0.0,
        EventKind::Connect => rel_after < 0.0,
    };
    if !away {
        return Err(Error::ProblematicBoundary { time, i, j, rel_velocity: rel_before });
    }
    Ok(())
}

/// Toggles the event's edge after checking the crossing is transversal.
pub fn apply_transition(
    state: &OpinionState,
    graph: &InteractionGraph,
    event: &TransitionEvent,
    opts: &SimOptions,
) -> Result<InteractionGraph> {
    let (a, b) = event.pair;
    let (i, j) = (a.min(b), a.max(b));
    let n = state.len();
    if graph.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: graph.n() });
    }
    if i == j || j >= n {
        return Err(Error::InvalidArgument(format!("bad event pair ({a}, {b})")));
    }
    let x = &state.opinions;
    let w = &state.weights;
    if graph.contains(i, j) != (event.kind == EventKind::Disconnect) {
        return Err(Error::InvalidArgument(format!("{} event for pair ({i}, {j}) contradicts the graph", event.kind)));
    }
    let gap = x[j] - x[i];
    if (gap - 1.0).abs() > opts.event_tolerance {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) is not on the boundary: gap {gap}")));
    }
    let others = boundary_pairs(graph)
        .into_iter()
        .filter(|&(p, q, _)| (p, q) != (i, j))
        .filter(|&(p, q, edge)| {
            let g = x[q] - x[p];
            if edge {
                g >= 1.0
            } else {
                g < 1.0
            }
        })
        .count();
    if others > 0 {
        return Err(Error::SimultaneousEvents { time: state.time, count: others + 1 });
    }
    let rel = velocity(x, w, graph, j) - velocity(x, w, graph, i);
    transversal(w, rel, i, j, event.kind, state.time, opts.degeneracy_tol)?;
    graph.toggled(i, j)
}

/// Collapses runs of agents closer than the merge tolerance.
pub fn merge_coincident(state: &OpinionState, opts: &SimOptions) -> OpinionState {
    let ranges = coincident_runs(&state.opinions, opts.cluster_merge_tol);
    let (x, w) = collapse(&state.opinions, &state.weights, &ranges);
    OpinionState { opinions: x, weights: w, time: state.time }
}

pub(crate) fn coincident_runs(x: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=x.len() {
        if k == x.len() || x[k] - x[k - 1] >= tol {
            out.push(start..k);
            start = k;
        }
    }
    out
}

fn collapse(x: &[f64], w: &[f64], ranges: &[Range<usize>]) -> (Vec<f64>, Vec<f64>) {
    let mut nx = Vec::with_capacity(ranges.len());
    let mut nw = Vec::with_capacity(ranges.len());
    for r in ranges {
        if r.len() == 1 {
            nx.push(x[r.start]);
            nw.push(w[r.start]);
        } else {
            nx.push(weighted_mean(&x[r.clone()], &w[r.clone()]));
            nw.push(w[r.clone()].iter().sum());
        }
    }
    // the weighted mean of a run lies inside it, so order survives
    (nx, nw)
}

/// Adds an agent of weight `delta` at `x0` to an equilibrium state.
pub fn add_perturbing_agent(equilibrium: &OpinionState, delta: f64, x0: f64) -> Result<OpinionState> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("perturbing weight must be positive, got {delta}")));
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite(equilibrium.len()));
    }
    if let Some(k) = equilibrium.opinions.windows(2).position(|p| {
        let g = p[1] - p[0];
        g > EQUAL_TOL && g < 1.0 - 10.0 * EQUAL_TOL
    }) {
        return Err(Error::NotEquilibrium(format!(
            "agents {k} and {} are {} apart",
            k + 1,
            equilibrium.opinions[k + 1] - equilibrium.opinions[k]
        )));
    }
    let pos = equilibrium.opinions.partition_point(|&v| v <= x0);
    let mut x = equilibrium.opinions.clone();
    let mut w = equilibrium.weights.clone();
    x.insert(pos, x0);
    w.insert(pos, delta);
    OpinionState::new(x, w, equilibrium.time)
}

/// Values closer than this count as one cluster in equilibrium checks.
pub(crate) const EQUAL_TOL: f64 = 1e-8;

struct SampleClock {
    interval: f64,
    k: u64,
    extra: Vec<f64>,
    e: usize,
    last: f64,
}

impl SampleClock {
    fn new(interval: f64, mut extra: Vec<f64>) -> Self {
        extra.sort_by(f64::total_cmp);
        extra.dedup();
        Self { interval, k: 1, extra, e: 0, last: 0.0 }
    }

    fn next(&self) -> f64 {
        let regular = self.k as f64 * self.interval;
        match self.extra.get(self.e) {
            Some(&t) if t < regular => t,
            _ => regular,
        }
    }

    fn pop(&mut self) -> f64 {
        let t = self.next();
        while (self.k as f64 * self.interval) <= t {
            self.k += 1;
        }
        while self.e < self.extra.len() && self.extra[self.e] <= t {
            self.e += 1;
        }
        self.last = t;
        t
    }
}

/// Runs the event-driven simulation to equilibrium or `max_time`.
pub fn simulate(initial: &OpinionState, opts: &SimOptions) -> Result<Trajectory> {
    opts.validate()?;
    OpinionState::new(initial.opinions.clone(), initial.weights.clone(), initial.time)?;
    if opts.integrator == Integrator::ExactExpm && initial.len() > EXACT_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "exact integrator supports at most {EXACT_LIMIT} agents, got {}",
            initial.len()
        )));
    }
    check_generic(&initial.opinions, opts)?;
    match run(initial, opts) {
        Err(e @ Error::ProblematicBoundary { .. }) if opts.jitter > 0.0 => {
            log::warn!("{e}; retrying from a jittered initial condition (relative size {})", opts.jitter);
            let jittered = jitter(initial, opts.jitter, opts.jitter_seed)?;
            check_generic(&jittered.opinions, opts)?;
            let mut traj = run(&jittered, opts)?;
            traj.stats.jittered = true;
            Ok(traj)
        }
        other => other,
    }
}

fn check_generic(x: &[f64], opts: &SimOptions) -> Result<()> {
    let reach = reach_of(x);
    let g = InteractionGraph::from_reach(reach);
    for (i, j, _) in boundary_pairs(&g) {
        if ((x[j] - x[i]) - 1.0).abs() <= opts.event_tolerance {
            return Err(Error::NonGenericInitial(i, j));
        }
    }
    Ok(())
}

fn jitter(state: &OpinionState, rel: f64, seed: u64) -> Result<OpinionState> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = state
        .opinions
        .iter()
        .map(|&x| x + rel * x.abs().max(1.0) * rng.gen_range(-1.0..=1.0))
        .collect();
    let mut s = crate::model::canonicalize(&raw, Some(&state.weights))?;
    s.time = state.time;
    Ok(s)
}

struct Sim<'a> {
    opts: &'a SimOptions,
    /// Original agent count and weights.
    weights0: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    members: Vec<Range<usize>>,
    graph: InteractionGraph,
    t: f64,
    recent: VecDeque<f64>,
    events: Vec<TransitionEvent>,
    stats: SimStats,
}

impl Sim<'_> {
    fn expanded(&self) -> OpinionState {
        let mut x = vec![0.0; self.weights0.len()];
        for (k, r) in self.members.iter().enumerate() {
            x[r.clone()].iter_mut().for_each(|v| *v = self.x[k]);
        }
        OpinionState { opinions: x, weights: self.weights0.clone(), time: self.t }
    }

    fn merge(&mut self) {
        let runs = coincident_runs(&self.x, self.opts.cluster_merge_tol);
        if runs.len() == self.x.len() {
            return;
        }
        self.stats.merges += (self.x.len() - runs.len()) as u64;
        let (x, w) = collapse(&self.x, &self.w, &runs);
        self.members = runs.iter().map(|r| self.members[r.start].start..self.members[r.end - 1].end).collect();
        self.x = x;
        self.w = w;
        self.graph = InteractionGraph::from_reach(reach_of(&self.x));
    }

    fn log_event(&mut self, i: usize, j: usize, kind: EventKind, gap: f64) -> Result<()> {
        self.events.push(TransitionEvent {
            time: self.t,
            pair: (self.members[i].end - 1, self.members[j].start),
            kind,
            boundary_gap: gap - 1.0,
        });
        self.recent.push_back(self.t);
        while let Some(&front) = self.recent.front() {
            if front < self.t - 1.0 {
                self.recent.pop_front();
            } else {
                break;
            }
        }
        if self.recent.len() as u64 > self.opts.max_transitions_per_unit_time {
            return Err(Error::ZenoGuardTripped { time: self.t, limit: self.opts.max_transitions_per_unit_time });
        }
        Ok(())
    }

    fn at_equilibrium(&self) -> bool {
        if self.graph.edge_count() > 0 {
            return false;
        }
        let mut v = vec![0.0; self.x.len()];
        crate::model::neg_laplacian_into(&self.x, &self.w, self.graph.reaches(), &self.graph.lower_ends(), &mut v);
        v.iter().all(|d| d.abs() < self.opts.equilibrium_velocity_tol)
    }
}

fn run(initial: &OpinionState, opts: &SimOptions) -> Result<Trajectory> {
    let n = initial.len();
    let mut sim = Sim {
        opts,
        weights0: initial.weights.clone(),
        x: initial.opinions.clone(),
        w: initial.weights.clone(),
        members: (0..n).map(|i| i..i + 1).collect(),
        graph: build_graph(initial),
        t: initial.time,
        recent: VecDeque::new(),
        events: Vec::new(),
        stats: SimStats::default(),
    };
    sim.merge();
    let t0 = initial.time;
    let mut clock = SampleClock::new(opts.sample_interval, opts.sample_times.iter().map(|t| t - t0).filter(|t| *t > 0.0).collect());
    let mut samples = vec![sim.expanded()];
    let mut stepper = Stepper::new();
    let end = t0 + opts.max_time;
    let mut converged = false;
    loop {
        if sim.at_equilibrium() {
            converged = true;
            break;
        }
        if sim.t >= end {
            break;
        }
        // equilibrium is only checked between advances, so never run
        // further than a doubling checkpoint past the last one
        let checkpoint = sim.t + (sim.t - t0).max(1.0);
        let target = (t0 + clock.next()).min(end).min(checkpoint);
        let adv = advance(&sim.x, &sim.w, &sim.graph, target - sim.t, opts, &mut stepper)?;
        sim.x = adv.x;
        if adv.crossings.is_empty() {
            sim.t = target;
        } else {
            sim.t += adv.elapsed;
            apply_batch(&mut sim, &adv.crossings)?;
        }
        sim.merge();
        if sim.t >= t0 + clock.next() {
            clock.pop();
            samples.push(sim.expanded());
        }
    }
    sim.stats.steps = stepper.steps;
    sim.stats.rejected_steps = stepper.rejected;
    let terminal = sim.expanded();
    if converged {
        // the state is stationary from here on; honour explicit requests
        while clock.e < clock.extra.len() && t0 + clock.extra[clock.e] <= end {
            let mut s = terminal.clone();
            s.time = t0 + clock.extra[clock.e];
            if s.time > samples.last().map_or(f64::NEG_INFINITY, |p| p.time) {
                samples.push(s);
            }
            clock.e += 1;
        }
    } else if samples.last().map_or(true, |s| s.time < terminal.time) {
        samples.push(terminal.clone());
    }
    Ok(Trajectory { samples, events: sim.events, terminal, converged, stats: sim.stats })
}

/// Toggles a batch of crossings due at the same instant, in lexicographic
/// order, re-evaluating velocities after each toggle.
fn apply_batch(sim: &mut Sim<'_>, batch: &[segment::Crossing]) -> Result<()> {
    let x = sim.x.clone();
    let w = sim.w.clone();
    let base: Vec<(usize, f64)> = {
        let mut ids: Vec<usize> = batch.iter().flat_map(|c| [c.i, c.j]).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().map(|k| (k, velocity(&x, &w, &sim.graph, k))).collect()
    };
    let vel0 = |k: usize| base.iter().find(|e| e.0 == k).map(|e| e.1).unwrap_or(0.0);
    let mut done: Vec<(usize, usize, EventKind)> = Vec::new();
    for c in batch {
        let vel = |k: usize| {
            let mut v = vel0(k);
            for &(p, q, kind) in &done {
                let s = if kind == EventKind::Connect { 1.0 } else { -1.0 };
                if p == k {
                    v += s * w[q] * (x[q] - x[k]);
                } else if q == k {
                    v += s * w[p] * (x[p] - x[k]);
                }
            }
            v
        };
        let rel = vel(c.j) - vel(c.i);
        transversal(&w, rel, c.i, c.j, c.kind, sim.t, sim.opts.degeneracy_tol)?;
        done.push((c.i, c.j, c.kind));
        sim.log_event(c.i, c.j, c.kind, x[c.j] - x[c.i])?;
    }
    let expected = sim.graph.edge_count() + done.iter().filter(|d| d.2 == EventKind::Connect).count()
        - done.iter().filter(|d| d.2 == EventKind::Disconnect).count();
    sim.graph = InteractionGraph::from_reach(reach_of(&sim.x));
    if sim.graph.edge_count() != expected {
        log::debug!("graph rebuilt at t = {} differs from the toggled one", sim.t);
    }
    Ok(())
}

#[cfg(test)]
mod tests;
