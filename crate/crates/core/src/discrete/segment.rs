//! Advancing one linear regime and locating the first boundary crossing.

use super::flow::{DoPriPoly, EigenFlow, Flow, PolyFlow, Powers, DEG};
use super::{EventKind, Integrator, SimOptions};
use crate::error::{Error, Result};
use crate::model::InteractionGraph;

/// Sub-intervals sampled for a pair that might cross within a step.
const PROBES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Crossing {
    /// Offset from the segment start.
    pub tau: f64,
    pub i: usize,
    pub j: usize,
    pub kind: EventKind,
    pub gap: f64,
}

pub(crate) struct Advance {
    pub x: Vec<f64>,
    pub elapsed: f64,
    /// Crossings that are all due at `elapsed`, lexicographic by pair.
    pub crossings: Vec<Crossing>,
}

/// Step-size memory carried across segments.
pub(crate) struct Stepper {
    poly: DoPriPoly,
    /// Error-controlled step proposal.
    pub h: Option<f64>,
    /// Proposal limited by recent event spacing; avoids scanning far past
    /// the next crossing when events are dense.
    h_event: f64,
    powers: Powers,
    bound: Vec<f64>,
    pub steps: u64,
    pub rejected: u64,
}

impl Stepper {
    pub fn new() -> Self {
        Self { poly: DoPriPoly::new(), h: None, h_event: f64::INFINITY, powers: Powers::new(), bound: Vec::new(), steps: 0, rejected: 0 }
    }
}

/// Pairs at the ends of each agent's upper window; the only ones that can
/// cross next in a sorted state.
pub(crate) fn boundary_pairs(graph: &InteractionGraph) -> Vec<(usize, usize, bool)> {
    let n = graph.n();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let r = graph.reach(i);
        if r > i {
            out.push((i, r, true));
        }
        if r + 1 < n {
            out.push((i, r + 1, false));
        }
    }
    out
}

#[inline]
fn consistent(edge: bool, gap: f64) -> bool {
    if edge {
        gap < 1.0
    } else {
        gap >= 1.0
    }
}

/// Checks every boundary pair on [t0, t1] and returns the located crossings.
/// Once a crossing is found the window shrinks to it, so later pairs are
/// only examined up to the earliest crossing seen so far.
fn scan<F: Flow>(
    flow: &F,
    x0: &[f64],
    pairs: &[(usize, usize, bool)],
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<Vec<Crossing>> {
    let mut found = Vec::new();
    let mut limit = t1;
    for &(i, j, edge) in pairs {
        let base = x0[j] - x0[i];
        let g0 = base + flow.gap_increment(i, j, t0);
        let margin = if edge { 1.0 - g0 } else { g0 - 1.0 };
        if margin > flow.agent_bound(i) + flow.agent_bound(j) || margin > flow.gap_variation(i, j, t0, limit) {
            continue;
        }
        let gap = |t: f64| base + flow.gap_increment(i, j, t);
        let mut prev = t0;
        for s in 1..=PROBES {
            let ts = if s == PROBES { limit } else { t0 + (limit - t0) * s as f64 / PROBES as f64 };
            if consistent(edge, gap(ts)) {
                prev = ts;
                continue;
            }
            let (mut a, mut b) = (prev, ts);
            let mut gb = gap(b);
            while (gb - 1.0).abs() > tol {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    return Err(Error::BracketingFailure { time: b, i, j });
                }
                let gm = gap(mid);
                if consistent(edge, gm) {
                    a = mid;
                } else {
                    b = mid;
                    gb = gm;
                }
            }
            let kind = if edge { EventKind::Disconnect } else { EventKind::Connect };
            found.push(Crossing { tau: b, i, j, kind, gap: gb });
            limit = limit.min(b);
            break;
        }
    }
    Ok(found)
}

/// Keeps the earliest crossing plus any other pair already past the
/// boundary at that instant.
fn due_at<F: Flow>(flow: &F, x0: &[f64], found: Vec<Crossing>) -> Option<(f64, Vec<Crossing>)> {
    let first = found.iter().map(|c| c.tau).fold(f64::INFINITY, f64::min);
    if !first.is_finite() {
        return None;
    }
    let mut batch: Vec<Crossing> = found
        .into_iter()
        .filter_map(|c| {
            if c.tau == first {
                return Some(c);
            }
            let g = x0[c.j] - x0[c.i] + flow.gap_increment(c.i, c.j, first);
            let edge = c.kind == EventKind::Disconnect;
            (!consistent(edge, g)).then_some(Crossing { tau: first, gap: g, ..c })
        })
        .collect();
    batch.sort_by_key(|c| (c.i, c.j));
    Some((first, batch))
}

/// Advances under the frozen graph for at most `horizon`, stopping at the
/// first boundary crossing.
pub(crate) fn advance(
    x0: &[f64],
    w: &[f64],
    graph: &InteractionGraph,
    horizon: f64,
    opts: &SimOptions,
    stepper: &mut Stepper,
) -> Result<Advance> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let pairs = boundary_pairs(graph);
    if graph.edge_count() == 0 {
        return Ok(Advance { x: x0.to_vec(), elapsed: horizon, crossings: Vec::new() });
    }
    match opts.integrator {
        Integrator::AdaptiveRk => advance_rk(x0, w, graph, &pairs, horizon, opts, stepper),
        Integrator::ExactExpm => advance_exact(x0, w, graph, &pairs, horizon, opts),
    }
}

fn advance_exact(
    x0: &[f64],
    w: &[f64],
    graph: &InteractionGraph,
    pairs: &[(usize, usize, bool)],
    horizon: f64,
    opts: &SimOptions,
) -> Result<Advance> {
    if x0.len() > super::EXACT_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "exact integrator supports at most {} agents, got {}",
            super::EXACT_LIMIT,
            x0.len()
        )));
    }
    let flow = EigenFlow::new(x0, w, graph);
    let base_step = 1.0 / flow.lambda_max.max(1e-12);
    let mut t = 0.0;
    while t < horizon {
        // modes decay, so the grid may stretch with elapsed time
        let t1 = (t + base_step.max(0.5 * t)).min(horizon);
        let found = scan(&flow, x0, pairs, t, t1, opts.event_tolerance)?;
        if let Some((tau, crossings)) = due_at(&flow, x0, found) {
            return Ok(Advance { x: flow.state(x0, tau), elapsed: tau, crossings });
        }
        t = t1;
    }
    Ok(Advance { x: flow.state(x0, horizon), elapsed: horizon, crossings: Vec::new() })
}

fn advance_rk(
    x0: &[f64],
    w: &[f64],
    graph: &InteractionGraph,
    pairs: &[(usize, usize, bool)],
    horizon: f64,
    opts: &SimOptions,
    stepper: &mut Stepper,
) -> Result<Advance> {
    let lo = graph.lower_ends();
    let reach = graph.reaches();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut h = stepper.h.unwrap_or_else(|| {
        let wmax = (0..x.len()).map(|i| w[lo[i]..=reach[i]].iter().sum::<f64>()).fold(0.0, f64::max);
        0.1 / wmax.max(1e-12)
    });
    let diff: [f64; DEG + 1] = std::array::from_fn(|p| stepper.poly.high[p] - stepper.poly.low[p]);
    let high = stepper.poly.high;
    let n = x.len();
    let mut powers = std::mem::replace(&mut stepper.powers, Powers::new());
    let mut bound = std::mem::take(&mut stepper.bound);
    powers.reset(w);
    bound.resize(n, 0.0);
    let out = loop {
        powers.fill(&x, w, reach, &lo);
        let v = &powers.v;
        let mut tries = 0;
        let done = loop {
            let hs = h.min(stepper.h_event).min(horizon - t);
            let mut hp = [1.0; DEG + 1];
            for p in 1..=DEG {
                hp[p] = hp[p - 1] * hs;
            }
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                let mut inc = 0.0;
                let mut dev = 0.0;
                for p in 1..=DEG {
                    let term = hp[p] * v[p][i];
                    e += diff[p] * term;
                    let t = high[p] * term;
                    inc += t;
                    dev += t.abs();
                }
                bound[i] = dev;
                let sc = opts.rk_atol + opts.rk_rtol * x[i].abs().max((x[i] + inc).abs());
                err = err.max(e.abs() / sc);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err > 1.0 {
                stepper.rejected += 1;
                tries += 1;
                if tries > 200 {
                    return Err(Error::InvalidArgument("step size underflow".into()));
                }
                h = hs * factor;
                continue;
            }
            stepper.steps += 1;
            let flow = PolyFlow { coef: &high, powers: v, reach_bound: &bound };
            let found = scan(&flow, &x, pairs, 0.0, hs, opts.event_tolerance)?;
            // only grow the remembered step when the full proposal was used
            let next_h = if hs < h { h } else { hs * factor };
            if let Some((tau, crossings)) = due_at(&flow, &x, found) {
                stepper.h = Some(next_h);
                stepper.h_event = 4.0 * tau.max(f64::MIN_POSITIVE);
                let crossings = crossings.into_iter().map(|c| Crossing { tau: t + tau, ..c }).collect();
                break Some(Advance { x: flow.state(&x, tau), elapsed: t + tau, crossings });
            }
            stepper.h_event *= 2.0;
            x = flow.state(&x, hs);
            t = if hs >= horizon - t { horizon } else { t + hs };
            h = next_h;
            break None;
        };
        if let Some(adv) = done {
            break adv;
        }
        if t >= horizon {
            stepper.h = Some(h);
            break Advance { x, elapsed: horizon, crossings: Vec::new() };
        }
    };
    stepper.powers = powers;
    stepper.bound = bound;
    Ok(out)
}
