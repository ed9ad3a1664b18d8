//! Picard iteration for the integral form x_t = x_0 + ∫₀ᵗ 𝓛(x_τ) dτ, one
//! time segment at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fixed_point::{check_fixed_point, FixedPointClass};
use super::operator::{conservative_rates, operator_l};
use super::OpinionFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    /// Trapezoid levels per segment.
    pub levels: usize,
    /// Stop when the sup-norm change is below tol · max(1, ‖x0‖∞).
    pub tol: f64,
    pub max_iters: usize,
    /// Largest admissible ratio of successive changes.
    pub contraction_limit: f64,
    /// Changes below noise_floor · max(1, ‖x0‖∞) are not used for ratios.
    pub noise_floor: f64,
    /// Retry once with twice the levels when the contraction check fails.
    pub refine: bool,
    /// Relative slack on the slope bounds of each iterate.
    pub slope_slack: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            levels: 32,
            tol: 1e-13,
            max_iters: 100,
            contraction_limit: 0.501,
            noise_floor: 1e-10,
            refine: true,
            slope_slack: 1e-9,
        }
    }
}

/// A converged Picard segment on [0, t1].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardSegment {
    pub times: Vec<f64>,
    /// Knot values at each time level.
    pub values: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Sup-norm change of each iteration.
    pub deltas: Vec<f64>,
    /// Ratios of successive changes above the noise floor.
    pub factors: Vec<f64>,
    pub levels: usize,
}

impl PicardSegment {
    pub fn max_factor(&self) -> f64 {
        self.factors.iter().copied().fold(0.0, f64::max)
    }

    pub fn terminal(&self, x0: &OpinionFunction) -> OpinionFunction {
        x0.with_values(self.values.last().unwrap().clone()).expect("iterates are monotone")
    }
}

/// Largest segment length meeting the step conditions in closed form:
/// min(m/(4M), m/8, 1/(2(2 + 16/m)), ln 2).
pub fn choose_segment(m: f64, big_m: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!("m must be positive, got {m}")));
    }
    if !(big_m >= m && big_m.is_finite()) {
        return Err(Error::InvalidArgument(format!("M must be finite and at least m, got {big_m}")));
    }
    Ok((m / (4.0 * big_m)).min(m / 8.0).min(0.5 / (2.0 + 16.0 / m)).min(std::f64::consts::LN_2))
}

fn rates(knots: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let f = OpinionFunction::new(knots.to_vec(), v.to_vec())?;
    Ok(conservative_rates(&f))
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// Checks slopes of the iterate at time t against [m − 2Mt, M + 8(M/m)t].
fn check_membership(knots: &[f64], v: &[f64], t: f64, m: f64, big_m: f64, slack: f64) -> Result<()> {
    let lower = m - 2.0 * big_m * t;
    let upper = big_m + 8.0 * (big_m / m) * t;
    let eps = slack * big_m;
    for k in 1..v.len() {
        let da = knots[k] - knots[k - 1];
        if da <= 0.0 {
            continue;
        }
        let s = (v[k] - v[k - 1]) / da;
        if s < lower.max(0.0) - eps || s < -eps || s > upper + eps {
            return Err(Error::PMembershipViolated { time: t, slope: s, lower, upper });
        }
    }
    Ok(())
}

fn iterate_on(x0: &OpinionFunction, t1: f64, levels: usize, opts: &PicardOptions, m: f64, big_m: f64) -> Result<PicardSegment> {
    let knots = x0.knots();
    let base = x0.values();
    let scale = base.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let dt = t1 / levels as f64;
    let times: Vec<f64> = (0..=levels).map(|j| if j == levels { t1 } else { j as f64 * dt }).collect();
    let mut cur: Vec<Vec<f64>> = vec![base.to_vec(); levels + 1];
    let mut deltas = Vec::new();
    let mut factors = Vec::new();
    for it in 1..=opts.max_iters {
        let r: Vec<Vec<f64>> = cur.par_iter().map(|v| rates(knots, v)).collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(levels + 1);
        next.push(base.to_vec());
        for j in 1..=levels {
            let h = times[j] - times[j - 1];
            let prev: &Vec<f64> = &next[j - 1];
            let mut v: Vec<f64> = (0..base.len()).map(|k| prev[k] + 0.5 * h * (r[j - 1][k] + r[j][k])).collect();
            check_membership(knots, &v, times[j], m, big_m, opts.slope_slack)?;
            // rounding inside a plateau can invert neighbours by an ulp
            for k in 1..v.len() {
                if v[k] < v[k - 1] {
                    v[k] = v[k - 1];
                }
            }
            next.push(v);
        }
        let d = sup_diff(&next, &cur);
        if let Some(&p) = deltas.last() {
            if p > opts.noise_floor * scale {
                let q = d / p;
                factors.push(q);
                if q > opts.contraction_limit {
                    return Err(Error::ContractionViolated { t0: 0.0, t1, factor: q });
                }
            }
        }
        deltas.push(d);
        cur = next;
        if d <= opts.tol * scale {
            return Ok(PicardSegment { times, values: cur, iterations: it, deltas, factors, levels });
        }
    }
    Err(Error::NoConvergence(opts.max_iters))
}

/// Iterates G from the constant-in-time extension of x0 on [0, t1].
/// `bounds` are the slope constants (m, M) certified for x0; every iterate is
/// checked against the corresponding growth envelope.
pub fn picard_iterate(x0: &OpinionFunction, t1: f64, bounds: (f64, f64), opts: &PicardOptions) -> Result<PicardSegment> {
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(Error::InvalidArgument(format!("segment length must be positive, got {t1}")));
    }
    if opts.levels == 0 {
        return Err(Error::InvalidArgument("at least one time level is needed".into()));
    }
    let (m, big_m) = bounds;
    if !(m > 0.0 && big_m >= m) {
        return Err(Error::NonRegular(format!("slope bounds ({m}, {big_m}) do not describe a regular function")));
    }
    match iterate_on(x0, t1, opts.levels, opts, m, big_m) {
        Err(Error::ContractionViolated { .. }) if opts.refine => iterate_on(x0, t1, 2 * opts.levels, opts, m, big_m),
        r => r,
    }
}

/// How segment lengths are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentRule {
    /// choose_segment on the certified constants m e^{−t}, M e^{4t/m}.
    Certified,
    /// choose_segment on the observed slopes of the current state.
    Observed,
    /// Start from the observed rule, double after each accepted segment and
    /// halve on a failed contraction or envelope check.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuumOptions {
    pub picard: PicardOptions,
    pub rule: SegmentRule,
    /// Longest adaptive segment.
    pub max_segment: f64,
    /// Shortest adaptive segment before giving up.
    pub min_segment: f64,
    pub max_segments: usize,
    /// Stop once ‖𝓛(x)‖∞ falls below this and the state is a fixed point.
    pub residual_tol: f64,
    pub fixed_point_tol: f64,
    pub stop_at_equilibrium: bool,
    /// Minimum spacing of stored states; 0 stores every segment end.
    pub store_interval: f64,
    /// Relative slack for the certified slope envelope, covering the time
    /// discretization (the envelope is tight for linear data).
    pub bound_slack: f64,
    /// Once a single piece rises by at least this much, the polyline no
    /// longer resolves the gap it spans and the state is projected onto
    /// steps (see `OpinionFunction::to_steps`). `None` keeps the polyline.
    pub snap_span: Option<f64>,
}

impl Default for ContinuumOptions {
    fn default() -> Self {
        Self {
            picard: PicardOptions::default(),
            rule: SegmentRule::Adaptive,
            max_segment: 0.5,
            min_segment: 1e-12,
            max_segments: 1_000_000,
            residual_tol: 1e-8,
            fixed_point_tol: 1e-6,
            stop_at_equilibrium: true,
            store_interval: 0.0,
            bound_slack: 1e-4,
            snap_span: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub t0: f64,
    pub t1: f64,
    pub iterations: usize,
    pub levels: usize,
    pub max_factor: f64,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<OpinionFunction>,
    pub segment_boundaries: Vec<f64>,
    /// (m e^{−t}, M e^{4t/m}) per stored time, from the initial constants.
    pub certified_bounds: Vec<(f64, f64)>,
    /// Smallest and largest piece slopes per stored time.
    pub observed_slopes: Vec<(f64, f64)>,
    pub segments: Vec<SegmentRecord>,
    /// Segment ends whose slopes left the certified envelope by more than
    /// the slack.
    pub bound_violations: usize,
    /// Largest relative excursion outside the envelope, 0 if none.
    pub max_bound_excess: f64,
    pub max_contraction: f64,
    pub converged: bool,
    /// ‖𝓛‖∞ of the terminal state.
    pub residual: f64,
    pub rule: SegmentRule,
    /// Time of the projection onto steps; stored states from then on are
    /// step functions and are not checked against the slope envelope.
    pub snapped_at: Option<f64>,
    pub notes: Vec<String>,
}

impl ContinuumTrajectory {
    pub fn terminal(&self) -> &OpinionFunction {
        self.states.last().unwrap()
    }

    /// State at time t, linear in time between stored states.
    pub fn state_at(&self, t: f64) -> Result<OpinionFunction> {
        let p = self.times.partition_point(|&s| s < t);
        if p < self.times.len() && self.times[p] == t {
            return Ok(self.states[p].clone());
        }
        if p == 0 || p == self.times.len() {
            return Err(Error::InvalidArgument(format!("time {t} outside the stored range")));
        }
        let (t0, t1) = (self.times[p - 1], self.times[p]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (self.states[p - 1].values(), self.states[p].values());
        let v = a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect();
        self.states[p].with_values(v)
    }
}

fn certified(m0: f64, big_m0: f64, t: f64) -> (f64, f64) {
    (m0 * (-t).exp(), big_m0 * (4.0 * t / m0).exp())
}

/// Relative excursion of the piece slopes outside [lo, hi]. Pieces whose
/// rise is at the rounding level of their values cannot resolve slopes
/// below a few ulps per knot spacing and are held to that floor instead.
fn envelope_excess(f: &OpinionFunction, lo: f64, hi: f64) -> f64 {
    let (a, v) = (f.knots(), f.values());
    let mut worst: f64 = 0.0;
    for k in 1..v.len() {
        let da = a[k] - a[k - 1];
        let s = (v[k] - v[k - 1]) / da;
        let floor = 4.0 * f64::EPSILON * v[k].abs().max(v[k - 1].abs()) / da;
        if s < lo && s > floor {
            worst = worst.max(1.0 - s / lo);
        } else if s <= floor && lo > 2.0 * floor {
            worst = worst.max(1.0 - s / lo);
        }
        if s > hi {
            worst = worst.max(s / hi - 1.0);
        }
    }
    worst
}

fn residual(f: &OpinionFunction) -> f64 {
    operator_l(f).iter().fold(0.0, |a, r| a.max(r.abs()))
}

/// Solves the continuum equation on [0, t_end] by chaining Picard segments.
pub fn solve_continuum(x0: &OpinionFunction, t_end: f64, opts: &ContinuumOptions) -> Result<ContinuumTrajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_end}")));
    }
    let (m0, big_m0) = (x0.m_lower(), x0.m_upper());
    let mut traj = ContinuumTrajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        segment_boundaries: vec![0.0],
        certified_bounds: vec![],
        observed_slopes: vec![(m0, big_m0)],
        segments: vec![],
        bound_violations: 0,
        max_bound_excess: 0.0,
        max_contraction: 0.0,
        converged: false,
        residual: residual(x0),
        rule: opts.rule,
        snapped_at: None,
        notes: vec![],
    };
    if big_m0 == 0.0 {
        traj.certified_bounds.push((0.0, 0.0));
        traj.times.push(t_end);
        traj.states.push(x0.clone());
        traj.segment_boundaries.push(t_end);
        traj.certified_bounds.push((0.0, 0.0));
        traj.observed_slopes.push((0.0, 0.0));
        traj.converged = true;
        traj.notes.push("constant initial data is a fixed point".into());
        return Ok(traj);
    }
    if !x0.is_regular() {
        return Err(Error::NonRegular(format!(
            "slopes range over [{m0}, {big_m0}]; the continuum solver needs 0 < m ≤ M < ∞ (use the discrete simulator for step data)"
        )));
    }
    traj.certified_bounds.push((m0, big_m0));

    let mut x = x0.clone();
    let mut t = 0.0;
    let mut h = choose_segment(m0, big_m0)?;
    let mut last_stored = 0.0;
    while t < t_end {
        if traj.segments.len() >= opts.max_segments {
            return Err(Error::NoConvergence(opts.max_segments));
        }
        // step states have no useful slope constants: only the adaptive
        // rule applies and the envelope check is vacuous
        let rule = if traj.snapped_at.is_some() { SegmentRule::Adaptive } else { opts.rule };
        let bounds = match rule {
            SegmentRule::Certified => certified(m0, big_m0, t),
            _ => (x.m_lower().max(f64::MIN_POSITIVE), x.m_upper()),
        };
        let mut rejected = 0;
        let seg = match rule {
            SegmentRule::Certified | SegmentRule::Observed => {
                h = choose_segment(bounds.0, bounds.1)?.min(t_end - t);
                picard_iterate(&x, h, bounds, &opts.picard).map_err(|e| shift(e, t))?
            }
            SegmentRule::Adaptive => loop {
                h = h.min(opts.max_segment).min(t_end - t);
                match picard_iterate(&x, h, bounds, &opts.picard) {
                    Ok(s) => break s,
                    Err(
                        e @ (Error::ContractionViolated { .. }
                        | Error::PMembershipViolated { .. }
                        | Error::NoConvergence(_)),
                    ) => {
                        rejected += 1;
                        h *= 0.5;
                        if h < opts.min_segment {
                            return Err(shift(e, t));
                        }
                    }
                    Err(e) => return Err(e),
                }
            },
        };
        let t1 = if h == t_end - t { t_end } else { t + h };
        x = seg.terminal(&x);
        traj.max_contraction = traj.max_contraction.max(seg.max_factor());
        traj.segments.push(SegmentRecord {
            t0: t,
            t1,
            iterations: seg.iterations,
            levels: seg.levels,
            max_factor: seg.max_factor(),
            rejected,
        });
        traj.segment_boundaries.push(t1);
        t = t1;
        let (cm, cu) = certified(m0, big_m0, t);
        if traj.snapped_at.is_none() {
            let excess = envelope_excess(&x, cm, cu);
            traj.max_bound_excess = traj.max_bound_excess.max(excess);
            if excess > opts.bound_slack {
                traj.bound_violations += 1;
            }
            if let Some(span) = opts.snap_span {
                if x.values().windows(2).any(|w| w[1] - w[0] >= span) {
                    x = x.to_steps()?;
                    traj.snapped_at = Some(t);
                    traj.notes.push(format!("projected onto steps at t = {t}: a single piece spans an unresolved gap"));
                }
            }
        }
        let res = residual(&x);
        let done = opts.stop_at_equilibrium
            && res < opts.residual_tol
            && check_fixed_point(&x, opts.fixed_point_tol).class != FixedPointClass::Neither;
        if t - last_stored >= opts.store_interval || t >= t_end || done {
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.certified_bounds.push((cm, cu));
            traj.observed_slopes.push((x.m_lower(), x.m_upper()));
            last_stored = t;
        }
        traj.residual = res;
        if done {
            traj.converged = true;
            break;
        }
        if rule == SegmentRule::Adaptive && rejected == 0 {
            h *= 2.0;
        }
        if rule == SegmentRule::Adaptive && x.is_regular() {
            // never start below the closed-form length for the current state
            h = h.max(choose_segment(x.m_lower(), x.m_upper())?);
        }
    }
    if opts.rule == SegmentRule::Adaptive {
        traj.notes.push("adaptive segments: lengths beyond the closed-form rule are accepted only after the contraction and envelope checks pass".into());
    }
    Ok(traj)
}

fn shift(e: Error, t: f64) -> Error {
    match e {
        Error::ContractionViolated { t0, t1, factor } => Error::ContractionViolated { t0: t0 + t, t1: t1 + t, factor },
        Error::PMembershipViolated { time, slope, lower, upper } => {
            Error::PMembershipViolated { time: time + t, slope, lower, upper }
        }
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_examples() {
        assert!((choose_segment(1.0, 1.0).unwrap() - 1.0 / 36.0).abs() < 1e-15);
        assert!((choose_segment(10.0, 10.0).unwrap() - 5.0 / 36.0).abs() < 1e-15);
        assert!(choose_segment(0.0, 1.0).is_err());
        assert!(choose_segment(2.0, 1.0).is_err());
        // the ratio constraint binds when M ≫ m
        assert!((choose_segment(1.0, 100.0).unwrap() - 1.0 / 400.0).abs() < 1e-15);
    }

    #[test]
    fn constant_is_reached_immediately() {
        let c = OpinionFunction::constant(3.0, 32).unwrap();
        let t = solve_continuum(&c, 5.0, &ContinuumOptions::default()).unwrap();
        assert!(t.converged);
        assert_eq!(t.terminal(), &c);
        assert!(t.states.iter().all(|s| s == &c));
    }

    #[test]
    fn step_data_is_rejected() {
        let s = OpinionFunction::step(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(solve_continuum(&s, 1.0, &ContinuumOptions::default()), Err(Error::NonRegular(_))));
    }

    #[test]
    fn picard_contracts_on_steep_ramp() {
        let f = OpinionFunction::linear(0.0, 10.0, 512).unwrap();
        let t1 = choose_segment(10.0, 10.0).unwrap();
        let s = picard_iterate(&f, t1, (10.0, 10.0), &PicardOptions::default()).unwrap();
        assert!(s.max_factor() <= 0.5, "{:?}", s.factors);
        assert!(s.deltas.windows(2).all(|d| d[1] <= d[0]));
        // interior knots barely move, the ends move inward
        let x = s.values.last().unwrap();
        assert!(x[0] > 0.0 && x[512] < 10.0);
        assert!((x[256] - 5.0).abs() < 1e-12);
    }

    fn midpoint_residual(f: &OpinionFunction, s: &PicardSegment) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..s.levels {
            let dt = s.times[j + 1] - s.times[j];
            let mid: Vec<f64> = s.values[j].iter().zip(&s.values[j + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
            let r = conservative_rates(&f.with_values(mid).unwrap());
            for k in 0..f.len() {
                let fd = (s.values[j + 1][k] - s.values[j][k]) / dt;
                worst = worst.max((fd - r[k]).abs());
            }
        }
        worst
    }

    #[test]
    fn picard_limit_solves_the_ode() {
        // f = α: 𝓛 is affine along the flow, so finite differences match at
        // the midpoints to rounding
        let f = OpinionFunction::linear(0.0, 1.0, 64).unwrap();
        let t1 = choose_segment(1.0, 1.0).unwrap();
        for levels in [8, 32] {
            let o = PicardOptions { levels, ..Default::default() };
            let s = picard_iterate(&f, t1, (1.0, 1.0), &o).unwrap();
            assert!(midpoint_residual(&f, &s) < 1e-11);
        }
        // f = 3α has moving windows; the residual falls with refinement
        let f = OpinionFunction::linear(0.0, 3.0, 64).unwrap();
        let t1 = choose_segment(3.0, 3.0).unwrap();
        let mut prev = f64::INFINITY;
        for levels in [4, 8, 16] {
            let o = PicardOptions { levels, ..Default::default() };
            let s = picard_iterate(&f, t1, (3.0, 3.0), &o).unwrap();
            let r = midpoint_residual(&f, &s);
            assert!(r < prev / 3.0, "{levels}: {r} vs {prev}");
            prev = r;
        }
    }

    #[test]
    fn linear_profile_closed_form() {
        // for f = α every agent sees all others: x_t = ½ + (α − ½) e^{−t}
        let f = OpinionFunction::linear(0.0, 1.0, 32).unwrap();
        let t = solve_continuum(&f, 2.0, &ContinuumOptions { stop_at_equilibrium: false, ..Default::default() }).unwrap();
        let end = t.terminal();
        for (a, v) in end.knots().iter().zip(end.values()) {
            let exact = 0.5 + (a - 0.5) * (-2.0f64).exp();
            assert!((v - exact).abs() < 1e-5, "{a}: {v} vs {exact}");
        }
        assert_eq!(t.bound_violations, 0);
        assert!(t.max_contraction <= 0.501);
    }

    #[test]
    fn certified_rule_covers_short_horizons() {
        let f = OpinionFunction::linear(0.0, 10.0, 128).unwrap();
        let o = ContinuumOptions { rule: SegmentRule::Certified, ..Default::default() };
        let t = solve_continuum(&f, 0.5, &o).unwrap();
        assert_eq!(*t.times.last().unwrap(), 0.5);
        assert_eq!(t.bound_violations, 0);
        let a = solve_continuum(&f, 0.5, &ContinuumOptions::default()).unwrap();
        assert!(a.terminal().sup_distance(t.terminal()) < 1e-6);
    }
}
