//! Subcommand drivers: run, then write outputs next to the resolved config.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bconf::analysis::{audit, extract_clusters, probe_stability, DEFAULT_MARGIN};
use bconf::bridge::{approximation_error, monte_carlo_conjecture, DensitySpec};
use bconf::continuum::{check_fixed_point, extract_continuum_clusters, io::write_trajectory, solve_continuum};
use bconf::discrete::simulate as run_simulation;
use bconf::model::canonicalize;
use serde::Serialize;

use crate::config::{CompareArgs, ContinuumArgs, MonteCarloArgs, SimulateArgs, StabilityArgs};
use crate::{init, svg};

fn prepare<C: Serialize>(out: &Path, config: &C) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    #[derive(Serialize)]
    struct Resolved<'a, C> {
        tool: &'static str,
        version: &'static str,
        config: &'a C,
    }
    let r = Resolved { tool: "bconf", version: env!("CARGO_PKG_VERSION"), config };
    write_json(&out.join("config.json"), &r)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let c = args.resolve()?;
    let (x, w) = match (&c.init, &c.init_file) {
        (Some(spec), None) => init::discrete(spec, c.n, c.seed)?,
        (None, Some(p)) => init::discrete_file(p)?,
        (Some(_), Some(_)) => bail!("give either --init or --init-file, not both"),
        (None, None) => bail!("no initial condition: use --init or --init-file"),
    };
    let state = canonicalize(&x, w.as_deref())?;
    prepare(&c.out, &c)?;
    let traj = run_simulation(&state, &c.sim)?;

    let n = state.len();
    let mut csv = String::from("t");
    for i in 0..n {
        let _ = write!(csv, ",x_{i}");
    }
    csv.push('\n');
    for s in &traj.samples {
        let _ = write!(csv, "{}", s.time);
        for x in &s.opinions {
            let _ = write!(csv, ",{x}");
        }
        csv.push('\n');
    }
    write(&c.out.join("trajectory.csv"), &csv)?;
    let mut ev = String::from("t,i,j,kind\n");
    for e in &traj.events {
        let _ = writeln!(ev, "{},{},{},{}", e.time, e.pair.0, e.pair.1, e.kind);
    }
    write(&c.out.join("events.csv"), &ev)?;
    let report = extract_clusters(&traj.terminal, c.cluster_tol).classified(DEFAULT_MARGIN);
    write_json(&c.out.join("clusters.json"), &report)?;
    let a = audit(&traj);
    write_json(&c.out.join("audit.json"), &a)?;
    if c.plot {
        let ts: Vec<f64> = traj.samples.iter().map(|s| s.time).collect();
        let series: Vec<Vec<f64>> = (0..n).map(|i| traj.samples.iter().map(|s| s.opinions[i]).collect()).collect();
        write(&c.out.join("plot.svg"), &svg::lines("opinions", "t", "x", &ts, &series))?;
    }
    println!(
        "{} agents, {} events, t = {}, converged = {}",
        n,
        traj.events.len(),
        traj.terminal.time,
        traj.converged
    );
    for cl in &report.clusters {
        println!("  cluster at {:.6} weight {}", cl.position, cl.weight);
    }
    if let Some(o) = report.overall {
        println!("  overall: {o}");
    }
    println!("outputs in {}", c.out.display());
    Ok(())
}

pub fn continuum(args: ContinuumArgs) -> Result<()> {
    let c = args.resolve()?;
    let spec = c.init.as_deref().context("no initial function: use --init")?;
    let f = init::continuum(spec, c.knots)?;
    if !f.is_regular() && f.m_upper() > 0.0 {
        bail!(
            "initial function is not regular (slopes in [{}, {}]): the continuum solver needs 0 < m ≤ M < ∞; \
             step data is exactly a weighted discrete system, run it with `bconf simulate` instead",
            f.m_lower(),
            f.m_upper()
        );
    }
    prepare(&c.out, &c)?;
    let traj = solve_continuum(&f, c.t_end, &c.solver)?;
    write_trajectory(&traj, &c.out.join("trajectory"), 1)?;
    let fp = check_fixed_point(traj.terminal(), c.solver.fixed_point_tol);
    write_json(&c.out.join("fixed_point.json"), &fp)?;
    let t_conv = traj.converged.then(|| *traj.times.last().unwrap());
    let report = extract_continuum_clusters(traj.terminal(), c.plateau_tol, t_conv);
    write_json(&c.out.join("clusters.json"), &report)?;

    #[derive(Serialize)]
    struct Bounds {
        violations: usize,
        max_excess: f64,
        max_contraction: f64,
        snapped_at: Option<f64>,
        segments: usize,
        rows: Vec<Row>,
    }
    #[derive(Serialize)]
    struct Row {
        t: f64,
        certified_m: f64,
        certified_big_m: f64,
        observed_m: f64,
        observed_big_m: Option<f64>,
    }
    let rows = traj
        .times
        .iter()
        .zip(&traj.certified_bounds)
        .zip(&traj.observed_slopes)
        .map(|((t, c), o)| Row {
            t: *t,
            certified_m: c.0,
            certified_big_m: c.1,
            observed_m: o.0,
            observed_big_m: o.1.is_finite().then_some(o.1),
        })
        .collect();
    write_json(
        &c.out.join("bounds.json"),
        &Bounds {
            violations: traj.bound_violations,
            max_excess: traj.max_bound_excess,
            max_contraction: traj.max_contraction,
            snapped_at: traj.snapped_at,
            segments: traj.segments.len(),
            rows,
        },
    )?;
    if c.plot {
        let k = traj.terminal().len();
        let stride = k.div_ceil(100).max(1);
        let series: Vec<Vec<f64>> =
            (0..k).step_by(stride).map(|j| traj.states.iter().map(|s| s.values()[j.min(s.len() - 1)]).collect()).collect();
        write(&c.out.join("plot.svg"), &svg::lines("continuum knots", "t", "x", &traj.times, &series))?;
    }
    println!(
        "t = {}, converged = {}, residual = {:e}, segments = {}, envelope violations = {}",
        traj.times.last().unwrap(),
        traj.converged,
        traj.residual,
        traj.segments.len(),
        traj.bound_violations
    );
    println!("fixed point: {:?}", fp.class);
    for cl in &report.clusters {
        println!("  plateau at {:.6} weight {:.6}", cl.position, cl.weight);
    }
    if let Some(d) = report.min_separation() {
        println!("  min separation {d:.6}");
    }
    println!("outputs in {}", c.out.display());
    Ok(())
}

pub fn stability(args: StabilityArgs) -> Result<()> {
    let c = args.resolve()?;
    let spec = c.clusters.as_deref().context("no clusters: use --clusters POS:WEIGHT,..")?;
    let mut pos = Vec::new();
    let mut w = Vec::new();
    for item in spec.split(',') {
        let (p, q) = item.split_once(':').with_context(|| format!("expected POSITION:WEIGHT, got `{item}`"))?;
        pos.push(p.trim().parse::<f64>()?);
        w.push(q.trim().parse::<f64>()?);
    }
    let eq = canonicalize(&pos, Some(&w))?;
    prepare(&c.out, &c)?;
    let report = extract_clusters(&eq, 1e-12).classified(c.margin);
    let probe = if c.probe { Some(probe_stability(&eq, c.delta, &c.probe_options)?) } else { None };
    #[derive(Serialize)]
    struct Out<'a> {
        report: &'a bconf::analysis::ClusterReport,
        probe: &'a Option<bconf::analysis::ProbeReport>,
    }
    write_json(&c.out.join("stability.json"), &Out { report: &report, probe: &probe })?;
    for (k, s) in report.classifications.iter().enumerate() {
        println!("  pair {k}: separation {:.6} -> {s}", report.separations[k]);
    }
    println!("overall: {}", report.overall.map(|s| s.to_string()).unwrap_or_else(|| "stable".into()));
    if let Some(p) = &probe {
        println!("probe: delta = {}, merged = {}, max displacement = {:e}", p.delta, p.merged, p.max_displacement);
    }
    Ok(())
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let c = args.resolve()?;
    let spec = c.init.as_deref().context("no initial function: use --init")?;
    let f = init::continuum(spec, c.knots)?;
    prepare(&c.out, &c)?;
    let mut reports = Vec::new();
    let mut csv = String::from("n,max_error,initial_error,analytic_bound,within_bound\n");
    for &n in &c.ns {
        let r = approximation_error(&f, n, c.t_end, &c.bridge)?;
        let _ = writeln!(csv, "{},{},{},{},{}", n, r.max_error, r.initial_error, r.analytic_bound, r.within_bound);
        println!("n = {n:5}  error {:.6e}  initial {:.6e}  bound {:.6e}", r.max_error, r.initial_error, r.analytic_bound);
        reports.push(r);
    }
    let monotone = reports.windows(2).all(|p| p[1].max_error <= 1.05 * p[0].max_error);
    println!("nonincreasing in n (5% slack): {monotone}");
    write(&c.out.join("compare.csv"), &csv)?;
    write_json(&c.out.join("compare.json"), &reports)?;
    Ok(())
}

pub fn montecarlo(args: MonteCarloArgs) -> Result<()> {
    let c = args.resolve()?;
    let d: DensitySpec = c.density.as_deref().context("no density: use --density")?.parse()?;
    prepare(&c.out, &c)?;
    let r = monte_carlo_conjecture(&d, &c.ns, c.trials, c.seed, &c.options)?;
    write_json(&c.out.join("montecarlo.json"), &r)?;
    write(&c.out.join("montecarlo.csv"), &r.to_csv())?;
    for g in &r.rungs {
        println!(
            "n = {:5}  stable {:3}  marginal {:3}  unstable {:3}  failed {:3}  fraction {:.3}  mean clusters {:.2}",
            g.n, g.stable, g.marginal, g.unstable, g.failed, g.stable_fraction, g.mean_clusters
        );
    }
    if let Some(s) = &r.continuum_reference {
        println!("continuum reference: {s}");
    }
    Ok(())
}
