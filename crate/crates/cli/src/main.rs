//! `bconf`: simulate, solve and analyse bounded-confidence opinion dynamics.

mod commands;
mod config;
mod init;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CompareArgs, ContinuumArgs, MonteCarloArgs, SimulateArgs, StabilityArgs};

#[derive(Parser)]
#[command(name = "bconf", version, about = "Bounded-confidence opinion dynamics toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Event-driven simulation of finitely many agents.
    Simulate(SimulateArgs),
    /// Continuum solver for opinion functions on [0, 1].
    Continuum(ContinuumArgs),
    /// Stability of a cluster configuration, optionally probed.
    Stability(StabilityArgs),
    /// Discrete versus continuum error over an n ladder.
    Compare(CompareArgs),
    /// Monte-Carlo stability statistics for random initial opinions.
    Montecarlo(MonteCarloArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Simulate(a) => commands::simulate(a),
        Cmd::Continuum(a) => commands::continuum(a),
        Cmd::Stability(a) => commands::stability(a),
        Cmd::Compare(a) => commands::compare(a),
        Cmd::Montecarlo(a) => commands::montecarlo(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for numerical failures inside the solvers, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    use bconf::Error as E;
    match e.downcast_ref::<E>() {
        Some(
            E::ZenoGuardTripped { .. }
            | E::ContractionViolated { .. }
            | E::PMembershipViolated { .. }
            | E::NoConvergence(_)
            | E::ProblematicBoundary { .. }
            | E::SimultaneousEvents { .. }
            | E::BracketingFailure { .. },
        ) => 2,
        _ => 1,
    }
}
