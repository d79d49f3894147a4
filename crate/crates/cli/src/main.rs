//! Command-line front end.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use cavity_thermo::scenario::{self, Scenario};
use cavity_thermo::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cavity-thermo", version, about = "Non-Markovian cavity dynamics and transient quantum thermodynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write greens/coefficients/thermo CSVs plus a manifest.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset merged under the config (fig2 … fig9).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario once per value of one parameter, in parallel.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// One of Omega, omega_s_ratio, T0, omega_d, f_m.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `1.72pi,17.2pi`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the solver against an M-mode discrete bath (and 2M modes).
    Oracle {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        modes: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the fully merged JSON document of a preset.
    Preset { name: String },
}

fn load(config: Option<&PathBuf>, preset: Option<&str>) -> Result<Scenario, Error> {
    match (config, preset) {
        (Some(path), p) => scenario::load_scenario(path, p),
        (None, Some(p)) => scenario::preset_scenario(p),
        (None, None) => Err(Error::invalid("config", "give --config and/or --preset")),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, preset, out } => {
            let s = load(config.as_ref(), preset.as_deref())?;
            let r = scenario::run(&s, &out)?;
            println!(
                "wrote {} ({} steps); energy balance {:.3e} relative; step-halving |Δu| {:.2e}",
                out.display(),
                r.solution.grid.n_steps,
                r.balance.relative,
                r.step_halving.u_change
            );
        }
        Command::Sweep {
            config,
            preset,
            param,
            values,
            out,
        } => {
            let s = load(config.as_ref(), preset.as_deref())?;
            let vals: Vec<_> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(scenario::sweep_value)
                .collect();
            let points = scenario::sweep(&s, &param, &vals, &out)?;
            let failed = points.iter().filter(|p| p.status != "ok").count();
            println!("wrote {} ({} points, {failed} failed)", out.display(), points.len());
            for p in points.iter().filter(|p| p.status != "ok") {
                eprintln!("  {} = {}: {}", p.dir, p.value, p.error.as_deref().unwrap_or(""));
            }
        }
        Command::Oracle {
            preset,
            modes,
            config,
            out,
        } => {
            let s = load(config.as_ref(), Some(&preset))?;
            let report = scenario::oracle_report(&s, modes)?;
            scenario::write_oracle_report(&report, &out)?;
            println!(
                "M={}: max|Δu| {:.3e}, max|Δv| {:.3e} until {} ns; M={}: {:.3e}, {:.3e} (ratios {:.2}, {:.2})",
                report.modes,
                report.coarse.u_deviation,
                report.coarse.v_deviation,
                report.coarse.compared_until,
                2 * report.modes,
                report.doubled.u_deviation,
                report.doubled.v_deviation,
                report.u_ratio,
                report.v_ratio
            );
        }
        Command::Preset { name } => {
            let s = scenario::preset_scenario(&name)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
