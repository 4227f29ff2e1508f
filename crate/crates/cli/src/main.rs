use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use magnomech::checks::{run_checks, simulate, CheckOptions, Suite};
use magnomech::diffcore::DerivativeEngine;
use magnomech::dynamics::Method;
use magnomech::scenario::{self, Scenario};

#[derive(Parser)]
#[command(name = "magnomech", version, about = "Residual checks for controlled magnetic Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a check suite on a scenario file or builtin scenario name.
    Check {
        file: String,
        #[arg(long, default_value = "all", value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Override every tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Integrate from the scenario's initial point and write CSV.
    Simulate {
        file: String,
        #[arg(long)]
        t_end: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "rk4")]
        method: String,
    },
    /// List builtin scenarios.
    ListScenarios,
}

const INVALID: u8 = 2;

fn load(file: &str) -> Result<Scenario, String> {
    let engine = DerivativeEngine::from_env().map_err(|e| e.to_string())?;
    let scn = scenario::parse_scenario(std::path::Path::new(file)).map_err(|e| format!("{file}: {e}"))?;
    Ok(scn.with_engine(engine))
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::ListScenarios => {
            for name in scenario::builtin_names() {
                let scn = scenario::builtin(name).map_err(|e| e.to_string())?;
                println!("{name:<22}{}", scn.description);
            }
            Ok(0)
        }
        Command::Check { file, suite, seed, tol, report } => {
            if tol.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                return Err("--tol must be a finite non-negative number".into());
            }
            let scn = load(&file)?;
            let suite: Suite = suite.parse().map_err(|e: magnomech::Error| e.to_string())?;
            let seed = seed.unwrap_or(scn.sampling.seed);
            let rep = run_checks(&scn, suite, CheckOptions { seed, tol });
            print!("{}", rep.render());
            if let Some(path) = report {
                std::fs::write(&path, rep.full_json()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(u8::from(rep.failed()))
        }
        Command::Simulate { file, t_end, dt, out, method } => {
            let method: Method = method.parse().map_err(|e: magnomech::Error| e.to_string())?;
            let scn = load(&file)?;
            let traj = simulate(&scn, t_end, dt, method).map_err(|e| e.to_string())?;
            let f = File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            let mut w = BufWriter::new(f);
            traj.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| format!("{}: {e}", out.display()))?;
            println!(
                "{} steps, max constraint norm {:.3e}, max energy drift {:.3e}",
                traj.states.len() - 1,
                traj.max_constraint(),
                traj.max_energy_drift()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { INVALID } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(INVALID)
        }
    }
}
