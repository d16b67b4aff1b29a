use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qdgate_core::pipeline::{cmd_gate, cmd_solve, cmd_spectra, cmd_sweep, sweep_table, ScenarioStatus};
use qdgate_core::{Error, QubitState, RunConfig};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PHYSICS: u8 = 3;
const EXIT_COMMENSURABILITY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "qdgate",
    version,
    about = "Exciton/biexciton spectra and optical gates in a quantum dot"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "qdgate.toml")]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Overrides `cache_dir` from the config.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// -v info, -vv debug, -vvv trace.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-particle basis, Coulomb tensors and labeled many-body spectrum.
    Solve,
    /// Conditioned absorption spectra and the conditional transition table.
    Spectra,
    /// Pulse-sequence scenarios with readout analysis and the gate budget.
    Gate,
    /// Leakage versus pulse width.
    Sweep,
    /// Prints the default configuration.
    DefaultConfig,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => EXIT_CONFIG,
        Error::Commensurability(_) => EXIT_COMMENSURABILITY,
        Error::Io(_) | Error::Json(_) | Error::MissingArtifact { .. } => EXIT_OTHER,
        _ => EXIT_PHYSICS,
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(0);
    }
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    if let Some(cache) = &cli.cache {
        cfg.cache_dir = Some(cache.clone());
    }
    match cli.command {
        Command::Solve => {
            let s = cmd_solve(&cfg)?;
            let m = s.map;
            println!("basis {}", &s.basis_fingerprint[..16]);
            println!("{} excitons, {} biexcitons", s.n_excitons, s.n_biexcitons);
            println!("E_X0    = {:.6} meV", m.e_x0);
            println!("E_X1    = {:.6} meV", m.e_x1);
            println!("E_X0+X1 = {:.6} meV", m.e_x0x1);
            println!("Delta   = {:.6} meV", m.delta);
            for c in &s.oracle {
                println!(
                    "oracle {} {:?}: fast {:.9e} brute {:.9e} rel {:.2e}",
                    c.kind.name(),
                    c.indices,
                    c.fast,
                    c.oracle,
                    c.relative_difference
                );
            }
        }
        Command::Spectra => {
            let s = cmd_spectra(&cfg)?;
            for sp in &s.spectra {
                println!(
                    "{:<6} {} lines, net weight {:+.6}",
                    sp.initial.excitonic_name(),
                    sp.lines.len(),
                    sp.net_weight()
                );
            }
            print!("{}", s.table.to_text());
        }
        Command::Gate => {
            let s = cmd_gate(&cfg)?;
            for sc in &s.scenarios {
                match (&sc.status, &sc.report) {
                    (ScenarioStatus::Failed { message }, _) => println!("{}: FAILED {message}", sc.name),
                    (status, Some(r)) => {
                        let tag = if let ScenarioStatus::Incommensurable { message } = status {
                            format!("INCOMMENSURABLE ({message})")
                        } else {
                            "ok".to_string()
                        };
                        println!(
                            "{}: {tag}; fidelity {:.5}, max leakage {:.3e}, readout delay {:.4} ps",
                            sc.name, r.fidelity, r.max_leakage, r.readout.delay
                        );
                        for (q, p) in QubitState::ALL.iter().zip(&r.final_populations) {
                            println!("  {q} -> [{:.5}, {:.5}, {:.5}, {:.5}]", p[0], p[1], p[2], p[3]);
                        }
                    }
                    (_, None) => println!("{}: no report", sc.name),
                }
            }
            println!("{}", s.budget_text);
            if s.failed() > 0 {
                return Ok(EXIT_PHYSICS);
            }
            if s.incommensurable() > 0 {
                return Ok(EXIT_COMMENSURABILITY);
            }
        }
        Command::Sweep => {
            let rows = cmd_sweep(&cfg)?;
            print!("{}", sweep_table(&rows));
            if rows.iter().any(|r| r.error.is_some()) {
                return Ok(EXIT_PHYSICS);
            }
        }
        Command::DefaultConfig => unreachable!(),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
