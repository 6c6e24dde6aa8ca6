use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qnet_autoconf::harness::{
    emit_outputs, run_scenario, sweep, write_sweep, HarnessError, Protocol, ScenarioConfig, SweepGrid,
};
use qnet_autoconf::netmodel::{generate_topology, load_topology, serialize_topology, Family};

#[derive(Parser)]
#[command(version, about = "Quantum network auto-configuration simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a topology file against the channel rules.
    Validate { topology: PathBuf },
    /// Print a generated topology.
    GenTopology {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one scenario and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sweep TDC runtime over detector counts and error rates.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        d_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        p_list: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        reps: u64,
        /// Defaults to the scenario's protocol.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<Protocol>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

enum Failure {
    Oracle(String),
    Config(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Oracle(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Validate { topology } => {
            let text = fs::read_to_string(&topology).map_err(|e| Failure::Config(e.to_string()))?;
            let topo = load_topology(&text).map_err(|e| Failure::Config(e.to_string()))?;
            println!(
                "ok: {} nodes, {} channels",
                topo.nodes().len(),
                topo.channels().len()
            );
        }
        Cmd::GenTopology { family, n, seed } => {
            let topo = generate_topology(family, n, seed).map_err(|e| Failure::Config(e.to_string()))?;
            print!("{}", serialize_topology(&topo));
        }
        Cmd::Run { scenario, seed, out_dir } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let run = run_scenario(&cfg)?;
            emit_outputs(&run, &cfg.out_dir)?;
            let r = &run.report;
            println!(
                "{} success={} completion_tact={}",
                cfg.protocol,
                r.success,
                r.completion_time_ticks.map_or("none".into(), |c| c.to_string())
            );
            if !r.success {
                return Err(Failure::Oracle("run did not match ground truth".into()));
            }
        }
        Cmd::Sweep { scenario, d_list, p_list, reps, protocols, out_dir } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let grid = SweepGrid {
                protocols: if protocols.is_empty() { vec![cfg.protocol] } else { protocols },
                d: d_list,
                p: p_list,
                reps,
            };
            let rows = sweep(&cfg, &grid)?;
            let dir = out_dir.unwrap_or_else(|| cfg.out_dir.clone());
            fs::create_dir_all(&dir).map_err(HarnessError::from)?;
            write_sweep(&rows, fs::File::create(dir.join("sweep.csv")).map_err(HarnessError::from)?)?;
            write_sweep(&rows, io::stdout())?;
        }
    }
    Ok(())
}
