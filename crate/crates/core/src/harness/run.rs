use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Protocol, ScenarioConfig, TopologySource};
use super::HarnessError;
use crate::pattern::{run_pattern, write_neighbors, NeighborEntry, PatternConfig};
use crate::pubsub::{run_pubsub, PubsubConfig};
use crate::simkernel::{SensorMode, Trace};
use crate::tdc::{run_tdc, IdMode, TdcRunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub success: bool,
    pub budget_exceeded: bool,
    /// Runtime in t_act units, dark validation excluded.
    pub completion_time_ticks: Option<u64>,
    pub messages: BTreeMap<String, u64>,
    pub channels_per_step: Vec<u32>,
    /// Parallel TDC: frames sent per channel until the first clean one.
    pub repeats: Vec<u64>,
    pub mean_repeats: Option<f64>,
    pub dark_validation_ticks: Option<u64>,
    pub rounds: Option<u64>,
    pub false_positives: Vec<String>,
    pub violations: Vec<String>,
}

impl RunReport {
    fn empty(config: ScenarioConfig) -> Self {
        Self {
            config,
            success: false,
            budget_exceeded: false,
            completion_time_ticks: None,
            messages: BTreeMap::new(),
            channels_per_step: Vec::new(),
            repeats: Vec::new(),
            mean_repeats: None,
            dark_validation_ticks: None,
            rounds: None,
            false_positives: Vec::new(),
            violations: Vec::new(),
        }
    }
}

pub struct ScenarioRun {
    pub report: RunReport,
    pub trace: Trace,
    pub neighbors: Vec<NeighborEntry>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, HarnessError> {
    cfg.validate()?;
    let topo = Arc::new(cfg.build_topology()?);
    let mut report = RunReport::empty(cfg.clone());
    let t = &cfg.timing;
    let mut neighbors = Vec::new();
    let trace = match cfg.protocol {
        Protocol::TdcSerial | Protocol::TdcParallel => {
            let mode = if cfg.protocol == Protocol::TdcSerial { IdMode::Serial } else { IdMode::Parallel };
            let out = run_tdc(
                topo,
                TdcRunConfig {
                    p_bit: cfg.p_bit,
                    seed: cfg.seed,
                    t_act: t.t_act,
                    latency: t.latency,
                    decode_margin: cfg.decode_margin(),
                    budget: cfg.budget,
                    trace: cfg.trace,
                    ..TdcRunConfig::new(mode)
                },
            );
            report.success = out.success;
            report.budget_exceeded = out.configured_at.is_none();
            report.completion_time_ticks = out.completion_ticks;
            report.mean_repeats = out.mean_repeats();
            report.dark_validation_ticks = out.accepting_at.map(|a| a.ticks());
            report.repeats = out.repeats;
            report.messages = out.messages;
            report.violations = out.violations;
            out.trace
        }
        Protocol::Pubsub => {
            let out = run_pubsub(
                topo,
                PubsubConfig {
                    t_init: t.t_init,
                    d_init: t.d_init,
                    t_max: t.t_max,
                    latency: t.latency,
                    transition_delay: t.transition_delay,
                    sensor_mode: cfg.mode,
                    budget: cfg.budget,
                    seed: cfg.seed,
                    trace: cfg.trace,
                    ..PubsubConfig::default()
                },
            )
            .map_err(|e| HarnessError::Config(e.to_string()))?;
            report.success = out.success;
            report.budget_exceeded = out.completion_ticks.is_none();
            report.completion_time_ticks = out.completion_ticks.map(|c| c / t.t_act);
            report.rounds = Some(out.rounds);
            report.messages = out.messages;
            report.false_positives = out.false_positives.iter().map(|(a, b)| format!("{a}->{b}")).collect();
            report.violations = out.phase_order_violations.iter().map(|p| format!("phase order at {p}")).collect();
            out.trace
        }
        Protocol::Pattern => {
            let pc = PatternConfig {
                mode: cfg.mode,
                transition_delay: t.transition_delay,
                latency: t.latency,
                ttl: t.ttl,
                max_steps: cfg.budget,
                trace: cfg.trace,
                ..PatternConfig::default()
            };
            let (out, sim) = run_pattern(topo, pc).map_err(|e| HarnessError::Config(e.to_string()))?;
            report.success = out.success;
            report.budget_exceeded = out.completion_ticks.is_none();
            report.completion_time_ticks = out.completion_ticks.map(|c| c / t.t_act);
            report.channels_per_step = out.channels_per_step;
            report.messages = out.messages;
            report.false_positives = out.false_positives.iter().map(|(a, b)| format!("{a}->{b}")).collect();
            neighbors = sim.entries();
            sim.trace().clone()
        }
    };
    Ok(ScenarioRun { report, trace, neighbors })
}

fn mode_label(m: SensorMode) -> &'static str {
    match m {
        SensorMode::FullyMonitored => "fully_monitored",
        SensorMode::Aux => "aux",
    }
}

/// Writes `trace.jsonl`, `report.json`, `channels_per_step.csv` and, for the
/// pattern protocol, `neighbors.jsonl` into `dir`.
pub fn emit_outputs(run: &ScenarioRun, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
    run.trace.write_jsonl(&mut w)?;
    w.flush()?;
    let report = serde_json::to_string_pretty(&run.report).expect("report serializes");
    fs::write(dir.join("report.json"), report + "\n")?;
    write_channels_per_step(
        &run.report.channels_per_step,
        &run.report.config.topology_label(),
        mode_label(run.report.config.mode),
        File::create(dir.join("channels_per_step.csv"))?,
    )?;
    if run.report.config.protocol == Protocol::Pattern {
        let mut w = BufWriter::new(File::create(dir.join("neighbors.jsonl"))?);
        write_neighbors(&run.neighbors, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn write_channels_per_step<W: Write>(counts: &[u32], topology: &str, mode: &str, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "count", "topology", "mode"])?;
    for (i, c) in counts.iter().enumerate() {
        out.write_record([(i + 1).to_string(), c.to_string(), topology.into(), mode.into()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub protocols: Vec<Protocol>,
    pub d: Vec<usize>,
    pub p: Vec<f64>,
    pub reps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub d: usize,
    pub p: f64,
    pub mean_runtime_tact: f64,
    pub stddev: f64,
    pub reps: u64,
    #[serde(skip)]
    pub mean_repeats: Option<f64>,
}

/// Runs every (protocol, d, p) cell over `reps` seeds on a TDC bank of `d`
/// detectors. Runs that miss the budget count as the budget.
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>, HarnessError> {
    if let Some(p) = grid.protocols.iter().find(|p| !p.is_tdc()) {
        return Err(HarnessError::Config(format!("sweep supports TDC protocols only, got {p}")));
    }
    if grid.reps == 0 {
        return Err(HarnessError::Config("reps must be positive".into()));
    }
    let mut cells = Vec::new();
    for &protocol in &grid.protocols {
        for &d in &grid.d {
            for &p in &grid.p {
                cells.push((protocol, d, p));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(protocol, d, p)| {
            let mut runtimes = Vec::with_capacity(grid.reps as usize);
            let mut repeats = Vec::new();
            for rep in 0..grid.reps {
                let mut cfg = base.clone();
                cfg.protocol = protocol;
                cfg.p_bit = p;
                cfg.seed = base.seed.wrapping_add(rep);
                cfg.topology = TopologySource::TdcBank { d, seed: None };
                cfg.trace = false;
                let run = run_scenario(&cfg)?;
                let budget_tact = cfg.budget / cfg.timing.t_act;
                runtimes.push(run.report.completion_time_ticks.unwrap_or(budget_tact) as f64);
                repeats.extend(run.report.repeats);
            }
            let n = runtimes.len() as f64;
            let mean = runtimes.iter().sum::<f64>() / n;
            let var = runtimes.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            Ok(SweepRow {
                protocol,
                d,
                p,
                mean_runtime_tact: mean,
                stddev: var.sqrt(),
                reps: grid.reps,
                mean_repeats: (!repeats.is_empty())
                    .then(|| repeats.iter().sum::<u64>() as f64 / repeats.len() as f64),
            })
        })
        .collect()
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], w: W) -> Result<(), HarnessError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["protocol", "d", "p", "mean_runtime_tact", "stddev", "reps"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
