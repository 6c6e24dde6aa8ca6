use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::netmodel::{generate_topology, load_topology, random_topology, tdc_bank, Family, Topology};
use crate::simkernel::SensorMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    TdcSerial,
    TdcParallel,
    Pubsub,
    Pattern,
}

impl Protocol {
    pub fn is_tdc(self) -> bool {
        matches!(self, Protocol::TdcSerial | Protocol::TdcParallel)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::TdcSerial => "tdc_serial",
            Protocol::TdcParallel => "tdc_parallel",
            Protocol::Pubsub => "pubsub",
            Protocol::Pattern => "pattern",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tdc_serial" => Ok(Protocol::TdcSerial),
            "tdc_parallel" => Ok(Protocol::TdcParallel),
            "pubsub" => Ok(Protocol::Pubsub),
            "pattern" => Ok(Protocol::Pattern),
            _ => Err(format!("unknown protocol `{s}`")),
        }
    }
}

/// Where the topology comes from. Generator seeds default to the scenario
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    File { path: PathBuf },
    Generator { family: Family, n: usize, seed: Option<u64> },
    TdcBank { d: usize, seed: Option<u64> },
    Random { seed: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub t_act: u64,
    pub t_init: u64,
    pub d_init: u64,
    pub t_max: u64,
    pub ttl: u64,
    pub latency: u64,
    pub transition_delay: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            t_act: 1,
            t_init: 16,
            d_init: 8,
            t_max: 256,
            ttl: 10_000,
            latency: 0,
            transition_delay: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologySource,
    pub protocol: Protocol,
    #[serde(default)]
    pub p_bit: f64,
    #[serde(default)]
    pub mode: SensorMode,
    #[serde(default)]
    pub timing: Timing,
    /// TDC parallel decode margin; 1 when noise-free, 5 otherwise.
    #[serde(default)]
    pub decode_margin: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_true")]
    pub trace: bool,
}

fn default_budget() -> u64 {
    100_000
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn new(topology: TopologySource, protocol: Protocol) -> Self {
        Self {
            topology,
            protocol,
            p_bit: 0.0,
            mode: SensorMode::FullyMonitored,
            timing: Timing::default(),
            decode_margin: None,
            seed: 0,
            budget: default_budget(),
            out_dir: default_out_dir(),
            trace: true,
        }
    }

    /// Parses a scenario; relative topology paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self, HarnessError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let (TopologySource::File { path }, Some(base)) = (&mut cfg.topology, base) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.p_bit) {
            return Err(HarnessError::Config(format!("p_bit {} outside [0, 1]", self.p_bit)));
        }
        if self.timing.t_act == 0 {
            return Err(HarnessError::Config("t_act must be positive".into()));
        }
        if self.p_bit > 0.0 && !matches!(self.protocol, Protocol::TdcSerial | Protocol::TdcParallel) {
            return Err(HarnessError::Config(format!("protocol {} has no noise model", self.protocol)));
        }
        Ok(())
    }

    pub fn decode_margin(&self) -> u32 {
        self.decode_margin.unwrap_or(if self.p_bit > 0.0 { 5 } else { 1 })
    }

    pub fn build_topology(&self) -> Result<Topology, HarnessError> {
        Ok(match &self.topology {
            TopologySource::File { path } => load_topology(&std::fs::read_to_string(path)?)?,
            TopologySource::Generator { family, n, seed } => {
                generate_topology(*family, *n, seed.unwrap_or(self.seed))?
            }
            TopologySource::TdcBank { d, seed } => tdc_bank(*d, seed.unwrap_or(self.seed))?,
            TopologySource::Random { seed } => random_topology(seed.unwrap_or(self.seed)),
        })
    }

    /// Short label used in CSV output.
    pub fn topology_label(&self) -> String {
        match &self.topology {
            TopologySource::File { path } => path
                .file_stem()
                .map_or_else(|| "file".into(), |s| s.to_string_lossy().into_owned()),
            TopologySource::Generator { family, n, .. } => format!("{family}-{n}"),
            TopologySource::TdcBank { d, .. } => format!("tdc_bank-{d}"),
            TopologySource::Random { seed } => format!("random-{}", seed.unwrap_or(self.seed)),
        }
    }
}
