//! JSON config file shared by the subcommands. Every section is optional;
//! unknown keys are rejected.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use railtrace_core::preprocess::PreprocessConfig;
use railtrace_core::sim::SimConfig;
use railtrace_core::stations::StationConfig;
use railtrace_core::timing::TimingConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub preprocess: Option<PreprocessConfig>,
    pub stations: Option<StationConfig>,
    pub timing: Option<TimingConfig>,
    pub sim: Option<SimConfig>,
    pub sweep: Option<SweepGrid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub minpts: Vec<usize>,
    pub eps_deg: Vec<f64>,
    pub dt_deg: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            minpts: vec![25, 50, 100, 200],
            eps_deg: vec![0.0001, 0.0002, 0.0003, 0.0004, 0.0005],
            dt_deg: vec![0.0002, 0.0003, 0.0004, 0.0005],
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Cleaning defaults for the CLI are the single-trace 1 Hz profile;
    /// the generic library defaults stay available via the config file.
    pub fn preprocess(&self) -> PreprocessConfig {
        self.preprocess.unwrap_or_else(PreprocessConfig::per_trace_1hz)
    }

    pub fn stations(&self) -> StationConfig {
        self.stations.unwrap_or_default()
    }

    pub fn timing(&self) -> TimingConfig {
        self.timing.unwrap_or_default()
    }

    pub fn sim(&self) -> SimConfig {
        self.sim.clone().unwrap_or_default()
    }

    pub fn sweep(&self) -> SweepGrid {
        self.sweep.clone().unwrap_or_default()
    }
}
