//! Versioned per-system settings and benchmark problems.
//!
//! `config/systems.json` pins every builtin system together with its model
//! architecture, training recipe and SST radii; a test keeps it identical to
//! the values compiled into the core crate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tis_core::dynamics::{SystemSpec, BUILTIN_SYSTEMS};
use tis_core::koopman::{DikuConfig, TrainConfig};
use tis_core::planner::{PlanProblem, PlannerConfig, PRUNING_FRACTION, SELECTION_FRACTION};

use crate::error::{Error, Result};
use crate::formats::read_json;

pub const SYSTEMS_JSON: &str = include_str!("../config/systems.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEntry {
    pub spec: SystemSpec,
    pub model: DikuConfig,
    pub train: TrainConfig,
    /// SST radii as fractions of the state-box diagonal.
    pub selection_fraction: f64,
    pub pruning_fraction: f64,
}

impl SystemEntry {
    pub fn builtin(name: &str) -> Result<Self> {
        let spec = SystemSpec::builtin(name)?;
        Ok(Self {
            model: DikuConfig::for_system(&spec),
            train: TrainConfig::for_system(name),
            spec,
            selection_fraction: SELECTION_FRACTION,
            pruning_fraction: PRUNING_FRACTION,
        })
    }

    /// Planner defaults with this system's SST radii filled in.
    pub fn planner_config(&self) -> PlannerConfig {
        let range = self.spec.state_range_norm();
        PlannerConfig {
            selection_radius: Some(self.selection_fraction * range),
            pruning_radius: Some(self.pruning_fraction * range),
            ..PlannerConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemsFile {
    pub version: u32,
    pub systems: BTreeMap<String, SystemEntry>,
}

impl SystemsFile {
    /// The builtin systems as they would be written to `systems.json`.
    pub fn builtin() -> Result<Self> {
        let systems = BUILTIN_SYSTEMS
            .iter()
            .map(|name| Ok((name.to_string(), SystemEntry::builtin(name)?)))
            .collect::<Result<_>>()?;
        Ok(Self { version: 1, systems })
    }

    /// The copy embedded at build time.
    pub fn embedded() -> Self {
        serde_json::from_str(SYSTEMS_JSON).expect("embedded systems.json parses")
    }

    /// `path` if given, else the embedded copy.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file: Self = match path {
            Some(p) => read_json(p)?,
            None => Self::embedded(),
        };
        for (name, e) in &file.systems {
            e.spec.validate()?;
            e.model.validate()?;
            e.train.validate()?;
            if &e.spec.name != name || e.model.n != e.spec.n || e.model.m != e.spec.m {
                return Err(Error::Usage(format!("system `{name}`: entry is inconsistent")));
            }
        }
        Ok(file)
    }

    pub fn get(&self, name: &str) -> Result<&SystemEntry> {
        self.systems.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.systems.keys().map(String::as_str).collect();
            Error::Usage(format!("unknown system `{name}` (known: {})", known.join(", ")))
        })
    }
}

/// Benchmark planning problems shipped with the crate, by system name.
pub fn benchmark_problem(system: &str) -> Result<PlanProblem> {
    let text = match system {
        "2d-l" => include_str!("../config/problems/2d-l.json"),
        other => return Err(Error::Usage(format!("no benchmark problem for `{other}`"))),
    };
    Ok(serde_json::from_str(text).expect("embedded problem parses"))
}
