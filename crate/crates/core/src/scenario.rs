//! Scenario files: one TOML document that pins every parameter of an experiment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{StrategyKind, UnknownStrategy};
use crate::client::ClientConfig;
use crate::placement::{CostParams, CostParamsError};
use crate::predictor::PredictorParams;
use crate::sim::{SimConfig, SimError, SimSetup};
use crate::store::{Keygroup, Store, StoreError};
use crate::topology::{Topology, TopologyConfig, TopologyError};
use crate::trace::{gen_trace, read_trace, TraceError, TraceRow, TraceSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Cost(#[from] CostParamsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Exactly one of `file` and `generator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    pub file: Option<PathBuf>,
    pub generator: Option<TraceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// Path to a topology TOML file; alternative to an inline `[topology]` table.
    pub topology_file: Option<PathBuf>,
    pub topology: Option<TopologyConfig>,
    pub keygroups: Vec<Keygroup>,
    pub trace: TraceSection,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub predictor: PredictorParams,
    #[serde(default)]
    pub client: ClientConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

fn default_strategies() -> Vec<String> {
    StrategyKind::ALL
        .iter()
        .map(|s| s.name().to_string())
        .collect()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Rows(Arc<Vec<TraceRow>>),
    Generated(TraceSpec),
}

/// A validated scenario with all files loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topology: Arc<Topology>,
    pub keygroups: Vec<Keygroup>,
    pub trace: TraceSource,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub cost: CostParams,
    pub predictor: PredictorParams,
    pub client: ClientConfig,
    pub sim: SimConfig,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_topology(path: &Path) -> Result<Topology, ScenarioError> {
    let text = read(path)?;
    let config: TopologyConfig = toml::from_str(&text).map_err(|source| ScenarioError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(config.build()?)
}

impl Scenario {
    /// Loads a scenario; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = read(path)?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|source| ScenarioError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base)
    }

    pub fn from_file(file: ScenarioFile, base: &Path) -> Result<Self, ScenarioError> {
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let topology = match (&file.topology_file, &file.topology) {
            (Some(p), None) => load_topology(&resolve(p))?,
            (None, Some(inline)) => inline.build()?,
            _ => {
                return Err(ScenarioError::Invalid(
                    "give exactly one of topology_file and [topology]".into(),
                ))
            }
        };
        let trace = match (&file.trace.file, &file.trace.generator) {
            (Some(p), None) => TraceSource::Rows(Arc::new(read_trace(&resolve(p))?)),
            (None, Some(spec)) => TraceSource::Generated(spec.clone()),
            _ => {
                return Err(ScenarioError::Invalid(
                    "[trace] needs exactly one of file and generator".into(),
                ))
            }
        };
        let strategies = file
            .strategies
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<StrategyKind>, _>>()?;
        if strategies.is_empty() {
            return Err(ScenarioError::Invalid(
                "strategies must not be empty".into(),
            ));
        }
        if file.seeds.is_empty() {
            return Err(ScenarioError::Invalid("seeds must not be empty".into()));
        }
        file.cost.validate()?;
        file.sim.validate()?;
        let topology = Arc::new(topology);
        // Catches bad homes, zones and duplicate ids before any run starts.
        Store::new(Arc::clone(&topology), file.keygroups.clone())?;
        let out_dir = resolve(&file.out_dir);
        Ok(Scenario {
            name: file.name,
            topology,
            keygroups: file.keygroups,
            trace,
            strategies,
            seeds: file.seeds,
            out_dir,
            cost: file.cost,
            predictor: file.predictor,
            client: file.client,
            sim: file.sim,
        })
    }

    /// The trace for `seed`; fixed traces ignore it.
    pub fn trace_for(&self, seed: u64) -> Result<Arc<Vec<TraceRow>>, ScenarioError> {
        match &self.trace {
            TraceSource::Rows(rows) => Ok(Arc::clone(rows)),
            TraceSource::Generated(spec) => Ok(Arc::new(gen_trace(spec, &self.topology, seed)?)),
        }
    }

    pub fn setup(&self, strategy: StrategyKind, trace: &[TraceRow]) -> SimSetup {
        SimSetup {
            topology: Arc::clone(&self.topology),
            keygroups: self.keygroups.clone(),
            trace: trace.to_vec(),
            strategy,
            cost: self.cost,
            predictor: self.predictor,
            client: self.client,
            sim: self.sim,
            audit: false,
            record_predictions: false,
            dump_predictors: false,
        }
    }
}
