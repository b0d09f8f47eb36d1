//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use perfcrd_core::autodiff::Primitive;
use perfcrd_core::game::GameParams;
use perfcrd_core::graph::{self, HubVariant, PopulationGraph};
use perfcrd_core::predictor::{parse_bits, Architecture, Checkpoint, PredictorModel, Shape};
use perfcrd_core::prophecy::DEFAULT_CAP;
use perfcrd_core::rollout::RolloutConfig;
use perfcrd_core::training::{TrainConfig, TrainObjective};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Clique { nodes: usize },
    Path { nodes: usize },
    Star { leaves: usize },
    ScaleFree { nodes: usize, attach: usize, seed: u64 },
    Hub { variant: HubVariant },
    Edges { nodes: usize, edges: Vec<(usize, usize)> },
}

impl GraphSpec {
    pub fn build(&self) -> perfcrd_core::Result<PopulationGraph> {
        match self {
            GraphSpec::Clique { nodes } => graph::make_clique(*nodes),
            GraphSpec::Path { nodes } => graph::make_path(*nodes),
            GraphSpec::Star { leaves } => graph::make_star(*leaves),
            GraphSpec::ScaleFree { nodes, attach, seed } => graph::make_scale_free(*nodes, *attach, *seed),
            GraphSpec::Hub { variant } => Ok(graph::make_hub_counterexample(*variant)),
            GraphSpec::Edges { nodes, edges } => PopulationGraph::from_edges(*nodes, edges.iter().copied()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnn_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnn_hidden: Option<usize>,
    /// Output of a static-binary predictor, node 0 first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
    /// Checkpoint file to load instead of initializing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl PredictorSpec {
    pub fn shape(&self, nodes: usize) -> Shape {
        let d = Shape::new(nodes);
        Shape {
            nodes,
            mlp_hidden: self.mlp_hidden.unwrap_or(d.mlp_hidden),
            gnn_layers: self.gnn_layers.unwrap_or(d.gnn_layers),
            gnn_hidden: self.gnn_hidden.unwrap_or(d.gnn_hidden),
        }
    }

    /// Model for `graph`. Relative checkpoint paths resolve against `base`.
    pub fn build(&self, graph: &PopulationGraph, seed: u64, base: &Path) -> Result<PredictorModel, CliError> {
        if let Some(path) = &self.checkpoint {
            let text = std::fs::read_to_string(base.join(path)).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
            let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            return Ok(PredictorModel::from_checkpoint(&ck, graph.clone())?);
        }
        if self.architecture == Architecture::StaticBinary {
            let bits = self
                .bits
                .as_deref()
                .ok_or_else(|| CliError::Config("static-binary predictor needs `bits`".into()))?;
            return Ok(PredictorModel::static_binary(parse_bits(bits)?, graph.clone())?);
        }
        Ok(PredictorModel::new(self.architecture, self.shape(graph.node_count()), graph.clone(), seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub lambdas: Vec<f64>,
    pub seeds: usize,
    #[serde(default)]
    pub mgda_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Write one CSV row per prediction.
    #[serde(default = "default_true")]
    pub table: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { cap: DEFAULT_CAP, table: true }
    }
}

fn default_cap() -> usize {
    DEFAULT_CAP
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// Primitive name, e.g. `sigmoid` or `pb-cell`.
    pub primitive: String,
    pub factor: f64,
}

impl FaultSpec {
    pub fn resolve(&self) -> Result<(Primitive, f64), CliError> {
        let p = Primitive::from_name(&self.primitive)
            .ok_or_else(|| CliError::Config(format!("unknown primitive `{}`", self.primitive)))?;
        Ok((p, self.factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSpec {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Soft-rollout temperature; the training temperature if absent.
    #[serde(default)]
    pub temp: Option<f64>,
    #[serde(default = "default_quantities")]
    pub quantities: Vec<String>,
    #[serde(default = "default_identity_tolerance")]
    pub identity_tolerance: f64,
    #[serde(default)]
    pub fault: Option<FaultSpec>,
}

fn default_step() -> f64 {
    1e-5
}
fn default_tolerance() -> f64 {
    1e-4
}
fn default_identity_tolerance() -> f64 {
    1e-10
}
fn default_quantities() -> Vec<String> {
    ["ce", "ce-through-targets", "uc", "upop"].map(String::from).to_vec()
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            step: default_step(),
            tolerance: default_tolerance(),
            temp: None,
            quantities: default_quantities(),
            identity_tolerance: default_identity_tolerance(),
            fault: None,
        }
    }
}

fn default_agents() -> RolloutConfig {
    RolloutConfig::default()
}

/// One experiment. JSON is the unit of reproducibility; command-line flags
/// only override the seed, output directory, and enumeration cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Master seed for model initialization and sweeps.
    #[serde(default)]
    pub seed: u64,
    pub graph: GraphSpec,
    pub game: GameParams,
    /// Trust prior, internal expectation, horizon, and rollout mode.
    #[serde(default = "default_agents")]
    pub agents: RolloutConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.game.validate()?;
        self.agents.validate()?;
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(CliError::Config("sweep lambdas must lie in [0, 1]".into()));
            }
            if s.lambdas.is_empty() && s.mgda_runs == 0 {
                return Err(CliError::Config("sweep needs lambdas or MGDA runs".into()));
            }
            if s.seeds == 0 && !s.lambdas.is_empty() {
                return Err(CliError::Config("sweep needs at least one seed".into()));
            }
        }
        if let Some(g) = &self.gradcheck {
            if !(g.step > 0.0) {
                return Err(CliError::Config("gradcheck step must be positive".into()));
            }
        }
        self.graph.build()?;
        Ok(())
    }

    pub fn graph(&self) -> Result<PopulationGraph, CliError> {
        Ok(self.graph.build()?)
    }

    pub fn predictor(&self) -> Result<&PredictorSpec, CliError> {
        self.predictor.as_ref().ok_or_else(|| CliError::Config("config has no `predictor` section".into()))
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let t = self.train.ok_or_else(|| CliError::Config("config has no `train` section".into()))?;
        Ok(TrainConfig { seed: self.seed, ..t })
    }

    /// Training settings, or defaults for the given objective.
    pub fn train_or(&self, objective: TrainObjective) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.unwrap_or(TrainConfig::new(objective)) }
    }

    /// Lowercase hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
