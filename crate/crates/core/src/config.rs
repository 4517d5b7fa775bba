//! Pipeline configuration: one TOML or JSON file with sections for the
//! backend, embedding provider, repository, and every pipeline stage.
//! Paths inside the file resolve relative to the file's directory. The
//! three shipped presets (full, partial, mini) are section overrides, so
//! every ablation is reachable through configuration alone.

use crate::decompose::DecomposeConfig;
use crate::error::{Error, Result};
use crate::exec::ValidityMode;
use crate::model::OperatorKind;
use crate::plan::PlannerConfig;
use crate::route::{MlpTrainConfig, QualityBlend, RouteStrategy, SampleWeightConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelinePreset {
    /// Everything on: checker, decomposer, planner, router, executor,
    /// aggregator.
    Full,
    /// No pre/postprocessing: the query runs as a single sub-query and the
    /// last result is final.
    Partial,
    /// Execution only: the operator is fixed up front; planning,
    /// decomposition, and aggregation are skipped.
    Mini,
}

impl PipelinePreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Some(Self::Full),
            "partial" => Some(Self::Partial),
            "mini" => Some(Self::Mini),
            _ => None,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_parallelism() -> usize {
    4
}
fn default_hash_dimension() -> usize {
    crate::llm::HASH_EMBED_DIMENSION
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    /// Mock script path.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Remote endpoint; falls back to `OPENAI_BASE_URL`.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub supports_images: bool,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Shared parallelism bound for backend calls and stage execution.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            script: None,
            endpoint: None,
            model: None,
            api_key_env: default_api_key_env(),
            supports_images: false,
            timeout_secs: default_timeout_secs(),
            parallelism: default_parallelism(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProvider {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    #[serde(default)]
    pub provider: EmbeddingProvider,
    #[serde(default = "default_hash_dimension")]
    pub dimension: usize,
    /// Remote embedding model name.
    #[serde(default)]
    pub model: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self { provider: EmbeddingProvider::Hash, dimension: default_hash_dimension(), model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RepositorySection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl Default for CheckerSection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposerSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_max_out")]
    pub max_out: usize,
    #[serde(default = "default_max_it")]
    pub max_it: u32,
}

fn default_max_out() -> usize {
    3
}
fn default_max_it() -> u32 {
    2
}

impl Default for DecomposerSection {
    fn default() -> Self {
        Self { enabled: true, max_out: default_max_out(), max_it: default_max_it() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_max_candidate_docs")]
    pub max_candidate_docs: usize,
    /// Required when the planner is disabled: the operator to run.
    #[serde(default)]
    pub fixed_operator: Option<String>,
}

fn default_max_candidate_docs() -> usize {
    crate::plan::DEFAULT_MAX_CANDIDATE_DOCS
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self { enabled: true, max_candidate_docs: default_max_candidate_docs(), fixed_operator: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    #[serde(default = "default_strategy")]
    pub strategy: RouteStrategy,
    #[serde(default)]
    pub stats_path: Option<PathBuf>,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
}

fn default_strategy() -> RouteStrategy {
    RouteStrategy::Stat
}

impl Default for RouterSection {
    fn default() -> Self {
        Self { strategy: RouteStrategy::Stat, stats_path: None, model_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorSection {
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default)]
    pub validity: ValidityMode,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        Self { parallel: true, validity: ValidityMode::Rule }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

/// One adapter to register, in order, with per-adapter options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub id: String,
    /// Fold batch size (semantic aggregation).
    #[serde(default)]
    pub batch: Option<usize>,
    /// Row-filter chunk size (structured table adapter).
    #[serde(default)]
    pub row_chunk: Option<usize>,
    /// Remote adapter endpoint.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Remote adapter capability list (text/table/image).
    #[serde(default)]
    pub supports: Option<Vec<String>>,
}

fn default_adapters() -> Vec<AdapterSpec> {
    ["sem-agg", "prog-prompt", "single-model", "table-struct"]
        .iter()
        .map(|id| AdapterSpec {
            id: id.to_string(),
            batch: None,
            row_chunk: None,
            endpoint: None,
            supports: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default)]
    pub checker: CheckerSection,
    #[serde(default)]
    pub decomposer: DecomposerSection,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub router: RouterSection,
    #[serde(default)]
    pub executor: ExecutorSection,
    #[serde(default)]
    pub aggregator: AggregatorSection,
    #[serde(default = "default_adapters")]
    pub adapters: Vec<AdapterSpec>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            checker: CheckerSection::default(),
            decomposer: DecomposerSection::default(),
            planner: PlannerSection::default(),
            router: RouterSection::default(),
            executor: ExecutorSection::default(),
            aggregator: AggregatorSection::default(),
            adapters: default_adapters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    #[serde(default)]
    pub log_path: Option<PathBuf>,
}

/// Router training hyperparameters (offline commands).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub weight: SampleWeightConfig,
    #[serde(default)]
    pub blend: QualityBlend,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_hidden_width() -> usize {
    64
}
fn default_hidden_layers() -> usize {
    1
}
fn default_learning_rate() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    200
}
fn default_seed() -> u64 {
    42
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            weight: SampleWeightConfig::default(),
            blend: QualityBlend::default(),
            hidden_width: default_hidden_width(),
            hidden_layers: default_hidden_layers(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            seed: default_seed(),
        }
    }
}

impl TrainSection {
    pub fn mlp_config(&self) -> MlpTrainConfig {
        MlpTrainConfig {
            weight: self.weight,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub repository: RepositorySection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub train: TrainSection,
}

impl EngineConfig {
    /// Load a TOML (default) or JSON config and resolve its relative paths
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: EngineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.backend.script.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.repository.path.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.pipeline.router.stats_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.pipeline.router.model_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.trace.log_path.as_mut() {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decompose_config().validate()?;
        self.train.blend.validate()?;
        self.train.weight.validate()?;
        if self.backend.parallelism == 0 {
            return Err(Error::Config("backend.parallelism must be at least 1".into()));
        }
        if self.pipeline.adapters.is_empty() {
            return Err(Error::Config("pipeline.adapters must list at least one adapter".into()));
        }
        if !self.pipeline.planner.enabled {
            let Some(op) = &self.pipeline.planner.fixed_operator else {
                return Err(Error::Config(
                    "pipeline.planner.fixed_operator is required when the planner is disabled".into(),
                ));
            };
            if OperatorKind::parse(op).is_none() {
                return Err(Error::Config(format!("unrecognized fixed operator: {op}")));
            }
        }
        Ok(())
    }

    pub fn decompose_config(&self) -> DecomposeConfig {
        DecomposeConfig {
            check: self.pipeline.checker.enabled,
            max_out: self.pipeline.decomposer.max_out,
            max_it: self.pipeline.decomposer.max_it,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig { max_candidate_docs: self.pipeline.planner.max_candidate_docs }
    }

    /// Apply one of the shipped pipeline shapes.
    pub fn apply_preset(&mut self, preset: PipelinePreset) {
        match preset {
            PipelinePreset::Full => {
                self.pipeline.checker.enabled = true;
                self.pipeline.decomposer.enabled = true;
                self.pipeline.planner.enabled = true;
                self.pipeline.aggregator.enabled = true;
            }
            PipelinePreset::Partial => {
                self.pipeline.checker.enabled = false;
                self.pipeline.decomposer.enabled = false;
                self.pipeline.planner.enabled = true;
                self.pipeline.aggregator.enabled = false;
            }
            PipelinePreset::Mini => {
                self.pipeline.checker.enabled = false;
                self.pipeline.decomposer.enabled = false;
                self.pipeline.planner.enabled = false;
                self.pipeline.aggregator.enabled = false;
            }
        }
    }
}
