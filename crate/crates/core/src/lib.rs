//! Query orchestration over pluggable LLM query backends.
//!
//! A complex natural-language query over a multimodal document repository
//! flows through four stages: the decomposer splits it into
//! single-modality sub-queries with a dependency graph; the planner ranks
//! candidate data operators per sub-query by confidence using metadata
//! only; the router assigns each operator to the best adapter (history
//! statistics or a learned classifier); the executor runs ranked operators
//! progressively with early stopping, refining each sub-query from its
//! dependencies' answers and parallelizing independent sub-queries per
//! DAG stage. An optional aggregator synthesizes the final answer.
//!
//! Everything runs offline against a deterministic scripted mock backend;
//! the same pipeline runs live over any OpenAI-compatible endpoint.

pub mod adapters;
pub mod aggregate;
pub mod config;
pub mod decompose;
mod error;
pub mod eval;
pub mod exec;
mod jsonx;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod plan;
pub mod route;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::adapters::{Adapter, AdapterCapability, AdapterRegistry};
    pub use crate::aggregate::agg_results;
    pub use crate::config::{EngineConfig, PipelinePreset};
    pub use crate::decompose::{check_complexity, decompose, Complexity, DecomposeConfig};
    pub use crate::error::{Error, Result};
    pub use crate::eval::{coverage, hit, semantic_hit, token_f1, EvalFixture, MetricReport};
    pub use crate::exec::{exec_op, exec_subq, stage_split, StagePlan, SubQueryOutcome, ValidityMode};
    pub use crate::llm::{ChatBackend, ChatRequest, ChatResponse, EmbedBackend, HashEmbedder, MockChatBackend};
    pub use crate::model::{
        DependencyGraph, Document, DocumentRepository, ExecutionTrace, MetricScores, OperatorKind,
        OperatorResult, Query, SubQuery, TraceStore,
    };
    pub use crate::pipeline::{Pipeline, PipelineOptions, PipelineRun};
    pub use crate::plan::{select_op, Plan, RankedOperator};
    pub use crate::route::{
        quality_score, sample_weight, train_mlrouter, MlpRouterModel, QualityBlend, RouteDecision,
        RouteStrategy, Router, RouterTrainingRecord, SampleWeightConfig, StatTable,
    };
}
