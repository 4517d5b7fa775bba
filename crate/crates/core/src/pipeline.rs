//! End-to-end pipeline: decompose, plan, route, execute, aggregate. Built
//! either from an [`EngineConfig`] or from parts (tests wire in their own
//! backends and routers).

use crate::adapters::{
    AdapterRegistry, ProgrammaticPromptAdapter, RemoteAdapter, RemoteAdapterConfig,
    SemanticAggregationAdapter, SingleModelAdapter, TableStructuredAdapter,
};
use crate::aggregate::agg_results;
use crate::config::{
    AdapterSpec, BackendKind, EmbeddingProvider, EngineConfig,
};
use crate::decompose::{decompose, Complexity, DecomposeConfig};
use crate::error::{Error, Result};
use crate::exec::{exec_subq, stage_split, ExecContext, StagePlan, SubQueryOutcome, ValidityMode};
use crate::llm::{
    ChatBackend, EmbedBackend, HashEmbedder, MockChatBackend, RemoteChatBackend, RemoteConfig,
    RemoteEmbedBackend,
};
use crate::model::{
    DependencyGraph, DocumentRepository, OperatorKind, Query, TraceStore,
};
use crate::plan::{select_op, Plan, PlannerConfig, RankedOperator};
use crate::route::{MlpRouterModel, RouteStrategy, Router, StatTable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Stage toggles and knobs, decoupled from file-level configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub checker_enabled: bool,
    pub decomposer_enabled: bool,
    pub planner_enabled: bool,
    pub aggregator_enabled: bool,
    pub fixed_operator: Option<OperatorKind>,
    pub decompose: DecomposeConfig,
    pub planner: PlannerConfig,
    pub parallel: bool,
    pub parallelism: usize,
    pub validity: ValidityMode,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            checker_enabled: true,
            decomposer_enabled: true,
            planner_enabled: true,
            aggregator_enabled: true,
            fixed_operator: None,
            decompose: DecomposeConfig::default(),
            planner: PlannerConfig::default(),
            parallel: true,
            parallelism: 4,
            validity: ValidityMode::Rule,
        }
    }
}

impl PipelineOptions {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self> {
        let fixed_operator = match &cfg.pipeline.planner.fixed_operator {
            Some(s) => Some(
                OperatorKind::parse(s)
                    .ok_or_else(|| Error::Config(format!("unrecognized fixed operator: {s}")))?,
            ),
            None => None,
        };
        Ok(Self {
            checker_enabled: cfg.pipeline.checker.enabled,
            decomposer_enabled: cfg.pipeline.decomposer.enabled,
            planner_enabled: cfg.pipeline.planner.enabled,
            aggregator_enabled: cfg.pipeline.aggregator.enabled,
            fixed_operator,
            decompose: cfg.decompose_config(),
            planner: cfg.planner_config(),
            parallel: cfg.pipeline.executor.parallel,
            parallelism: cfg.backend.parallelism,
            validity: cfg.pipeline.executor.validity,
        })
    }
}

/// Everything the `--trace` flag dumps: the DAG, plans, routes, attempts,
/// and timings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub query: Query,
    pub complexity: Option<Complexity>,
    pub graph: DependencyGraph,
    pub stage_plan: StagePlan,
    pub plans: BTreeMap<usize, Plan>,
    pub outcomes: BTreeMap<usize, SubQueryOutcome>,
    pub final_answer: String,
    pub aggregated: bool,
    pub decompose_retries: u32,
    pub oversized_decomposition: bool,
    pub elapsed: f64,
}

#[derive(Clone)]
pub struct Pipeline {
    backend: Arc<dyn ChatBackend>,
    embedder: Arc<dyn EmbedBackend>,
    repo: Arc<DocumentRepository>,
    registry: Arc<AdapterRegistry>,
    router: Arc<Router>,
    store: Arc<TraceStore>,
    options: PipelineOptions,
}

fn build_adapter(spec: &AdapterSpec) -> Result<Arc<dyn crate::adapters::Adapter>> {
    Ok(match spec.id.as_str() {
        "sem-agg" => Arc::new(match spec.batch {
            Some(b) => SemanticAggregationAdapter::new(b),
            None => SemanticAggregationAdapter::default(),
        }),
        "prog-prompt" => Arc::new(ProgrammaticPromptAdapter),
        "single-model" => Arc::new(SingleModelAdapter),
        "table-struct" => Arc::new(match spec.row_chunk {
            Some(c) => TableStructuredAdapter::new(c),
            None => TableStructuredAdapter::default(),
        }),
        other => {
            let Some(endpoint) = &spec.endpoint else {
                return Err(Error::Config(format!(
                    "unknown adapter id {other}; remote adapters need an endpoint"
                )));
            };
            let supports = spec
                .supports
                .as_deref()
                .unwrap_or(&[])
                .iter()
                .map(|s| {
                    OperatorKind::parse(s)
                        .ok_or_else(|| Error::Config(format!("adapter {other}: bad operator {s}")))
                })
                .collect::<Result<std::collections::BTreeSet<_>>>()?;
            if supports.is_empty() {
                return Err(Error::Config(format!("adapter {other}: supports list is empty")));
            }
            Arc::new(RemoteAdapter::new(RemoteAdapterConfig {
                id: other.to_string(),
                endpoint: endpoint.clone(),
                supported: supports,
                timeout: Duration::from_secs(60),
            })?)
        }
    })
}

pub fn build_registry(specs: &[AdapterSpec]) -> Result<AdapterRegistry> {
    let mut registry = AdapterRegistry::new();
    for spec in specs {
        registry.register(build_adapter(spec)?)?;
    }
    Ok(registry)
}

fn env_nonempty(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

pub fn build_chat_backend(cfg: &EngineConfig) -> Result<Arc<dyn ChatBackend>> {
    Ok(match cfg.backend.kind {
        BackendKind::Mock => {
            let script = cfg.backend.script.as_ref().ok_or_else(|| {
                Error::Config("mock backend needs backend.script".into())
            })?;
            Arc::new(
                MockChatBackend::from_script_file(script)?
                    .with_image_support(cfg.backend.supports_images),
            )
        }
        BackendKind::Remote => {
            let endpoint = cfg
                .backend
                .endpoint
                .clone()
                .or_else(|| env_nonempty("OPENAI_BASE_URL"))
                .ok_or_else(|| {
                    Error::Config("remote backend needs backend.endpoint or OPENAI_BASE_URL".into())
                })?;
            let model = cfg
                .backend
                .model
                .clone()
                .ok_or_else(|| Error::Config("remote backend needs backend.model".into()))?;
            let mut remote = RemoteConfig::new(endpoint, model);
            remote.api_key = env_nonempty(&cfg.backend.api_key_env);
            remote.timeout = Duration::from_secs(cfg.backend.timeout_secs);
            remote.supports_images = cfg.backend.supports_images;
            Arc::new(RemoteChatBackend::new(remote)?)
        }
    })
}

pub fn build_embedder(cfg: &EngineConfig) -> Result<Arc<dyn EmbedBackend>> {
    Ok(match cfg.embedding.provider {
        EmbeddingProvider::Hash => Arc::new(HashEmbedder::with_dimension(cfg.embedding.dimension)),
        EmbeddingProvider::Remote => {
            let endpoint = cfg
                .backend
                .endpoint
                .clone()
                .or_else(|| env_nonempty("OPENAI_BASE_URL"))
                .ok_or_else(|| Error::Config("remote embeddings need backend.endpoint".into()))?;
            let model = cfg
                .embedding
                .model
                .clone()
                .ok_or_else(|| Error::Config("remote embeddings need embedding.model".into()))?;
            let mut remote = RemoteConfig::new(endpoint, model);
            remote.api_key = env_nonempty(&cfg.backend.api_key_env);
            remote.timeout = Duration::from_secs(cfg.backend.timeout_secs);
            Arc::new(RemoteEmbedBackend::new(remote, cfg.embedding.dimension)?)
        }
    })
}

pub fn build_router(cfg: &EngineConfig, embedder: &Arc<dyn EmbedBackend>) -> Result<Router> {
    Ok(match cfg.pipeline.router.strategy {
        RouteStrategy::Stat => {
            let table = match &cfg.pipeline.router.stats_path {
                Some(p) => StatTable::load(p)?,
                None => StatTable::default(),
            };
            Router::Stat(table)
        }
        RouteStrategy::Ml => {
            let path = cfg.pipeline.router.model_path.as_ref().ok_or_else(|| {
                Error::Config("ml router needs pipeline.router.model_path".into())
            })?;
            let model = MlpRouterModel::load(path)?;
            Router::Learned { model, embedder: Box::new(Arc::clone(embedder)) }
        }
    })
}

impl Pipeline {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let backend = build_chat_backend(cfg)?;
        let embedder = build_embedder(cfg)?;
        let repo_path = cfg
            .repository
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("repository.path is required".into()))?;
        let repo = DocumentRepository::load(repo_path).map_err(|e| match e {
            // A missing or malformed repository is a setup problem.
            Error::Repository(msg) => Error::Config(msg),
            other => other,
        })?;
        let registry = build_registry(&cfg.pipeline.adapters)?;
        let router = build_router(cfg, &embedder)?;
        let store = match &cfg.trace.log_path {
            Some(p) => TraceStore::open(p)?,
            None => TraceStore::memory(),
        };
        Ok(Self {
            backend,
            embedder,
            repo: Arc::new(repo),
            registry: Arc::new(registry),
            router: Arc::new(router),
            store: Arc::new(store),
            options: PipelineOptions::from_config(cfg)?,
        })
    }

    pub fn from_parts(
        backend: Arc<dyn ChatBackend>,
        embedder: Arc<dyn EmbedBackend>,
        repo: Arc<DocumentRepository>,
        registry: Arc<AdapterRegistry>,
        router: Arc<Router>,
        store: Arc<TraceStore>,
        options: PipelineOptions,
    ) -> Self {
        Self { backend, embedder, repo, registry, router, store, options }
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    pub fn repo(&self) -> &Arc<DocumentRepository> {
        &self.repo
    }

    pub fn registry(&self) -> &Arc<AdapterRegistry> {
        &self.registry
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn embedder(&self) -> &Arc<dyn EmbedBackend> {
        &self.embedder
    }

    pub fn router(&self) -> &Arc<Router> {
        &self.router
    }

    pub fn store(&self) -> &Arc<TraceStore> {
        &self.store
    }

    /// Same pipeline over a different repository (fixture evaluation).
    pub fn with_repo(&self, repo: Arc<DocumentRepository>) -> Self {
        let mut clone = self.clone();
        clone.repo = repo;
        clone
    }

    /// Stage 1: produce the dependency graph (single node when the
    /// decomposer is disabled).
    pub fn preprocess(&self, query: &Query) -> Result<(DependencyGraph, Option<Complexity>, u32, bool)> {
        if !self.options.decomposer_enabled {
            return Ok((DependencyGraph::single(query.text.clone())?, None, 0, false));
        }
        let d = decompose(query, &self.options.decompose, self.backend.as_ref())?;
        Ok((d.graph, d.complexity, d.retries, d.oversized))
    }

    /// Stage 2 hook used by the executor: LLM ranking, or the fixed
    /// operator when the planner is disabled.
    pub fn plan_subquery(&self, sq: &crate::model::SubQuery) -> Result<Plan> {
        if self.options.planner_enabled {
            select_op(
                sq,
                &OperatorKind::ALL,
                &self.repo,
                &self.options.planner,
                self.backend.as_ref(),
            )
        } else {
            let kind = self.options.fixed_operator.ok_or_else(|| {
                Error::Config("planner disabled but no fixed operator configured".into())
            })?;
            Ok(vec![RankedOperator {
                kind,
                subquery_index: sq.index,
                confidence: 1.0,
                candidate_doc_ids: Vec::new(),
            }])
        }
    }

    /// End-to-end execution of one query.
    pub fn query(&self, query: &Query) -> Result<PipelineRun> {
        let started = Instant::now();
        let (mut graph, complexity, retries, oversized) = self.preprocess(query)?;
        let stage_plan = stage_split(&graph);

        let plans: Mutex<BTreeMap<usize, Plan>> = Mutex::new(BTreeMap::new());
        let plan_fn = |sq: &crate::model::SubQuery| -> Result<Plan> {
            let plan = self.plan_subquery(sq)?;
            plans.lock().expect("plans poisoned").insert(sq.index, plan.clone());
            Ok(plan)
        };

        let ctx = ExecContext {
            registry: &self.registry,
            router: &self.router,
            repo: &self.repo,
            backend: self.backend.as_ref(),
            store: &self.store,
            validity: self.options.validity,
            query_id: &query.id,
            parallelism: self.options.parallelism,
        };
        let outcomes = exec_subq(&mut graph, self.options.parallel, &ctx, &plan_fn)?;

        let last_index = graph.len() - 1;
        let last_answer = outcomes
            .get(&last_index)
            .map(|o| o.chosen.answer.clone())
            .unwrap_or_default();
        let (final_answer, aggregated) = if self.options.aggregator_enabled {
            let results: Vec<(String, String)> = graph
                .nodes()
                .iter()
                .map(|n| {
                    let answer = outcomes
                        .get(&n.index)
                        .map(|o| o.chosen.answer.clone())
                        .unwrap_or_default();
                    (n.effective_text().to_string(), answer)
                })
                .collect();
            (agg_results(&results, query, self.backend.as_ref())?, true)
        } else {
            (last_answer, false)
        };

        Ok(PipelineRun {
            query: query.clone(),
            complexity,
            graph,
            stage_plan,
            plans: plans.into_inner().expect("plans poisoned"),
            outcomes,
            final_answer,
            aggregated,
            decompose_retries: retries,
            oversized_decomposition: oversized,
            elapsed: started.elapsed().as_secs_f64(),
        })
    }
}
