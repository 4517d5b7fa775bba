//! Fixture-dataset runner: end-to-end evaluation with the four metrics,
//! and the trace-collection mode that executes every capable adapter per
//! sub-query to build router training data.

use crate::error::{Error, Result};
use crate::eval::{coverage, hit, semantic_hit, token_f1};
use crate::exec::{refine_subquery, resolve_docs, stage_split};
use crate::model::{
    DocumentRepository, ExecutionTrace, MetricScores, Query, TraceStore,
};
use crate::pipeline::Pipeline;
use crate::route::{quality_score, QualityBlend};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// One evaluation fixture: a query, its gold answers, and the repository
/// it runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureCase {
    #[serde(default)]
    pub id: Option<String>,
    pub query: String,
    pub gold_answers: Vec<String>,
    pub repository: PathBuf,
}

/// A fixture dataset file: a JSON list of cases. Relative repository
/// paths resolve against the fixture file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFixture {
    pub cases: Vec<FixtureCase>,
}

impl EvalFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read fixtures {}: {e}", path.display())))?;
        let mut cases: Vec<FixtureCase> = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for case in &mut cases {
                if case.repository.is_relative() {
                    case.repository = base.join(&case.repository);
                }
            }
        }
        for (i, case) in cases.iter().enumerate() {
            if case.gold_answers.is_empty() {
                return Err(Error::Config(format!("fixture case {i} has no gold answers")));
            }
        }
        Ok(Self { cases })
    }

    fn case_id(&self, i: usize) -> String {
        self.cases[i].id.clone().unwrap_or_else(|| format!("case-{i}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub answer: String,
    pub f1: f64,
    pub hit: f64,
    pub sem_hit: f64,
    pub coverage: f64,
    pub elapsed: f64,
}

/// Per-query metrics plus corpus arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: Vec<QueryMetrics>,
    pub mean_f1: f64,
    pub mean_hit: f64,
    pub mean_sem_hit: f64,
    pub mean_coverage: f64,
    pub mean_elapsed: f64,
}

impl MetricReport {
    pub fn from_rows(per_query: Vec<QueryMetrics>) -> Self {
        let n = per_query.len().max(1) as f64;
        let sum = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
        Self {
            mean_f1: sum(|q| q.f1),
            mean_hit: sum(|q| q.hit),
            mean_sem_hit: sum(|q| q.sem_hit),
            mean_coverage: sum(|q| q.coverage),
            mean_elapsed: sum(|q| q.elapsed),
            per_query,
        }
    }

    /// Aligned plain-text table: F1 / Hit / Semantic Hit / Coverage /
    /// runtime per query, with a mean row.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let id_width = self
            .per_query
            .iter()
            .map(|q| q.query_id.len())
            .chain(["query".len(), "mean".len()])
            .max()
            .unwrap_or(5);
        out.push_str(&format!(
            "{:<id_width$}  {:>7}  {:>7}  {:>8}  {:>8}  {:>10}\n",
            "query", "f1", "hit", "sem_hit", "coverage", "runtime_s"
        ));
        for q in &self.per_query {
            out.push_str(&format!(
                "{:<id_width$}  {:>7.3}  {:>7.3}  {:>8.3}  {:>8.3}  {:>10.3}\n",
                q.query_id, q.f1, q.hit, q.sem_hit, q.coverage, q.elapsed
            ));
        }
        out.push_str(&format!(
            "{:<id_width$}  {:>7.3}  {:>7.3}  {:>8.3}  {:>8.3}  {:>10.3}\n",
            "mean", self.mean_f1, self.mean_hit, self.mean_sem_hit, self.mean_coverage, self.mean_elapsed
        ));
        out
    }
}

fn load_repo_cached(
    cache: &mut HashMap<PathBuf, Arc<DocumentRepository>>,
    path: &Path,
) -> Result<Arc<DocumentRepository>> {
    if let Some(repo) = cache.get(path) {
        return Ok(Arc::clone(repo));
    }
    let repo = Arc::new(DocumentRepository::load(path)?);
    cache.insert(path.to_path_buf(), Arc::clone(&repo));
    Ok(repo)
}

/// Run every fixture case through the pipeline and score the final
/// answers. The pipeline's own backend doubles as the semantic judge.
pub fn evaluate(fixture: &EvalFixture, base: &Pipeline) -> Result<MetricReport> {
    let mut cache = HashMap::new();
    let mut rows = Vec::with_capacity(fixture.cases.len());
    for (i, case) in fixture.cases.iter().enumerate() {
        let id = fixture.case_id(i);
        let repo = load_repo_cached(&mut cache, &case.repository)?;
        let pipeline = base.with_repo(repo);
        let query = Query::new(id.clone(), case.query.clone())?.with_golds(case.gold_answers.clone());
        let started = Instant::now();
        let run = pipeline.query(&query)?;
        let elapsed = started.elapsed().as_secs_f64();
        let golds = &case.gold_answers;
        rows.push(QueryMetrics {
            query_id: id,
            f1: token_f1(&run.final_answer, golds),
            hit: hit(&run.final_answer, golds),
            sem_hit: semantic_hit(&run.final_answer, golds, &case.query, pipeline.backend().as_ref()),
            coverage: coverage(&run.final_answer, golds),
            elapsed,
            answer: run.final_answer,
        });
    }
    Ok(MetricReport::from_rows(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectOutcome {
    pub queries: usize,
    pub subqueries: usize,
    pub traces_written: usize,
}

/// Trace-collection mode: per sub-query, the top-planned operator runs on
/// every capable adapter; each outcome is scored against the case's gold
/// answers and appended to `store`. Dependents are refined with the
/// best-scoring adapter's answer. Adapter failures land as zero-score
/// traces and the run continues.
pub fn collect_traces(
    fixture: &EvalFixture,
    base: &Pipeline,
    store: &TraceStore,
    blend: &QualityBlend,
) -> Result<CollectOutcome> {
    let mut cache = HashMap::new();
    let mut outcome = CollectOutcome { queries: 0, subqueries: 0, traces_written: 0 };
    for (i, case) in fixture.cases.iter().enumerate() {
        let id = fixture.case_id(i);
        let repo = load_repo_cached(&mut cache, &case.repository)?;
        let pipeline = base.with_repo(Arc::clone(&repo));
        let query = Query::new(id.clone(), case.query.clone())?.with_golds(case.gold_answers.clone());
        let (mut graph, _, _, _) = pipeline.preprocess(&query)?;
        let stages = stage_split(&graph);
        let mut canonical: BTreeMap<usize, String> = BTreeMap::new();

        for stage in &stages.stages {
            for &idx in stage {
                let mut sq = graph.nodes()[idx].clone();
                let prior: BTreeMap<usize, String> = sq
                    .depends_on
                    .iter()
                    .map(|&d| (d, canonical.get(&d).cloned().unwrap_or_else(|| crate::exec::UNRESOLVED.into())))
                    .collect();
                if let Some(refined) = refine_subquery(&sq, &prior, &graph, pipeline.backend().as_ref())? {
                    sq.set_refined(refined.clone())?;
                    graph.nodes_mut()[idx].set_refined(refined)?;
                }
                let plan = pipeline.plan_subquery(&sq)?;
                let top = &plan[0];
                let docs = resolve_docs(top, &repo);
                let text = sq.effective_text();

                let mut best: Option<(f64, String)> = None;
                for adapter in pipeline.registry().capable(top.kind) {
                    let started = Instant::now();
                    let result = adapter.execute(top.kind, text, &docs, pipeline.backend().as_ref());
                    let (answer, elapsed) = match result {
                        Ok(r) => (r.answer, r.elapsed),
                        Err(e) => {
                            log::warn!("adapter {} failed during collection: {e}", adapter.id());
                            (String::new(), started.elapsed().as_secs_f64())
                        }
                    };
                    let scores = MetricScores {
                        f1: token_f1(&answer, &case.gold_answers),
                        hit: hit(&answer, &case.gold_answers),
                        coverage: coverage(&answer, &case.gold_answers),
                        sem_hit: if answer.is_empty() {
                            0.0
                        } else {
                            semantic_hit(&answer, &case.gold_answers, text, pipeline.backend().as_ref())
                        },
                    };
                    store.append(&ExecutionTrace {
                        query_id: id.clone(),
                        subquery_text: text.to_string(),
                        operator_kind: top.kind,
                        adapter_id: adapter.id().to_string(),
                        answer: answer.clone(),
                        scores,
                        elapsed,
                    })?;
                    outcome.traces_written += 1;
                    let q = quality_score(&scores, blend)?;
                    if best.as_ref().is_none_or(|(b, _)| q > *b) {
                        best = Some((q, answer));
                    }
                }
                if let Some((_, answer)) = best {
                    canonical.insert(idx, answer);
                }
                outcome.subqueries += 1;
            }
        }
        outcome.queries += 1;
    }
    Ok(outcome)
}
