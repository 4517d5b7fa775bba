//! Stage 3b: execution. Ranked operators run progressively with early
//! stopping; sub-queries are refined from their dependencies' answers
//! before execution; the dependency DAG splits into stages that run
//! sequentially while sub-queries within a stage may run in parallel.

use crate::error::{Error, Result};
use crate::llm::{ChatBackend, ChatRequest};
use crate::model::{
    DependencyGraph, DocumentRepository, OperatorResult, SubQuery, TraceStore,
};
use crate::model::{ExecutionTrace, MetricScores, OperatorKind};
use crate::plan::{Plan, RankedOperator};
use crate::route::Router;
use crate::adapters::AdapterRegistry;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Marker substituted for unresolved dependency answers in refinement
/// context; later modalities may still answer.
pub const UNRESOLVED: &str = "[unresolved]";

/// Phrases that mark an answer as a refusal. Matched as contiguous token
/// sequences over the normalized answer.
const REFUSAL_LEXICON: &[&str] = &["unknown", "cannot determine", "no evidence", "n/a"];

/// Cheap deterministic validity rule: an answer is invalid iff it
/// normalizes to nothing or contains a refusal phrase.
pub fn rule_validity(answer: &str) -> bool {
    let tokens = crate::eval::normalize_tokens(answer);
    if tokens.is_empty() {
        return false;
    }
    !REFUSAL_LEXICON.iter().any(|phrase| {
        let needle = crate::eval::normalize_tokens(phrase);
        tokens.windows(needle.len()).any(|w| w == needle.as_slice())
    })
}

/// How "valid/meaningful result" is judged during execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ValidityMode {
    #[default]
    Rule,
    /// Rule first, then an LLM judge confirms rule-valid answers.
    Llm,
}

fn llm_validity(subquery: &str, answer: &str, backend: &dyn ChatBackend) -> bool {
    let req = ChatRequest::new(
        "You judge whether an answer meaningfully addresses a question.",
        format!(
            "Sub-query: {subquery}\nAnswer: {answer}\n\
             Is this a meaningful, non-evasive answer to the sub-query? Reply with exactly YES or NO."
        ),
    );
    match backend.chat(&req) {
        Ok(resp) => resp.text.trim().eq_ignore_ascii_case("yes"),
        Err(e) => {
            log::warn!("validity judge failed ({e}); keeping rule verdict");
            true
        }
    }
}

/// Ordered stages of mutually independent sub-queries. Stage of a node is
/// its longest-path depth, so every dependency sits in a strictly earlier
/// stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Vec<usize>>,
}

/// Split a dependency graph into BFS-style stages by longest-path depth.
pub fn stage_split(graph: &DependencyGraph) -> StagePlan {
    let nodes = graph.nodes();
    let mut level = vec![0usize; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        // depends_on < i always holds, so one forward pass suffices.
        level[i] = node.depends_on.iter().map(|&d| level[d] + 1).max().unwrap_or(0);
    }
    let depth = level.iter().copied().max().map_or(0, |m| m + 1);
    let mut stages = vec![Vec::new(); depth];
    for (i, &l) in level.iter().enumerate() {
        stages[l].push(i);
    }
    StagePlan { stages }
}

const REFINE_SYSTEM: &str = "You rewrite a sub-query by substituting results from earlier sub-queries.";

/// Rewrite a sub-query with its dependencies' answers so abstract
/// references become concrete entities. No dependencies means identity
/// with zero backend calls; backend failures fall back to the original
/// text with a warning.
pub fn refine_subquery(
    sq: &SubQuery,
    prior: &BTreeMap<usize, String>,
    graph: &DependencyGraph,
    backend: &dyn ChatBackend,
) -> Result<Option<String>> {
    if sq.depends_on.is_empty() {
        return Ok(None);
    }
    let keys: std::collections::BTreeSet<usize> = prior.keys().copied().collect();
    if keys != sq.depends_on {
        return Err(Error::Execution(format!(
            "refinement context keys {keys:?} do not match dependencies {:?} of sub-query {}",
            sq.depends_on, sq.index
        )));
    }
    let context = sq
        .depends_on
        .iter()
        .map(|&d| format!("- {} -> {}", graph.nodes()[d].effective_text(), prior[&d]))
        .collect::<Vec<_>>()
        .join("\n");
    let req = ChatRequest::new(
        REFINE_SYSTEM,
        format!(
            "Known results:\n{context}\nSub-query to rewrite: {}\n\
             Rewrite it as a self-contained question, replacing references like \"this state\" \
             or \"them\" with the concrete entities from the known results. \
             Reply with only the rewritten question.",
            sq.text
        ),
    );
    match backend.chat(&req) {
        Ok(resp) if !resp.text.trim().is_empty() => Ok(Some(resp.text.trim().to_string())),
        Ok(_) => {
            log::warn!("refinement returned empty text for sub-query {}; keeping original", sq.index);
            Ok(None)
        }
        Err(e) => {
            log::warn!("refinement failed for sub-query {} ({e}); keeping original", sq.index);
            Ok(None)
        }
    }
}

/// One executed (operator, adapter) attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub kind: OperatorKind,
    pub adapter_id: String,
    pub confidence: f64,
    pub route_score: f64,
    pub result: OperatorResult,
}

/// Outcome of one sub-query: the chosen result (first valid attempt, or
/// the last attempt when none were valid) plus every attempt's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQueryOutcome {
    pub subquery_index: usize,
    pub chosen: OperatorResult,
    pub attempted: usize,
    pub attempts: Vec<AttemptRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_text: Option<String>,
}

/// Shared execution context.
pub struct ExecContext<'a> {
    pub registry: &'a AdapterRegistry,
    pub router: &'a Router,
    pub repo: &'a DocumentRepository,
    pub backend: &'a dyn ChatBackend,
    pub store: &'a TraceStore,
    pub validity: ValidityMode,
    pub query_id: &'a str,
    /// Parallelism bound shared with the backend.
    pub parallelism: usize,
}

pub(crate) fn resolve_docs<'r>(
    ranked: &RankedOperator,
    repo: &'r DocumentRepository,
) -> Vec<&'r crate::model::Document> {
    let picked: Vec<_> = ranked
        .candidate_doc_ids
        .iter()
        .filter_map(|id| repo.get(id))
        .filter(|d| d.modality() == ranked.kind)
        .collect();
    if picked.is_empty() {
        // No metadata-selected candidates: fall back to every document of
        // the operator's modality.
        repo.by_modality(ranked.kind)
    } else {
        picked
    }
}

/// Execute ranked operators progressively: route each to its adapter, run,
/// and stop at the first valid result. Every attempt lands in the trace
/// store; routing failures skip to the next operator.
pub fn exec_op(plan: &Plan, subquery_text: &str, ctx: &ExecContext<'_>) -> Result<SubQueryOutcome> {
    if plan.is_empty() {
        return Err(Error::Execution("empty operator plan".into()));
    }
    debug_assert!(plan.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let subquery_index = plan[0].subquery_index;
    for ranked in plan {
        let decision = match ctx.router.route(ranked.kind, subquery_text, ctx.registry) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("routing {} failed ({e}); trying next operator", ranked.kind);
                continue;
            }
        };
        let adapter = ctx
            .registry
            .get(&decision.adapter_id)
            .ok_or_else(|| Error::Router(format!("decision names unknown adapter {}", decision.adapter_id)))?;
        let docs = resolve_docs(ranked, ctx.repo);
        let mut result = adapter.execute(ranked.kind, subquery_text, &docs, ctx.backend)?;
        if result.valid && ctx.validity == ValidityMode::Llm {
            let confirmed = llm_validity(subquery_text, &result.answer, ctx.backend);
            result = OperatorResult::new(
                result.answer.clone(),
                confirmed,
                result.raw.clone(),
                result.adapter_id.clone(),
                result.elapsed,
            );
        }
        ctx.store.append(&ExecutionTrace {
            query_id: ctx.query_id.to_string(),
            subquery_text: subquery_text.to_string(),
            operator_kind: ranked.kind,
            adapter_id: result.adapter_id.clone(),
            answer: result.answer.clone(),
            scores: MetricScores::default(),
            elapsed: result.elapsed,
        })?;
        let valid = result.valid;
        attempts.push(AttemptRecord {
            kind: ranked.kind,
            adapter_id: decision.adapter_id.clone(),
            confidence: ranked.confidence,
            route_score: decision.score,
            result,
        });
        if valid {
            break;
        }
    }
    let Some(chosen) = attempts.iter().find(|a| a.result.valid).or(attempts.last()) else {
        return Err(Error::Execution(format!(
            "no operator of sub-query {subquery_index} could be routed"
        )));
    };
    Ok(SubQueryOutcome {
        subquery_index,
        chosen: chosen.result.clone(),
        attempted: attempts.len(),
        attempts: attempts.clone(),
        refined_text: None,
    })
}

/// Planning hook: the pipeline supplies either LLM-ranked planning or a
/// fixed operator (mini pipelines).
pub type PlanFn<'a> = dyn Fn(&SubQuery) -> Result<Plan> + Sync + 'a;

/// Execute all sub-queries of a graph. Stages run sequentially; within a
/// stage, `par` runs sub-queries concurrently up to the parallelism bound.
/// Per sub-query: refine from dependency answers, plan, execute. Invalid
/// outcomes do not abort the run; dependents see [`UNRESOLVED`].
pub fn exec_subq(
    graph: &mut DependencyGraph,
    par: bool,
    ctx: &ExecContext<'_>,
    plan_fn: &PlanFn<'_>,
) -> Result<BTreeMap<usize, SubQueryOutcome>> {
    let stage_plan = stage_split(graph);
    let mut outcomes: BTreeMap<usize, SubQueryOutcome> = BTreeMap::new();

    for stage in &stage_plan.stages {
        // Snapshot per-sub-query inputs before the stage runs.
        let jobs: Vec<(usize, SubQuery, BTreeMap<usize, String>)> = stage
            .iter()
            .map(|&i| {
                let sq = graph.nodes()[i].clone();
                let prior = sq
                    .depends_on
                    .iter()
                    .map(|&d| {
                        let answer = outcomes
                            .get(&d)
                            .filter(|o| o.chosen.valid)
                            .map(|o| o.chosen.answer.clone())
                            .unwrap_or_else(|| UNRESOLVED.to_string());
                        (d, answer)
                    })
                    .collect();
                (i, sq, prior)
            })
            .collect();

        let run_one = |(i, mut sq, prior): (usize, SubQuery, BTreeMap<usize, String>)| -> Result<(usize, SubQueryOutcome)> {
            if let Some(refined) = refine_subquery(&sq, &prior, graph, ctx.backend)? {
                sq.set_refined(refined)?;
            }
            let plan = plan_fn(&sq)?;
            let mut outcome = exec_op(&plan, sq.effective_text(), ctx)?;
            outcome.subquery_index = i;
            outcome.refined_text = sq.refined_text.clone();
            Ok((i, outcome))
        };

        let stage_results: Vec<Result<(usize, SubQueryOutcome)>> = if par && jobs.len() > 1 {
            run_bounded(jobs, ctx.parallelism.max(1), &run_one)
        } else {
            jobs.into_iter().map(&run_one).collect()
        };

        for result in stage_results {
            let (i, outcome) = result?;
            if let Some(refined) = outcome.refined_text.clone() {
                graph.nodes_mut()[i].set_refined(refined)?;
            }
            outcomes.insert(i, outcome);
        }
    }
    Ok(outcomes)
}

/// Run jobs on up to `bound` worker threads, preserving nothing about
/// order (results carry their own indices).
fn run_bounded<J, R, F>(jobs: Vec<J>, bound: usize, f: &F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync,
{
    let queue: Vec<Mutex<Option<J>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<R>> = Mutex::new(Vec::with_capacity(queue.len()));
    let workers = bound.min(queue.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= queue.len() {
                    break;
                }
                let job = queue[idx].lock().expect("job slot poisoned").take().expect("job taken once");
                let r = f(job);
                results.lock().expect("results poisoned").push(r);
            });
        }
    });
    results.into_inner().expect("results poisoned")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubQuery;
    use std::collections::BTreeSet;

    fn graph(deps: &[&[usize]]) -> DependencyGraph {
        let nodes = deps
            .iter()
            .enumerate()
            .map(|(i, d)| {
                SubQuery::new(i, format!("sq {i}"), d.iter().copied().collect::<BTreeSet<_>>()).unwrap()
            })
            .collect();
        DependencyGraph::new(nodes).unwrap()
    }

    #[test]
    fn validity_rule_flags_refusals_and_empties() {
        assert!(rule_validity("2006"));
        assert!(!rule_validity(""));
        assert!(!rule_validity("   ...  "));
        assert!(!rule_validity("I cannot determine this."));
        assert!(!rule_validity("UNKNOWN"));
        assert!(!rule_validity("N/A"));
        assert!(!rule_validity("there is no evidence for that"));
        // Token-boundary safety: refusal phrases must not fire inside words.
        assert!(rule_validity("the unknowns remain"));
        assert!(rule_validity("nothing in a hole"));
    }

    #[test]
    fn stage_split_salary_example() {
        let g = graph(&[&[], &[], &[0, 1]]);
        let plan = stage_split(&g);
        assert_eq!(plan.stages, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn stage_split_no_deps_single_stage() {
        let g = graph(&[&[], &[], &[]]);
        assert_eq!(stage_split(&g).stages, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn stage_split_chain() {
        let g = graph(&[&[], &[0], &[1]]);
        assert_eq!(stage_split(&g).stages, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn stage_split_longest_path_depth() {
        // 3 depends on 0 (depth 0) and 2 (depth 1): lands at depth 2.
        let g = graph(&[&[], &[], &[1], &[0, 2]]);
        assert_eq!(stage_split(&g).stages, vec![vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn refine_identity_without_deps() {
        let g = graph(&[&[]]);
        let mock = crate::llm::MockChatBackend::new(vec![], None);
        let refined = refine_subquery(&g.nodes()[0], &BTreeMap::new(), &g, &mock).unwrap();
        assert_eq!(refined, None);
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn refine_requires_exact_dependency_context() {
        let g = graph(&[&[], &[0]]);
        let mock = crate::llm::MockChatBackend::new(vec![], None);
        let err = refine_subquery(&g.nodes()[1], &BTreeMap::new(), &g, &mock).unwrap_err();
        assert!(matches!(err, Error::Execution(_)));
    }

    #[test]
    fn refine_falls_back_to_original_on_backend_error() {
        let g = graph(&[&[], &[0]]);
        let mock = crate::llm::MockChatBackend::new(vec![], None); // script miss
        let prior: BTreeMap<usize, String> = [(0, "California".to_string())].into();
        let refined = refine_subquery(&g.nodes()[1], &prior, &g, &mock).unwrap();
        assert_eq!(refined, None, "unrefined fallback");
    }
}
