//! Physical planning: assign each (operator, sub-query) to an adapter.
//! Two strategies ship — a history-statistics router (sub-query agnostic
//! argmax over per-(operator, adapter) mean quality) and a learned router
//! (frozen encoder + MLP classifier trained with confidence-weighted
//! cross-entropy).

mod mlp;

pub use mlp::{
    prepare_batch, train_mlrouter, DenseLayer, MlpRouterModel, MlpTrainConfig, TrainReport,
    TrainingBatch,
};

use crate::adapters::AdapterRegistry;
use crate::error::{Error, Result};
use crate::llm::EmbedBackend;
use crate::model::{ExecutionTrace, MetricScores, OperatorKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Blend weights for collapsing the four metric scores into one quality
/// score. Semantic Hit and F1 are emphasized; Hit and Coverage are
/// secondary. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBlend {
    pub sem_hit: f64,
    pub f1: f64,
    pub hit: f64,
    pub coverage: f64,
}

impl Default for QualityBlend {
    fn default() -> Self {
        Self { sem_hit: 0.35, f1: 0.35, hit: 0.15, coverage: 0.15 }
    }
}

impl QualityBlend {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.sem_hit, self.f1, self.hit, self.coverage];
        if parts.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Invariant("blend weights must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!("blend weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Convex combination of the four metric scores; lands in [0, 1].
pub fn quality_score(scores: &MetricScores, blend: &QualityBlend) -> Result<f64> {
    scores.validate()?;
    blend.validate()?;
    Ok(blend.sem_hit * scores.sem_hit
        + blend.f1 * scores.f1
        + blend.hit * scores.hit
        + blend.coverage * scores.coverage)
}

/// Constants of the confidence-aware sample weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWeightConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for SampleWeightConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.9, gamma: 0.2, w_min: 0.1, w_max: 1.5 }
    }
}

impl SampleWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_min > self.w_max {
            return Err(Error::Invariant(format!(
                "w_min {} exceeds w_max {}",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }
}

/// Confidence-aware sample weight:
/// `w = min(w_max, max(w_min, alpha + beta*S1 + gamma*(S1 - S2)))`,
/// where S1 is the best adapter's quality score and S2 the second best.
/// Requires 1 >= S1 >= S2 >= 0.
pub fn sample_weight(s1: f64, s2: f64, cfg: &SampleWeightConfig) -> Result<f64> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&s1) || !(0.0..=1.0).contains(&s2) || s2 > s1 {
        return Err(Error::Invariant(format!(
            "sample_weight requires 1 >= S1 >= S2 >= 0, got S1={s1}, S2={s2}"
        )));
    }
    let raw = cfg.alpha + cfg.beta * s1 + cfg.gamma * (s1 - s2);
    Ok(raw.max(cfg.w_min).min(cfg.w_max))
}

/// One router training record: a sub-query plus the quality score every
/// capable adapter achieved on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTrainingRecord {
    pub subquery_text: String,
    pub operator_kind: OperatorKind,
    /// (adapter_id, quality in [0, 1]); order preserved from the log.
    pub adapter_scores: Vec<(String, f64)>,
}

impl RouterTrainingRecord {
    /// Best adapter and its score S1 (ties keep the earliest entry).
    pub fn best(&self) -> Result<(&str, f64)> {
        self.adapter_scores
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("scores are finite"))
            .map(|(id, s)| (id.as_str(), *s))
            .ok_or_else(|| Error::Invariant("training record has no adapter scores".into()))
    }

    /// Second-best score S2; zero when only one adapter was scored.
    pub fn second_score(&self) -> f64 {
        let mut scores: Vec<f64> = self.adapter_scores.iter().map(|(_, s)| *s).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
        scores.get(1).copied().unwrap_or(0.0)
    }

    pub fn weight(&self, cfg: &SampleWeightConfig) -> Result<f64> {
        let (_, s1) = self.best()?;
        sample_weight(s1, self.second_score(), cfg)
    }
}

/// Group a trace log into training records: one record per
/// (query, sub-query, operator kind), averaging duplicate adapter entries.
pub fn records_from_traces(traces: &[ExecutionTrace], blend: &QualityBlend) -> Result<Vec<RouterTrainingRecord>> {
    let mut order: Vec<(String, String, OperatorKind)> = Vec::new();
    let mut groups: BTreeMap<(String, String, OperatorKind), Vec<(String, f64)>> = BTreeMap::new();
    for t in traces {
        let key = (t.query_id.clone(), t.subquery_text.clone(), t.operator_kind);
        let q = quality_score(&t.scores, blend)?;
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((t.adapter_id.clone(), q));
    }
    let mut records = Vec::with_capacity(order.len());
    for key in order {
        let entries = groups.remove(&key).expect("key recorded in order list");
        let mut adapter_scores: Vec<(String, f64)> = Vec::new();
        for (adapter, q) in entries {
            match adapter_scores.iter_mut().find(|(a, _)| *a == adapter) {
                Some((_, acc)) => *acc = (*acc + q) / 2.0,
                None => adapter_scores.push((adapter, q)),
            }
        }
        records.push(RouterTrainingRecord {
            subquery_text: key.1,
            operator_kind: key.2,
            adapter_scores,
        });
    }
    Ok(records)
}

/// Mean quality per (operator kind, adapter) with sample counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatTable {
    entries: BTreeMap<OperatorKind, BTreeMap<String, StatEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatEntry {
    pub mean: f64,
    pub count: u64,
}

impl StatTable {
    pub fn from_traces(traces: &[ExecutionTrace], blend: &QualityBlend) -> Result<Self> {
        let mut sums: BTreeMap<OperatorKind, BTreeMap<String, (f64, u64)>> = BTreeMap::new();
        for t in traces {
            let q = quality_score(&t.scores, blend)?;
            let slot = sums.entry(t.operator_kind).or_default().entry(t.adapter_id.clone()).or_insert((0.0, 0));
            slot.0 += q;
            slot.1 += 1;
        }
        let entries = sums
            .into_iter()
            .map(|(kind, by_adapter)| {
                let stats = by_adapter
                    .into_iter()
                    .map(|(adapter, (sum, count))| {
                        (adapter, StatEntry { mean: sum / count as f64, count })
                    })
                    .collect();
                (kind, stats)
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn mean(&self, kind: OperatorKind, adapter_id: &str) -> Option<f64> {
        self.entries.get(&kind).and_then(|m| m.get(adapter_id)).map(|e| e.mean)
    }

    pub fn entry(&self, kind: OperatorKind, adapter_id: &str) -> Option<&StatEntry> {
        self.entries.get(&kind).and_then(|m| m.get(adapter_id))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read stat table {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Routing strategy selector: `S` for statistics, `L` for learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteStrategy {
    Stat,
    Ml,
}

/// The router's assignment of one operator to one adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub operator_kind: OperatorKind,
    pub subquery_text: String,
    pub adapter_id: String,
    /// Preference value behind the decision: historical mean quality for
    /// the stat router, predicted probability for the learned one.
    pub score: f64,
}

/// A configured router, ready to assign adapters.
pub enum Router {
    /// Sub-query agnostic: argmax of historical mean quality. Adapters
    /// with no history count as mean 0, so an empty table degenerates to
    /// registration order.
    Stat(StatTable),
    /// Sub-query dependent: masked argmax of the MLP's class probabilities.
    Learned { model: MlpRouterModel, embedder: Box<dyn EmbedBackend> },
}

impl Router {
    pub fn strategy(&self) -> RouteStrategy {
        match self {
            Router::Stat(_) => RouteStrategy::Stat,
            Router::Learned { .. } => RouteStrategy::Ml,
        }
    }

    /// Pick the adapter for (kind, sub-query). The decision always lands on
    /// a registered, capable adapter; ties break by registration order.
    pub fn route(
        &self,
        kind: OperatorKind,
        subquery_text: &str,
        registry: &AdapterRegistry,
    ) -> Result<RouteDecision> {
        let capable = registry.capable(kind);
        if capable.is_empty() {
            return Err(Error::NoCapableAdapter(kind.to_string()));
        }
        let (adapter_id, score) = match self {
            Router::Stat(table) => {
                let mut best: Option<(&str, f64)> = None;
                for adapter in &capable {
                    let mean = table.mean(kind, adapter.id()).unwrap_or(0.0);
                    if best.is_none_or(|(_, b)| mean > b) {
                        best = Some((adapter.id(), mean));
                    }
                }
                let (id, score) = best.expect("capable is non-empty");
                (id.to_string(), score)
            }
            Router::Learned { model, embedder } => {
                model.check_labels(&registry.ids())?;
                let probs = model.predict(subquery_text, kind, embedder.as_ref())?;
                let mut best: Option<(&str, f64)> = None;
                for adapter in &capable {
                    let idx = model
                        .label_index(adapter.id())
                        .ok_or_else(|| Error::Router(format!("adapter {} missing from model labels", adapter.id())))?;
                    let p = probs[idx];
                    if best.is_none_or(|(_, b)| p > b) {
                        best = Some((adapter.id(), p));
                    }
                }
                let (id, score) = best.expect("capable is non-empty");
                (id.to_string(), score)
            }
        };
        Ok(RouteDecision {
            operator_kind: kind,
            subquery_text: subquery_text.to_string(),
            adapter_id,
            score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{SemanticAggregationAdapter, SingleModelAdapter, TableStructuredAdapter};
    use crate::llm::HashEmbedder;
    use std::sync::Arc;

    fn scores(f1: f64, hit: f64, coverage: f64, sem_hit: f64) -> MetricScores {
        MetricScores { f1, hit, coverage, sem_hit }
    }

    #[test]
    fn quality_score_endpoints_and_hand_value() {
        let blend = QualityBlend::default();
        assert_eq!(quality_score(&scores(1.0, 1.0, 1.0, 1.0), &blend).unwrap(), 1.0);
        assert_eq!(quality_score(&scores(0.0, 0.0, 0.0, 0.0), &blend).unwrap(), 0.0);
        // blend (f1 .35, hit .15, cov .15, sem .35) on (1, 0, 0, 1) = 0.70.
        let q = quality_score(&scores(1.0, 0.0, 0.0, 1.0), &blend).unwrap();
        assert!((q - 0.70).abs() < 1e-12);
    }

    #[test]
    fn quality_blend_must_sum_to_one() {
        let blend = QualityBlend { sem_hit: 0.5, f1: 0.5, hit: 0.5, coverage: 0.5 };
        assert!(quality_score(&scores(1.0, 1.0, 1.0, 1.0), &blend).is_err());
    }

    #[test]
    fn sample_weight_matches_hand_evaluations() {
        let cfg = SampleWeightConfig::default();
        // 0.1 + 0.9*1.0 + 0.2*(1.0-0.5) = 1.1, inside [0.1, 1.5].
        let w = sample_weight(1.0, 0.5, &cfg).unwrap();
        assert!((w - 1.1).abs() < 1e-12);
        let w = sample_weight(1.0, 0.0, &cfg).unwrap();
        assert!((w - 1.2).abs() < 1e-12);
        let w = sample_weight(0.0, 0.0, &cfg).unwrap();
        assert!((w - cfg.w_min).abs() < 1e-12);
    }

    #[test]
    fn sample_weight_rejects_bad_inputs() {
        let cfg = SampleWeightConfig::default();
        assert!(sample_weight(0.5, 0.8, &cfg).is_err());
        assert!(sample_weight(1.2, 0.1, &cfg).is_err());
        assert!(sample_weight(0.5, -0.1, &cfg).is_err());
    }

    #[test]
    fn stat_router_argmax_and_tie_break() {
        let mut reg = AdapterRegistry::new();
        reg.register(Arc::new(SemanticAggregationAdapter::default())).unwrap();
        reg.register(Arc::new(SingleModelAdapter::default())).unwrap();
        reg.register(Arc::new(TableStructuredAdapter::default())).unwrap();

        let traces: Vec<ExecutionTrace> = [("sem-agg", 0.6), ("single-model", 0.8), ("table-struct", 0.8)]
            .iter()
            .map(|(adapter, s)| ExecutionTrace {
                query_id: "q".into(),
                subquery_text: "s".into(),
                operator_kind: OperatorKind::Table,
                adapter_id: adapter.to_string(),
                answer: "a".into(),
                scores: scores(*s, *s, *s, *s),
                elapsed: 0.0,
            })
            .collect();
        let table = StatTable::from_traces(&traces, &QualityBlend::default()).unwrap();
        let router = Router::Stat(table);
        // single-model and table-struct tie at 0.8; single-model registered earlier.
        let d = router.route(OperatorKind::Table, "anything", &reg).unwrap();
        assert_eq!(d.adapter_id, "single-model");
        // Sub-query agnostic: a different sub-query routes identically.
        let d2 = router.route(OperatorKind::Table, "something else entirely", &reg).unwrap();
        assert_eq!(d2.adapter_id, d.adapter_id);
    }

    #[test]
    fn stat_router_with_single_capable_adapter_is_forced() {
        let mut reg = AdapterRegistry::new();
        reg.register(Arc::new(TableStructuredAdapter::default())).unwrap();
        let router = Router::Stat(StatTable::default());
        let d = router.route(OperatorKind::Table, "q", &reg).unwrap();
        assert_eq!(d.adapter_id, "table-struct");
        assert!(router.route(OperatorKind::Image, "q", &reg).is_err());
    }

    #[test]
    fn learned_router_masks_incapable_predictions() {
        // Three registered adapters; the model is trained to love
        // table-struct, but for an image operator it must fall to the
        // next-highest capable adapter.
        let mut reg = AdapterRegistry::new();
        reg.register(Arc::new(SemanticAggregationAdapter::default())).unwrap();
        reg.register(Arc::new(SingleModelAdapter::default())).unwrap();
        reg.register(Arc::new(TableStructuredAdapter::default())).unwrap();

        let embedder = HashEmbedder::with_dimension(16);
        let records: Vec<RouterTrainingRecord> = (0..30)
            .map(|i| RouterTrainingRecord {
                subquery_text: format!("count the rows in table {i}"),
                operator_kind: OperatorKind::Table,
                adapter_scores: vec![
                    ("sem-agg".into(), 0.1),
                    ("single-model".into(), 0.55),
                    ("table-struct".into(), 0.9),
                ],
            })
            .collect();
        let cfg = crate::route::mlp::MlpTrainConfig {
            hidden_width: 8,
            epochs: 80,
            ..Default::default()
        };
        let (model, _) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        let router = Router::Learned { model, embedder: Box::new(embedder.clone()) };

        let table_route = router.route(OperatorKind::Table, "count the rows in table 99", &reg).unwrap();
        assert_eq!(table_route.adapter_id, "table-struct");
        let image_route = router.route(OperatorKind::Image, "count the rows in table 99", &reg).unwrap();
        assert_ne!(image_route.adapter_id, "table-struct", "masked out: not image-capable");
    }

    #[test]
    fn learned_router_rejects_label_registry_mismatch() {
        let mut reg = AdapterRegistry::new();
        reg.register(Arc::new(SemanticAggregationAdapter::default())).unwrap();
        reg.register(Arc::new(SingleModelAdapter::default())).unwrap();

        let embedder = HashEmbedder::with_dimension(16);
        let records = vec![
            RouterTrainingRecord {
                subquery_text: "alpha".into(),
                operator_kind: OperatorKind::Text,
                adapter_scores: vec![("sem-agg".into(), 0.9), ("other".into(), 0.1)],
            },
            RouterTrainingRecord {
                subquery_text: "beta".into(),
                operator_kind: OperatorKind::Text,
                adapter_scores: vec![("sem-agg".into(), 0.1), ("other".into(), 0.9)],
            },
        ];
        let cfg = crate::route::mlp::MlpTrainConfig { hidden_width: 4, epochs: 1, ..Default::default() };
        let (model, _) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        let router = Router::Learned { model, embedder: Box::new(embedder) };
        let err = router.route(OperatorKind::Text, "q", &reg).unwrap_err();
        assert!(matches!(err, Error::LabelMismatch(_)));
    }

    #[test]
    fn records_from_traces_groups_by_subquery_and_kind() {
        let t = |sq: &str, adapter: &str, s: f64| ExecutionTrace {
            query_id: "q1".into(),
            subquery_text: sq.into(),
            operator_kind: OperatorKind::Text,
            adapter_id: adapter.into(),
            answer: "a".into(),
            scores: scores(s, s, s, s),
            elapsed: 0.0,
        };
        let traces = vec![t("sq-a", "x", 0.2), t("sq-a", "y", 0.8), t("sq-b", "x", 1.0)];
        let records = records_from_traces(&traces, &QualityBlend::default()).unwrap();
        assert_eq!(records.len(), 2);
        let (best_id, s1) = records[0].best().unwrap();
        assert_eq!(best_id, "y");
        assert!((s1 - 0.8).abs() < 1e-12);
        assert!((records[0].second_score() - 0.2).abs() < 1e-12);
        let (best_id, s1) = records[1].best().unwrap();
        assert_eq!(best_id, "x");
        assert!((s1 - 1.0).abs() < 1e-12);
        assert_eq!(records[1].second_score(), 0.0, "single adapter: S2 defaults to 0");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weight_stays_within_bounds(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let (s1, s2) = if a >= b { (a, b) } else { (b, a) };
                let cfg = SampleWeightConfig::default();
                let w = sample_weight(s1, s2, &cfg).unwrap();
                prop_assert!(w >= cfg.w_min && w <= cfg.w_max);
            }

            #[test]
            fn weight_monotone_in_s1_and_margin(
                a in 0.0f64..=1.0, b in 0.0f64..=1.0, eps in 0.0001f64..0.01
            ) {
                let (s1, s2) = if a >= b { (a, b) } else { (b, a) };
                let cfg = SampleWeightConfig { w_min: f64::MIN, w_max: f64::MAX, ..Default::default() };
                // Unclamped form is non-decreasing in S1 (finite-difference).
                if s1 + eps <= 1.0 {
                    let w0 = sample_weight(s1, s2, &cfg).unwrap();
                    let w1 = sample_weight(s1 + eps, s2, &cfg).unwrap();
                    prop_assert!(w1 >= w0);
                }
                // And non-decreasing in the margin (shrink S2).
                if s2 - eps >= 0.0 {
                    let w0 = sample_weight(s1, s2, &cfg).unwrap();
                    let w1 = sample_weight(s1, s2 - eps, &cfg).unwrap();
                    prop_assert!(w1 >= w0);
                }
            }

            #[test]
            fn quality_is_convex_combination(
                f1 in 0.0f64..=1.0, hit in 0.0f64..=1.0,
                cov in 0.0f64..=1.0, sem in 0.0f64..=1.0,
            ) {
                let q = quality_score(&scores(f1, hit, cov, sem), &QualityBlend::default()).unwrap();
                let lo = f1.min(hit).min(cov).min(sem);
                let hi = f1.max(hit).max(cov).max(sem);
                prop_assert!(q >= lo - 1e-12 && q <= hi + 1e-12);
            }
        }
    }
}
