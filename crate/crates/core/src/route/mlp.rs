//! Learned router: frozen encoder features plus a small MLP classifier
//! over adapter labels. Input is the sub-query embedding concatenated with
//! a 3-dim one-hot of the operator kind; hidden layers use tanh, the
//! output is a softmax over labels. Training minimizes the
//! confidence-weighted cross-entropy
//! `L = (1/sum w_q) * sum_q w_q * (-log p(k*_q | q))`
//! by plain full-batch gradient descent with a fixed step, deterministic
//! given the seed.

use crate::error::{Error, Result};
use crate::llm::EmbedBackend;
use crate::model::OperatorKind;
use crate::route::{RouterTrainingRecord, SampleWeightConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

const MODEL_FILE_VERSION: u32 = 1;

/// One dense layer, row-major: `weights[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weights: self.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Serialized learned-router model: encoder identity, adapter label list
/// (the classification space), and the MLP parameters. Adding or removing
/// an adapter changes only the label list and needs an MLP retrain; a
/// label/registry mismatch at routing time is an explicit error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRouterModel {
    pub version: u32,
    pub encoder_provider: String,
    pub encoder_dimension: usize,
    pub labels: Vec<String>,
    pub layers: Vec<DenseLayer>,
}

/// Prepared training inputs: fixed features, gold label indices, and
/// per-record sample weights.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub features: Vec<Vec<f64>>,
    pub label_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub records: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub weight: SampleWeightConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            weight: SampleWeightConfig::default(),
            hidden_width: 64,
            hidden_layers: 1,
            learning_rate: 0.5,
            epochs: 200,
            seed: 42,
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl MlpRouterModel {
    pub fn label_index(&self, adapter_id: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == adapter_id)
    }

    /// The label list and the registry must describe the same adapter set.
    pub fn check_labels(&self, registry_ids: &[String]) -> Result<()> {
        let model: BTreeSet<&str> = self.labels.iter().map(String::as_str).collect();
        let registry: BTreeSet<&str> = registry_ids.iter().map(String::as_str).collect();
        if model != registry {
            let missing: Vec<&&str> = registry.difference(&model).collect();
            let extra: Vec<&&str> = model.difference(&registry).collect();
            return Err(Error::LabelMismatch(format!(
                "registry-only: {missing:?}, model-only: {extra:?}; retrain the router"
            )));
        }
        Ok(())
    }

    /// Feature vector: encoder embedding of the sub-query text followed by
    /// a one-hot of the operator kind.
    pub fn features(
        &self,
        subquery_text: &str,
        kind: OperatorKind,
        embedder: &dyn EmbedBackend,
    ) -> Result<Vec<f64>> {
        if embedder.dimension() != self.encoder_dimension {
            return Err(Error::Router(format!(
                "embedder dimension {} != model encoder dimension {}",
                embedder.dimension(),
                self.encoder_dimension
            )));
        }
        let embedding = embedder.embed(subquery_text)?;
        let mut features = embedding.0;
        let mut one_hot = [0.0; 3];
        one_hot[kind.index()] = 1.0;
        features.extend_from_slice(&one_hot);
        Ok(features)
    }

    /// Per-layer activations for `input`; the last entry is the softmax
    /// output over labels.
    fn forward_full(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            let a = if i + 1 == self.layers.len() {
                softmax(&z)
            } else {
                z.into_iter().map(f64::tanh).collect()
            };
            activations.push(a.clone());
            current = a;
        }
        activations
    }

    /// Probability distribution over labels for one input feature vector.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_full(input).pop().expect("model has layers")
    }

    /// Probability distribution over labels for a sub-query.
    pub fn predict(
        &self,
        subquery_text: &str,
        kind: OperatorKind,
        embedder: &dyn EmbedBackend,
    ) -> Result<Vec<f64>> {
        let features = self.features(subquery_text, kind, embedder)?;
        Ok(self.forward(&features))
    }

    /// Weighted cross-entropy of the batch under the current parameters.
    pub fn weighted_ce_loss(&self, batch: &TrainingBatch) -> f64 {
        let total_weight: f64 = batch.weights.iter().sum();
        let mut loss = 0.0;
        for ((x, &k), &w) in batch.features.iter().zip(&batch.label_indices).zip(&batch.weights) {
            let probs = self.forward(x);
            loss += w * -(probs[k].max(1e-300)).ln();
        }
        loss / total_weight
    }

    /// Analytic gradient of [`Self::weighted_ce_loss`] with respect to all
    /// parameters, in layer order.
    pub fn weighted_ce_gradient(&self, batch: &TrainingBatch) -> Vec<DenseLayer> {
        let total_weight: f64 = batch.weights.iter().sum();
        let mut grads: Vec<DenseLayer> = self.layers.iter().map(DenseLayer::zeros_like).collect();
        for ((x, &k), &w) in batch.features.iter().zip(&batch.label_indices).zip(&batch.weights) {
            let activations = self.forward_full(x);
            let probs = activations.last().expect("model has layers");
            // d(loss_q)/d(logit) = p - onehot(k), scaled by w_q / sum(w).
            let scale = w / total_weight;
            let mut delta: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(i, p)| scale * (p - if i == k { 1.0 } else { 0.0 }))
                .collect();
            for layer_idx in (0..self.layers.len()).rev() {
                let input: &[f64] = if layer_idx == 0 { x } else { &activations[layer_idx - 1] };
                let grad = &mut grads[layer_idx];
                for (o, &d) in delta.iter().enumerate() {
                    grad.bias[o] += d;
                    for (i, &xi) in input.iter().enumerate() {
                        grad.weights[o][i] += d * xi;
                    }
                }
                if layer_idx > 0 {
                    // Propagate through the tanh of the previous layer.
                    let layer = &self.layers[layer_idx];
                    let prev_act = &activations[layer_idx - 1];
                    let mut next_delta = vec![0.0; prev_act.len()];
                    for (i, nd) in next_delta.iter_mut().enumerate() {
                        let mut sum = 0.0;
                        for (o, &d) in delta.iter().enumerate() {
                            sum += d * layer.weights[o][i];
                        }
                        *nd = sum * (1.0 - prev_act[i] * prev_act[i]);
                    }
                    delta = next_delta;
                }
            }
        }
        grads
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read router model {}: {e}", path.display())))?;
        let model: MlpRouterModel = serde_json::from_str(&raw)?;
        if model.version != MODEL_FILE_VERSION {
            return Err(Error::Config(format!(
                "router model version {} unsupported (expected {MODEL_FILE_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

fn init_model(
    encoder_provider: &str,
    input_dim: usize,
    labels: Vec<String>,
    cfg: &MlpTrainConfig,
) -> MlpRouterModel {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dims = vec![input_dim];
    for _ in 0..cfg.hidden_layers {
        dims.push(cfg.hidden_width);
    }
    dims.push(labels.len());
    let layers = dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DenseLayer {
                weights: (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.random_range(-scale..scale)).collect())
                    .collect(),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    MlpRouterModel {
        version: MODEL_FILE_VERSION,
        encoder_provider: encoder_provider.to_string(),
        encoder_dimension: input_dim - 3,
        labels,
        layers,
    }
}

/// Build the fixed training batch: embed every sub-query once, derive the
/// gold label `k* = argmax_k S_q^k` and the sample weight per record.
pub fn prepare_batch(
    records: &[RouterTrainingRecord],
    labels: &[String],
    cfg: &MlpTrainConfig,
    embedder: &dyn EmbedBackend,
) -> Result<TrainingBatch> {
    let mut features = Vec::with_capacity(records.len());
    let mut label_indices = Vec::with_capacity(records.len());
    let mut weights = Vec::with_capacity(records.len());
    for record in records {
        let (best_id, _) = record.best()?;
        let label = labels
            .iter()
            .position(|l| l == best_id)
            .ok_or_else(|| Error::Router(format!("label {best_id} missing from label list")))?;
        let embedding = embedder.embed(&record.subquery_text)?;
        let mut x = embedding.0;
        let mut one_hot = [0.0; 3];
        one_hot[record.operator_kind.index()] = 1.0;
        x.extend_from_slice(&one_hot);
        features.push(x);
        label_indices.push(label);
        weights.push(record.weight(&cfg.weight)?);
    }
    Ok(TrainingBatch { features, label_indices, weights })
}

/// Offline trainer. The label space is the sorted set of adapter ids seen
/// in the records; only the MLP parameters move, the encoder stays frozen.
pub fn train_mlrouter(
    records: &[RouterTrainingRecord],
    cfg: &MlpTrainConfig,
    embedder: &dyn EmbedBackend,
) -> Result<(MlpRouterModel, TrainReport)> {
    if records.is_empty() {
        return Err(Error::Router("no training records".into()));
    }
    let labels: Vec<String> = records
        .iter()
        .flat_map(|r| r.adapter_scores.iter().map(|(id, _)| id.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        log::warn!("router training data has a single adapter label; routing will be trivial");
    }
    let mut warnings = Vec::new();
    if labels.len() < 2 {
        warnings.push("single adapter label: classifier is degenerate".to_string());
    }
    let distinct_gold: BTreeSet<usize> = {
        let batch_labels: Result<Vec<usize>> = records
            .iter()
            .map(|r| {
                let (best, _) = r.best()?;
                Ok(labels.iter().position(|l| l == best).expect("label set covers records"))
            })
            .collect();
        batch_labels?.into_iter().collect()
    };
    if labels.len() >= 2 && distinct_gold.len() < 2 {
        warnings.push("all records share one gold adapter: classifier degenerates to a constant".to_string());
        log::warn!("router training labels are constant across records");
    }

    let input_dim = embedder.dimension() + 3;
    let mut model = init_model(embedder.provider_id(), input_dim, labels.clone(), cfg);
    let batch = prepare_batch(records, &labels, cfg, embedder)?;

    let initial_loss = model.weighted_ce_loss(&batch);
    for _ in 0..cfg.epochs {
        let grads = model.weighted_ce_gradient(&batch);
        for (layer, grad) in model.layers.iter_mut().zip(&grads) {
            for (row, grow) in layer.weights.iter_mut().zip(&grad.weights) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= cfg.learning_rate * g;
                }
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
        }
    }
    let final_loss = model.weighted_ce_loss(&batch);
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            epochs: cfg.epochs,
            records: records.len(),
            warnings,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::HashEmbedder;
    use crate::model::OperatorKind;

    fn record(text: &str, kind: OperatorKind, scores: &[(&str, f64)]) -> RouterTrainingRecord {
        RouterTrainingRecord {
            subquery_text: text.into(),
            operator_kind: kind,
            adapter_scores: scores.iter().map(|(a, s)| (a.to_string(), *s)).collect(),
        }
    }

    fn five_record_fixture() -> Vec<RouterTrainingRecord> {
        vec![
            record("sum the revenue column", OperatorKind::Table, &[("alpha", 0.9), ("beta", 0.3)]),
            record("what color is the flag", OperatorKind::Image, &[("alpha", 0.2), ("beta", 0.8)]),
            record("when did the war end", OperatorKind::Text, &[("alpha", 0.7), ("beta", 0.6)]),
            record("average the scores per year", OperatorKind::Table, &[("alpha", 1.0), ("beta", 0.1)]),
            record("describe the chart trend", OperatorKind::Image, &[("alpha", 0.4), ("beta", 0.9)]),
        ]
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let embedder = HashEmbedder::with_dimension(16);
        let cfg = MlpTrainConfig { hidden_width: 8, epochs: 3, ..Default::default() };
        let (model, _) = train_mlrouter(&five_record_fixture(), &cfg, &embedder).unwrap();
        for text in ["alpha", "beta gamma", "what color is the flag of mars"] {
            let probs = model.predict(text, OperatorKind::Image, &embedder).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum={sum}");
            assert_eq!(probs.len(), model.labels.len());
        }
    }

    #[test]
    fn analytic_gradient_matches_central_finite_differences() {
        let embedder = HashEmbedder::with_dimension(8);
        let cfg = MlpTrainConfig { hidden_width: 6, epochs: 0, ..Default::default() };
        let records = five_record_fixture();
        let (mut model, _) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        let labels = model.labels.clone();
        let batch = prepare_batch(&records, &labels, &cfg, &embedder).unwrap();
        let grads = model.weighted_ce_gradient(&batch);

        let h = 1e-5;
        let mut checked = 0usize;
        for layer_idx in 0..model.layers.len() {
            let rows = model.layers[layer_idx].weights.len();
            for o in 0..rows {
                let cols = model.layers[layer_idx].weights[o].len();
                for i in 0..cols {
                    let orig = model.layers[layer_idx].weights[o][i];
                    model.layers[layer_idx].weights[o][i] = orig + h;
                    let up = model.weighted_ce_loss(&batch);
                    model.layers[layer_idx].weights[o][i] = orig - h;
                    let down = model.weighted_ce_loss(&batch);
                    model.layers[layer_idx].weights[o][i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads[layer_idx].weights[o][i];
                    let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-4,
                        "layer {layer_idx} w[{o}][{i}]: numeric={numeric}, analytic={analytic}"
                    );
                    checked += 1;
                }
                let orig = model.layers[layer_idx].bias[o];
                model.layers[layer_idx].bias[o] = orig + h;
                let up = model.weighted_ce_loss(&batch);
                model.layers[layer_idx].bias[o] = orig - h;
                let down = model.weighted_ce_loss(&batch);
                model.layers[layer_idx].bias[o] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[layer_idx].bias[o];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "layer {layer_idx} b[{o}]: numeric={numeric}, analytic={analytic}"
                );
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn uniform_weights_reduce_to_plain_cross_entropy() {
        let embedder = HashEmbedder::with_dimension(8);
        let cfg = MlpTrainConfig { hidden_width: 6, epochs: 0, ..Default::default() };
        let records: Vec<RouterTrainingRecord> = (0..20)
            .map(|i| {
                let kind = OperatorKind::ALL[i % 3];
                if i % 2 == 0 {
                    record(&format!("even query {i}"), kind, &[("alpha", 0.9), ("beta", 0.2)])
                } else {
                    record(&format!("odd query {i}"), kind, &[("alpha", 0.2), ("beta", 0.9)])
                }
            })
            .collect();
        let (model, _) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        let labels = model.labels.clone();
        let mut batch = prepare_batch(&records, &labels, &cfg, &embedder).unwrap();
        for w in &mut batch.weights {
            *w = 0.7; // any constant
        }
        let weighted = model.weighted_ce_loss(&batch);
        // Independent reference: plain mean of -log p(k*).
        let mut reference = 0.0;
        for (x, &k) in batch.features.iter().zip(&batch.label_indices) {
            let probs = model.forward(x);
            reference += -probs[k].ln();
        }
        reference /= batch.features.len() as f64;
        assert!((weighted - reference).abs() <= 1e-9, "weighted={weighted}, plain={reference}");
    }

    #[test]
    fn zero_epochs_returns_initialization_with_unchanged_loss() {
        let embedder = HashEmbedder::with_dimension(8);
        let records = five_record_fixture();
        let cfg0 = MlpTrainConfig { hidden_width: 6, epochs: 0, ..Default::default() };
        let (m0, report) = train_mlrouter(&records, &cfg0, &embedder).unwrap();
        assert_eq!(report.initial_loss, report.final_loss);
        // Same seed, some epochs: the initialization must match m0.
        let cfg5 = MlpTrainConfig { hidden_width: 6, epochs: 5, ..Default::default() };
        let (m5, report5) = train_mlrouter(&records, &cfg5, &embedder).unwrap();
        assert_eq!(report5.initial_loss, report.initial_loss);
        assert!(report5.final_loss <= report5.initial_loss);
        assert_ne!(m0.layers, m5.layers);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let embedder = HashEmbedder::with_dimension(8);
        let records = five_record_fixture();
        let cfg = MlpTrainConfig { hidden_width: 6, epochs: 10, ..Default::default() };
        let (a, _) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        let (b, _) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        assert_eq!(a, b);
        let bytes_a = serde_json::to_vec(&a).unwrap();
        let bytes_b = serde_json::to_vec(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn degenerate_single_label_trains_with_warning() {
        let embedder = HashEmbedder::with_dimension(8);
        let records = vec![
            record("only one", OperatorKind::Text, &[("solo", 0.9)]),
            record("still one", OperatorKind::Text, &[("solo", 0.8)]),
        ];
        let cfg = MlpTrainConfig { hidden_width: 4, epochs: 2, ..Default::default() };
        let (model, report) = train_mlrouter(&records, &cfg, &embedder).unwrap();
        assert_eq!(model.labels, vec!["solo".to_string()]);
        assert!(!report.warnings.is_empty());
    }

    #[test]
    fn model_file_roundtrip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("router.json");
        let embedder = HashEmbedder::with_dimension(8);
        let cfg = MlpTrainConfig { hidden_width: 4, epochs: 1, ..Default::default() };
        let (model, _) = train_mlrouter(&five_record_fixture(), &cfg, &embedder).unwrap();
        model.save(&path).unwrap();
        let loaded = MlpRouterModel::load(&path).unwrap();
        assert_eq!(model, loaded);

        let mut tampered: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        tampered["version"] = serde_json::json!(99);
        std::fs::write(&path, tampered.to_string()).unwrap();
        assert!(MlpRouterModel::load(&path).is_err());
    }
}
