//! Joint training of adapters and dispatcher on the source domains of
//! a pool. Three losses with strict gradient routing:
//!
//! * dispatch loss: binary cross-entropy between the mixing weights
//!   and each model's true-label likelihood. The likelihood targets
//!   are detached, so this loss updates only the dispatch network.
//! * per-model loss: likelihood-weighted sum of per-model
//!   cross-entropies. The weights are detached, so this loss updates
//!   only the adapters.
//! * ensemble loss: cross-entropy of the mixed prediction, updating
//!   both.
//!
//! The optimizer is Adam; evaluation snapshots switch to a running
//! weight average once it starts. Training stops at max_iters or when
//! validation accuracy stops improving.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{adapt_backward, adapt_logits, model_likelihood};
use crate::ensemble::{
    dispatch, dispatch_backward, mix, model_features, model_features_backward, CombineMode,
    ModelFeatureGrads, Selection,
};
use crate::error::{Result, SedgeError};
use crate::eval::{evaluate, split_dataset, SplitSpec};
use crate::nn::{cross_entropy, cross_entropy_grad, dot, AdamConfig};
use crate::params::{init_params, model_adapter_map, ParamAverage, Params};
use crate::pool::PoolCache;
use crate::rng::named_rng;

/// Mixing weights are clamped to this band inside the dispatch loss
/// only, keeping its logs finite.
const WEIGHT_CLAMP: f64 = 1e-7;

/// Floor for the mixed probability in probability-space combination.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Iteration at which weight averaging begins.
    pub avg_start_iter: usize,
    /// Models kept per sample at evaluation time, clamped to K.
    pub top_k: usize,
    /// Coefficient of the dispatch loss.
    pub lambda_c: f64,
    /// Coefficient of the per-model loss.
    pub lambda_b: f64,
    /// Coefficient of the ensemble loss.
    pub lambda_e: f64,
    /// Width of the learned model embeddings.
    pub model_embed_dim: usize,
    /// Width of the joint matching space.
    pub joint_dim: usize,
    pub adapter_bias: bool,
    pub gate_bias: bool,
    pub combine: CombineMode,
    /// Freeze the dispatcher at an exactly uniform mix and train only
    /// the adapters.
    pub uniform_gate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 1e-3,
            batch_size: 64,
            max_iters: 5000,
            eval_every: 100,
            patience: 10,
            avg_start_iter: 500,
            top_k: 6,
            lambda_c: 1.0,
            lambda_b: 1.0,
            lambda_e: 1.0,
            model_embed_dim: 64,
            joint_dim: 64,
            adapter_bias: true,
            gate_bias: true,
            combine: CombineMode::Logits,
            uniform_gate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SedgeError::invalid_argument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.model_embed_dim == 0 || self.joint_dim == 0 {
            return bad("network widths must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_b", self.lambda_b),
            ("lambda_e", self.lambda_e),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy between mixing weights and detached per-model
/// likelihood targets.
pub fn dispatch_loss(weights: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), targets.len());
    let mut loss = 0.0;
    for (&w, &p) in weights.iter().zip(targets) {
        let w = w.clamp(WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP);
        loss -= p * w.ln() + (1.0 - p) * (1.0 - w).ln();
    }
    loss
}

/// d dispatch_loss / d weights. Zero where the clamp is active.
pub fn dispatch_loss_grad(weights: &[f64], targets: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(targets)
        .map(|(&w, &p)| {
            if w <= WEIGHT_CLAMP || w >= 1.0 - WEIGHT_CLAMP {
                0.0
            } else {
                -p / w + (1.0 - p) / (1.0 - w)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchLosses {
    pub dispatch: f64,
    pub per_model: f64,
    pub ensemble: f64,
}

impl BatchLosses {
    pub fn composite(&self, cfg: &TrainConfig) -> f64 {
        cfg.lambda_c * self.dispatch + cfg.lambda_b * self.per_model + cfg.lambda_e * self.ensemble
    }
}

/// Values detached during a backward pass, frozen so a finite-
/// difference evaluation of the same batch sees the same stop-
/// gradients the analytic pass used.
#[derive(Debug, Clone)]
pub struct FrozenTargets {
    /// Per sample: detached likelihood targets for the dispatch loss.
    pub specialty: Vec<Vec<f64>>,
    /// Per sample: detached mixing weights for the per-model loss.
    pub mix_weights: Vec<Vec<f64>>,
}

fn full_selection(weights: &[f64]) -> Selection {
    Selection {
        ids: (0..weights.len()).collect(),
        weights: weights.to_vec(),
    }
}

fn ensemble_loss(prediction: &[f64], y: usize, mode: CombineMode) -> f64 {
    match mode {
        CombineMode::Logits => cross_entropy(prediction, y),
        CombineMode::Probs => -prediction[y].max(PROB_FLOOR).ln(),
    }
}

/// Forward-and-backward over one batch. Accumulates gradients into
/// `params` (batch-mean scaling) and returns the mean losses together
/// with the detached values. Gradient routing is structural: zero
/// coefficients contribute nothing, exactly.
pub fn batch_backward(
    pool: &PoolCache,
    params: &mut Params,
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<(BatchLosses, FrozenTargets)> {
    if batch.is_empty() {
        return Err(SedgeError::invalid_argument("empty batch".to_string()));
    }
    let n = pool.num_samples();
    if let Some(&i) = batch.iter().find(|&&i| i >= n) {
        return Err(SedgeError::invalid_argument(format!(
            "batch index {i} out of range, pool has {n} samples"
        )));
    }
    let k = pool.manifest.num_models();
    let scale = 1.0 / batch.len() as f64;
    let group_idx = model_adapter_map(&pool.manifest);
    let feats = model_features(&params.net);
    let mut scratch = ModelFeatureGrads::zeros(k, params.net.joint_dim());
    let use_net = cfg.lambda_c != 0.0 || cfg.lambda_e != 0.0;
    let use_adapter = cfg.lambda_b != 0.0 || cfg.lambda_e != 0.0;

    let mut losses = BatchLosses::default();
    let mut frozen = FrozenTargets {
        specialty: Vec::with_capacity(batch.len()),
        mix_weights: Vec::with_capacity(batch.len()),
    };

    for &i in batch {
        let e = pool.embeddings.row(i);
        let y = pool.labels[i] as usize;
        let adapted: Vec<Vec<f64>> = (0..k)
            .map(|ki| adapt_logits(pool.logits[ki].row(i), &params.adapters[group_idx[ki]]))
            .collect();
        let trace = dispatch(e, &params.net, &feats);
        let w = &trace.weights;

        let targets: Vec<f64> = adapted.iter().map(|a| model_likelihood(a, y)).collect();
        let ce_k: Vec<f64> = adapted.iter().map(|a| cross_entropy(a, y)).collect();
        let prediction = mix(&full_selection(w), &adapted, cfg.combine);

        losses.dispatch += scale * dispatch_loss(w, &targets);
        losses.per_model += scale * dot(w, &ce_k);
        losses.ensemble += scale * ensemble_loss(&prediction, y, cfg.combine);

        let mut g_w = vec![0.0; k];
        let mut g_a: Vec<Vec<f64>> = vec![vec![0.0; pool.manifest.num_classes]; k];

        if cfg.lambda_c != 0.0 {
            for (g, d) in g_w.iter_mut().zip(dispatch_loss_grad(w, &targets)) {
                *g += cfg.lambda_c * scale * d;
            }
        }
        if cfg.lambda_b != 0.0 {
            for ki in 0..k {
                let ce_grad = cross_entropy_grad(&adapted[ki], y);
                let c = cfg.lambda_b * scale * w[ki];
                for (g, d) in g_a[ki].iter_mut().zip(ce_grad) {
                    *g += c * d;
                }
            }
        }
        if cfg.lambda_e != 0.0 {
            match cfg.combine {
                CombineMode::Logits => {
                    let g_pred = cross_entropy_grad(&prediction, y);
                    for ki in 0..k {
                        g_w[ki] += cfg.lambda_e * scale * dot(&g_pred, &adapted[ki]);
                        let c = cfg.lambda_e * scale * w[ki];
                        for (g, &d) in g_a[ki].iter_mut().zip(&g_pred) {
                            *g += c * d;
                        }
                    }
                }
                CombineMode::Probs => {
                    let py = prediction[y].max(PROB_FLOOR);
                    for ki in 0..k {
                        let probs = crate::nn::softmax(&adapted[ki]);
                        g_w[ki] += cfg.lambda_e * scale * (-probs[y] / py);
                        // Only the true-label entry of the mixed
                        // probability carries loss gradient; push it
                        // through this model's softmax.
                        let gy = -cfg.lambda_e * scale * w[ki] / py;
                        let inner = gy * probs[y];
                        for c in 0..probs.len() {
                            let direct = if c == y { gy } else { 0.0 };
                            g_a[ki][c] += probs[c] * (direct - inner);
                        }
                    }
                }
            }
        }

        if use_net {
            dispatch_backward(&mut params.net, e, &trace, &feats, &g_w, &mut scratch);
        }
        if use_adapter {
            for ki in 0..k {
                adapt_backward(
                    &mut params.adapters[group_idx[ki]],
                    pool.logits[ki].row(i),
                    &g_a[ki],
                );
            }
        }

        frozen.specialty.push(targets);
        frozen.mix_weights.push(w.clone());
    }

    if use_net {
        model_features_backward(&mut params.net, &scratch);
    }
    Ok((losses, frozen))
}

/// Pure forward evaluation of the batch losses with the detachments
/// frozen at a previous backward's values. With the same batch and
/// parameters this reproduces [`batch_backward`]'s losses; perturbing
/// parameters moves only the non-detached paths, matching what the
/// analytic gradients differentiate.
pub fn batch_losses(
    pool: &PoolCache,
    params: &Params,
    batch: &[usize],
    cfg: &TrainConfig,
    frozen: &FrozenTargets,
) -> Result<BatchLosses> {
    if batch.len() != frozen.specialty.len() || batch.len() != frozen.mix_weights.len() {
        return Err(SedgeError::invalid_argument(
            "frozen targets do not match batch length".to_string(),
        ));
    }
    let k = pool.manifest.num_models();
    let scale = 1.0 / batch.len() as f64;
    let group_idx = model_adapter_map(&pool.manifest);
    let feats = model_features(&params.net);
    let mut losses = BatchLosses::default();
    for (j, &i) in batch.iter().enumerate() {
        let e = pool.embeddings.row(i);
        let y = pool.labels[i] as usize;
        let adapted: Vec<Vec<f64>> = (0..k)
            .map(|ki| adapt_logits(pool.logits[ki].row(i), &params.adapters[group_idx[ki]]))
            .collect();
        let trace = dispatch(e, &params.net, &feats);
        let ce_k: Vec<f64> = adapted.iter().map(|a| cross_entropy(a, y)).collect();
        let prediction = mix(&full_selection(&trace.weights), &adapted, cfg.combine);
        losses.dispatch += scale * dispatch_loss(&trace.weights, &frozen.specialty[j]);
        losses.per_model += scale * dot(&frozen.mix_weights[j], &ce_k);
        losses.ensemble += scale * ensemble_loss(&prediction, y, cfg.combine);
    }
    Ok(losses)
}

/// Uniform draw with replacement from the training indices.
pub fn sample_batch(
    rng: &mut rand_chacha::ChaCha8Rng,
    train_indices: &[usize],
    batch_size: usize,
) -> Vec<usize> {
    use rand::Rng;
    (0..batch_size)
        .map(|_| train_indices[rng.random_range(0..train_indices.len())])
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub l_c: f64,
    pub l_b: f64,
    pub l_e: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: TrainConfig,
    pub target_domain: usize,
    /// Parameters of the best validation snapshot.
    pub best_params: Params,
    /// Live parameters at the end of training.
    pub final_params: Params,
    /// Whether snapshots came from the running weight average.
    pub averaged: bool,
    pub best_iter: usize,
    pub stopped_early: bool,
    pub history: Vec<HistoryRow>,
    pub metrics: SplitMetrics,
    pub split: SplitSpec,
}

/// Trains on all domains except `target_domain` and reports
/// leave-one-domain-out metrics of the best validation snapshot.
pub fn train(pool: &PoolCache, target_domain: usize, cfg: &TrainConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let split = split_dataset(pool, target_domain, cfg.seed)?;
    if split.val.is_empty() {
        return Err(SedgeError::invalid_argument(
            "validation split is empty; every source domain has fewer than 5 samples".to_string(),
        ));
    }

    let mut params = init_params(
        &pool.manifest,
        cfg.model_embed_dim,
        cfg.joint_dim,
        cfg.seed,
        cfg.uniform_gate,
    );
    params.train_adapter_bias = cfg.adapter_bias;
    params.train_gate_bias = cfg.gate_bias;
    params.train_net = !cfg.uniform_gate;

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = named_rng(cfg.seed, "train/batch");
    let mut average: Option<ParamAverage> = None;
    let mut best: Option<(f64, usize, Params)> = None;
    let mut history = Vec::new();
    let mut stall = 0usize;
    let mut stopped_early = false;

    for iter in 1..=cfg.max_iters {
        let batch = sample_batch(&mut rng, &split.train, cfg.batch_size);
        let (losses, _) = batch_backward(pool, &mut params, &batch, cfg)?;
        params.adam_step(&adam);

        if iter >= cfg.avg_start_iter {
            match &mut average {
                None => average = Some(ParamAverage::new(&params)),
                Some(a) => a.update(&params),
            }
        }

        if iter % cfg.eval_every == 0 || iter == cfg.max_iters {
            let eval_params = average.as_ref().map(|a| &a.mean).unwrap_or(&params);
            let val_acc = evaluate(pool, eval_params, &split.val, cfg.top_k, cfg.combine)?;
            history.push(HistoryRow {
                iter,
                l_c: losses.dispatch,
                l_b: losses.per_model,
                l_e: losses.ensemble,
                val_acc,
            });
            let improved = best.as_ref().is_none_or(|(b, _, _)| val_acc > *b);
            if improved {
                best = Some((val_acc, iter, eval_params.clone()));
                stall = 0;
            } else {
                stall += 1;
                if stall >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let averaged = average.is_some();
    let (_, best_iter, best_params) = best.unwrap_or((f64::NEG_INFINITY, 0, params.clone()));
    let metrics = SplitMetrics {
        train_acc: evaluate(pool, &best_params, &split.train, cfg.top_k, cfg.combine)?,
        val_acc: evaluate(pool, &best_params, &split.val, cfg.top_k, cfg.combine)?,
        test_acc: evaluate(pool, &best_params, &split.test, cfg.top_k, cfg.combine)?,
    };

    Ok(RunArtifacts {
        config: cfg.clone(),
        target_domain,
        best_params,
        final_params: params,
        averaged,
        best_iter,
        stopped_early,
        history,
        metrics,
        split,
    })
}

/// Contents of `run.json`: the exact configuration plus outcome
/// metadata. No timestamps, so identical runs serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub pool_name: String,
    pub target_domain: String,
    pub target_domain_id: usize,
    pub best_iter: usize,
    pub stopped_early: bool,
    pub averaged: bool,
    pub metrics: SplitMetrics,
    pub config: TrainConfig,
}

/// Persists a run: best-snapshot parameter tensors, `history.csv`,
/// and `run.json`.
pub fn save_run(artifacts: &RunArtifacts, pool: &PoolCache, dir: &Path) -> Result<()> {
    artifacts.best_params.save(dir)?;

    let mut csv = String::from("iter,l_c,l_b,l_e,val_acc\n");
    for row in &artifacts.history {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.iter, row.l_c, row.l_b, row.l_e, row.val_acc
        ));
    }
    let csv_path = dir.join("history.csv");
    std::fs::write(&csv_path, csv).map_err(|e| SedgeError::io(&csv_path, e))?;

    let summary = RunSummary {
        pool_name: pool.manifest.pool_name.clone(),
        target_domain: pool.manifest.domains[artifacts.target_domain].clone(),
        target_domain_id: artifacts.target_domain,
        best_iter: artifacts.best_iter,
        stopped_early: artifacts.stopped_early,
        averaged: artifacts.averaged,
        metrics: artifacts.metrics,
        config: artifacts.config.clone(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    let json_path = dir.join("run.json");
    std::fs::write(&json_path, text).map_err(|e| SedgeError::io(&json_path, e))
}

/// Loads a persisted run's parameters and summary.
pub fn load_run(dir: &Path, pool: &PoolCache) -> Result<(Params, RunSummary)> {
    let json_path = dir.join("run.json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| SedgeError::io(&json_path, e))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|e| SedgeError::Json {
        path: json_path,
        source: e,
    })?;
    let params = Params::load(dir, &pool.manifest)?;
    Ok((params, summary))
}
