//! The dispatch network. For a query embedding e it scores every model
//! in the pool and turns the scores into mixing weights:
//!
//! ```text
//! c   = relu(e W_q)                sample feature, length d_v
//! F_k = relu(m_k W_f)              model feature, row k of F
//! s_k = c . F_k                    matching score per model
//! t   = s G + g                    score mixer, K x K
//! u_k = softplus(t_k)
//! w   = softmax(u)                 mixing weights, sum to 1
//! ```
//!
//! where m_k is a learned per-model embedding. Prediction mixes the
//! adapted model outputs with w, optionally keeping only the top-k
//! models per sample, whose weights are renormalized by a softmax
//! restricted to the selected pre-softmax values. At k = K the
//! restricted softmax is the identical computation, so selection is
//! bit-exact against the full path.
//!
//! All backward passes here are hand-derived; they are validated
//! against central differences in the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SedgeError};
use crate::nn::{dot, relu, sigmoid, softmax, softplus, ParamBlock, ParamVector};
use crate::rng::named_rng;
use crate::tensor::Tensor;
use rand::Rng;

/// How adapted model outputs are mixed into the ensemble prediction:
/// in logit space (default) or after per-model softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Logits,
    Probs,
}

/// Trainable dispatcher state. Block names double as file stems when a
/// run is persisted.
#[derive(Debug, Clone)]
pub struct EnsembleNet {
    /// K x d_m learned model embeddings.
    pub model_embed: ParamBlock,
    /// d_q x d_v projection of the query embedding.
    pub sample_proj: ParamBlock,
    /// d_m x d_v projection of the model embeddings.
    pub model_proj: ParamBlock,
    /// K x K score mixer.
    pub gate_weight: ParamBlock,
    /// K score mixer bias.
    pub gate_bias: ParamBlock,
}

impl EnsembleNet {
    pub fn num_models(&self) -> usize {
        self.model_embed.value.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.sample_proj.value.rows()
    }

    pub fn joint_dim(&self) -> usize {
        self.sample_proj.value.cols()
    }
}

/// Uniform init with per-matrix fan scale sqrt(6 / (rows + cols)),
/// gate bias zero. `zero_gate` additionally zeroes the score mixer so
/// the initial dispatch is exactly uniform.
pub fn init_network(
    num_models: usize,
    d_q: usize,
    d_m: usize,
    d_v: usize,
    seed: u64,
    zero_gate: bool,
) -> EnsembleNet {
    let init = |name: &str, rows: usize, cols: usize| {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut rng = named_rng(seed, &format!("init/net/{name}"));
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        ParamBlock::new(name, Tensor::new(vec![rows, cols], data).expect("init shape"))
    };
    let gate_weight = if zero_gate {
        ParamBlock::new("ens_Wmlp", Tensor::zeros(&[num_models, num_models]))
    } else {
        init("ens_Wmlp", num_models, num_models)
    };
    EnsembleNet {
        model_embed: init("ens_Em", num_models, d_m),
        sample_proj: init("ens_Wi", d_q, d_v),
        model_proj: init("ens_Wm", d_m, d_v),
        gate_weight,
        gate_bias: ParamBlock::new("ens_bmlp", Tensor::zeros(&[num_models])),
    }
}

/// Model-side features, shared by every sample of a batch. `pre` keeps
/// the pre-relu values for the backward pass.
#[derive(Debug, Clone)]
pub struct ModelFeatures {
    pub pre: Tensor,
    pub act: Tensor,
}

pub fn model_features(net: &EnsembleNet) -> ModelFeatures {
    let k = net.num_models();
    let d_m = net.model_embed.value.cols();
    let d_v = net.joint_dim();
    let mut pre = Tensor::zeros(&[k, d_v]);
    for ki in 0..k {
        let embed = net.model_embed.value.row(ki);
        let row = pre.row_mut(ki);
        for (m, &em) in embed.iter().enumerate().take(d_m) {
            let proj = net.model_proj.value.row(m);
            for (p, &pv) in row.iter_mut().zip(proj) {
                *p += em * pv;
            }
        }
    }
    let act = Tensor::new(pre.dims().to_vec(), relu(pre.data())).expect("relu keeps shape");
    ModelFeatures { pre, act }
}

/// Every intermediate of one sample's dispatch, kept for backward.
#[derive(Debug, Clone)]
pub struct DispatchTrace {
    pub sample_pre: Vec<f64>,
    pub sample_act: Vec<f64>,
    pub scores: Vec<f64>,
    pub gate_pre: Vec<f64>,
    pub gate_act: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Forward dispatch of one sample. `feats` must come from
/// [`model_features`] on the same network state.
pub fn dispatch(embedding: &[f64], net: &EnsembleNet, feats: &ModelFeatures) -> DispatchTrace {
    debug_assert_eq!(embedding.len(), net.embed_dim());
    let k = net.num_models();
    let d_v = net.joint_dim();

    let mut sample_pre = vec![0.0; d_v];
    for (q, &e) in embedding.iter().enumerate() {
        let proj = net.sample_proj.value.row(q);
        for (p, &pv) in sample_pre.iter_mut().zip(proj) {
            *p += e * pv;
        }
    }
    let sample_act = relu(&sample_pre);

    let scores: Vec<f64> = (0..k).map(|ki| dot(&sample_act, feats.act.row(ki))).collect();

    let mut gate_pre = net.gate_bias.value.data().to_vec();
    for (ki, &s) in scores.iter().enumerate() {
        let row = net.gate_weight.value.row(ki);
        for (t, &gw) in gate_pre.iter_mut().zip(row) {
            *t += s * gw;
        }
    }
    let gate_act: Vec<f64> = gate_pre.iter().map(|&t| softplus(t)).collect();
    let weights = softmax(&gate_act);

    DispatchTrace {
        sample_pre,
        sample_act,
        scores,
        gate_pre,
        gate_act,
        weights,
    }
}

/// Matching scores of one sample against every model, recomputing the
/// model features. Convenience wrapper over [`dispatch`] internals.
pub fn matching_scores(embedding: &[f64], net: &EnsembleNet) -> Result<Vec<f64>> {
    if embedding.len() != net.embed_dim() {
        return Err(SedgeError::invalid_argument(format!(
            "embedding length {} does not match network input width {}",
            embedding.len(),
            net.embed_dim()
        )));
    }
    let feats = model_features(net);
    Ok(dispatch(embedding, net, &feats).scores)
}

/// Mixing weights from matching scores alone (score mixer, softplus,
/// softmax).
pub fn ensemble_weights(scores: &[f64], net: &EnsembleNet) -> Result<Vec<f64>> {
    let k = net.num_models();
    if scores.len() != k {
        return Err(SedgeError::invalid_argument(format!(
            "expected {k} scores, got {}",
            scores.len()
        )));
    }
    let mut gate_pre = net.gate_bias.value.data().to_vec();
    for (ki, &s) in scores.iter().enumerate() {
        let row = net.gate_weight.value.row(ki);
        for (t, &gw) in gate_pre.iter_mut().zip(row) {
            *t += s * gw;
        }
    }
    let gate_act: Vec<f64> = gate_pre.iter().map(|&t| softplus(t)).collect();
    Ok(softmax(&gate_act))
}

/// Models kept for one sample and their renormalized weights, ids
/// ascending.
#[derive(Debug, Clone)]
pub struct Selection {
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Keeps the k models with the largest full weights (ties prefer the
/// lower id) and renormalizes with a softmax restricted to their
/// pre-softmax values. k is clamped to the model count; k = 0 is an
/// error.
pub fn top_k_selection(trace: &DispatchTrace, k: usize) -> Result<Selection> {
    let total = trace.weights.len();
    if k == 0 {
        return Err(SedgeError::invalid_argument(
            "top-k selection needs k >= 1".to_string(),
        ));
    }
    let k = k.min(total);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        trace.weights[b]
            .total_cmp(&trace.weights[a])
            .then(a.cmp(&b))
    });
    let mut ids: Vec<usize> = order[..k].to_vec();
    ids.sort_unstable();
    let gathered: Vec<f64> = ids.iter().map(|&i| trace.gate_act[i]).collect();
    let weights = softmax(&gathered);
    Ok(Selection { ids, weights })
}

/// One sample's full dispatch outcome.
#[derive(Debug, Clone)]
pub struct DispatchOutcome {
    pub scores: Vec<f64>,
    /// Full softmax weights over all K models.
    pub full_weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub selected_weights: Vec<f64>,
    /// Mixed output, length num_classes. Logit-space or probability-
    /// space depending on the combine mode.
    pub prediction: Vec<f64>,
}

/// Dispatches one sample and mixes its adapted per-model outputs.
/// `adapted` holds one task-space logit vector per model, id order.
pub fn predict(
    embedding: &[f64],
    adapted: &[Vec<f64>],
    net: &EnsembleNet,
    feats: &ModelFeatures,
    k: usize,
    mode: CombineMode,
) -> Result<DispatchOutcome> {
    let models = net.num_models();
    if adapted.len() != models {
        return Err(SedgeError::invalid_argument(format!(
            "expected adapted outputs for {models} models, got {}",
            adapted.len()
        )));
    }
    if embedding.len() != net.embed_dim() {
        return Err(SedgeError::invalid_argument(format!(
            "embedding length {} does not match network input width {}",
            embedding.len(),
            net.embed_dim()
        )));
    }
    let classes = adapted[0].len();
    if adapted.iter().any(|a| a.len() != classes) {
        return Err(SedgeError::invalid_argument(
            "adapted outputs disagree on class count".to_string(),
        ));
    }
    let trace = dispatch(embedding, net, feats);
    let selection = top_k_selection(&trace, k)?;
    let prediction = mix(&selection, adapted, mode);
    Ok(DispatchOutcome {
        scores: trace.scores,
        full_weights: trace.weights,
        selected: selection.ids,
        selected_weights: selection.weights,
        prediction,
    })
}

/// Weighted combination of adapted outputs over a selection.
pub fn mix(selection: &Selection, adapted: &[Vec<f64>], mode: CombineMode) -> Vec<f64> {
    let classes = adapted[0].len();
    let mut out = vec![0.0; classes];
    for (&id, &w) in selection.ids.iter().zip(&selection.weights) {
        match mode {
            CombineMode::Logits => {
                for (o, &a) in out.iter_mut().zip(&adapted[id]) {
                    *o += w * a;
                }
            }
            CombineMode::Probs => {
                for (o, p) in out.iter_mut().zip(softmax(&adapted[id])) {
                    *o += w * p;
                }
            }
        }
    }
    out
}

/// Per-batch accumulator for the model-side gradient. The model
/// features are shared across samples, so their gradient is folded
/// into the network once per batch via [`model_features_backward`].
#[derive(Debug)]
pub struct ModelFeatureGrads {
    /// K x d_v gradient in the pre-relu model features.
    pub pre: Tensor,
}

impl ModelFeatureGrads {
    pub fn zeros(num_models: usize, d_v: usize) -> Self {
        ModelFeatureGrads {
            pre: Tensor::zeros(&[num_models, d_v]),
        }
    }
}

/// Backward through one sample's dispatch given dL/dw. Accumulates
/// into the gate, the sample projection, and `scratch`; the model-side
/// blocks are finalized later by [`model_features_backward`].
pub fn dispatch_backward(
    net: &mut EnsembleNet,
    embedding: &[f64],
    trace: &DispatchTrace,
    feats: &ModelFeatures,
    weight_grad: &[f64],
    scratch: &mut ModelFeatureGrads,
) {
    let k = net.num_models();
    let d_v = net.joint_dim();
    debug_assert_eq!(weight_grad.len(), k);

    // softmax: g_u = w * (g_w - <g_w, w>)
    let inner = dot(weight_grad, &trace.weights);
    let g_u: Vec<f64> = (0..k)
        .map(|i| trace.weights[i] * (weight_grad[i] - inner))
        .collect();
    // softplus: g_t = g_u * sigmoid(t)
    let g_t: Vec<f64> = (0..k).map(|i| g_u[i] * sigmoid(trace.gate_pre[i])).collect();

    for (g, &gt) in net.gate_bias.grad.data_mut().iter_mut().zip(&g_t) {
        *g += gt;
    }
    let gate_w_grad = net.gate_weight.grad.data_mut();
    for (ki, &s) in trace.scores.iter().enumerate() {
        let row = &mut gate_w_grad[ki * k..(ki + 1) * k];
        for (g, &gt) in row.iter_mut().zip(&g_t) {
            *g += s * gt;
        }
    }
    let g_s: Vec<f64> = (0..k)
        .map(|ki| dot(net.gate_weight.value.row(ki), &g_t))
        .collect();

    // score s_k = <c, F_k>: split into the sample side and the model side.
    let mut g_sample_feat = vec![0.0; d_v];
    for (ki, &gs) in g_s.iter().enumerate() {
        let feat = feats.act.row(ki);
        for (g, &f) in g_sample_feat.iter_mut().zip(feat) {
            *g += gs * f;
        }
        let pre = feats.pre.row(ki);
        let row = scratch.pre.row_mut(ki);
        for v in 0..d_v {
            if pre[v] > 0.0 {
                row[v] += gs * trace.sample_act[v];
            }
        }
    }

    let sample_grad = net.sample_proj.grad.data_mut();
    for (q, &e) in embedding.iter().enumerate() {
        let row = &mut sample_grad[q * d_v..(q + 1) * d_v];
        for v in 0..d_v {
            if trace.sample_pre[v] > 0.0 {
                row[v] += e * g_sample_feat[v];
            }
        }
    }
}

/// Folds the accumulated model-side feature gradient into the model
/// projection and the model embeddings. Call once per batch after all
/// [`dispatch_backward`] calls.
pub fn model_features_backward(net: &mut EnsembleNet, scratch: &ModelFeatureGrads) {
    let k = net.num_models();
    let d_m = net.model_embed.value.cols();
    let d_v = net.joint_dim();
    let proj_grad = net.model_proj.grad.data_mut();
    for ki in 0..k {
        let embed = net.model_embed.value.row(ki);
        let g_pre = scratch.pre.row(ki);
        for (m, &em) in embed.iter().enumerate().take(d_m) {
            let row = &mut proj_grad[m * d_v..(m + 1) * d_v];
            for (g, &gp) in row.iter_mut().zip(g_pre) {
                *g += em * gp;
            }
        }
    }
    let embed_grad = net.model_embed.grad.data_mut();
    for ki in 0..k {
        let g_pre = scratch.pre.row(ki);
        let row = &mut embed_grad[ki * d_m..(ki + 1) * d_m];
        for (m, g) in row.iter_mut().enumerate() {
            *g += dot(g_pre, net.model_proj.value.row(m));
        }
    }
}

impl ParamVector for EnsembleNet {
    fn num_blocks(&self) -> usize {
        5
    }
    fn block_name(&self, b: usize) -> &str {
        &self.block(b).name
    }
    fn block_len(&self, b: usize) -> usize {
        self.block(b).value.len()
    }
    fn get(&self, b: usize, i: usize) -> f64 {
        self.block(b).value.data()[i]
    }
    fn set(&mut self, b: usize, i: usize, v: f64) {
        self.block_mut(b).value.data_mut()[i] = v;
    }
    fn grad(&self, b: usize, i: usize) -> f64 {
        self.block(b).grad.data()[i]
    }
}

impl EnsembleNet {
    pub fn block(&self, b: usize) -> &ParamBlock {
        match b {
            0 => &self.model_embed,
            1 => &self.sample_proj,
            2 => &self.model_proj,
            3 => &self.gate_weight,
            _ => &self.gate_bias,
        }
    }

    pub fn block_mut(&mut self, b: usize) -> &mut ParamBlock {
        match b {
            0 => &mut self.model_embed,
            1 => &mut self.sample_proj,
            2 => &mut self.model_proj,
            3 => &mut self.gate_weight,
            _ => &mut self.gate_bias,
        }
    }

    pub fn zero_grads(&mut self) {
        for b in 0..5 {
            self.block_mut(b).zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rng::named_rng;

    fn random_embedding(rng: &mut impl Rng, d_q: usize) -> Vec<f64> {
        (0..d_q).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let net = init_network(3, 5, 4, 6, 11, false);
        assert_eq!(net.model_embed.value.dims(), &[3, 4]);
        assert_eq!(net.sample_proj.value.dims(), &[5, 6]);
        assert_eq!(net.model_proj.value.dims(), &[4, 6]);
        assert_eq!(net.gate_weight.value.dims(), &[3, 3]);
        assert_eq!(net.gate_bias.value.dims(), &[3]);
        assert!(net.gate_bias.value.data().iter().all(|&v| v == 0.0));
        let again = init_network(3, 5, 4, 6, 11, false);
        assert_eq!(net.model_embed.value.data(), again.model_embed.value.data());
        let zeroed = init_network(3, 5, 4, 6, 11, true);
        assert!(zeroed.gate_weight.value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matching_scores_match_naive_triple_loop() {
        let mut rng = named_rng(21, "test/scores");
        let (k, d_q, d_m, d_v) = (4, 3, 5, 6);
        let net = init_network(k, d_q, d_m, d_v, 33, false);
        let e = random_embedding(&mut rng, d_q);

        // Independent recomputation with plain loops.
        let mut sample = vec![0.0; d_v];
        for v in 0..d_v {
            let mut acc = 0.0;
            for q in 0..d_q {
                acc += e[q] * net.sample_proj.value.get2(q, v);
            }
            sample[v] = acc.max(0.0);
        }
        let mut expected = vec![0.0; k];
        for ki in 0..k {
            let mut score = 0.0;
            for v in 0..d_v {
                let mut pre = 0.0;
                for m in 0..d_m {
                    pre += net.model_embed.value.get2(ki, m) * net.model_proj.value.get2(m, v);
                }
                score += sample[v] * pre.max(0.0);
            }
            expected[ki] = score;
        }

        let scores = matching_scores(&e, &net).unwrap();
        for (a, b) in scores.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matching_scores(&e[..2], &net).is_err());
    }

    #[test]
    fn weights_are_a_distribution() {
        let mut rng = named_rng(22, "test/weights");
        for _ in 0..200 {
            let k = rng.random_range(1..=6);
            let d_q = rng.random_range(1..=8);
            let net = init_network(k, d_q, 4, 5, rng.random(), false);
            let e = random_embedding(&mut rng, d_q);
            let feats = model_features(&net);
            let trace = dispatch(&e, &net, &feats);
            assert!((trace.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(trace.weights.iter().all(|&w| w > 0.0 && w < 1.0 || k == 1));
        }
    }

    #[test]
    fn zero_gate_gives_exactly_uniform_weights() {
        for k in 1..=7 {
            let net = init_network(k, 4, 3, 5, 1, true);
            let feats = model_features(&net);
            let trace = dispatch(&[0.3, -0.2, 0.9, 0.1], &net, &feats);
            for &w in &trace.weights {
                assert_eq!(w, 1.0 / k as f64);
            }
        }
    }

    #[test]
    fn single_model_weight_is_exactly_one() {
        let net = init_network(1, 4, 3, 5, 5, false);
        let feats = model_features(&net);
        let trace = dispatch(&[1.0, 2.0, 3.0, 4.0], &net, &feats);
        assert_eq!(trace.weights, vec![1.0]);
    }

    #[test]
    fn ensemble_weights_agrees_with_dispatch() {
        let net = init_network(4, 6, 3, 5, 9, false);
        let feats = model_features(&net);
        let e = [0.2, -0.4, 1.0, 0.5, -1.2, 0.3];
        let trace = dispatch(&e, &net, &feats);
        let w = ensemble_weights(&trace.scores, &net).unwrap();
        assert_eq!(w, trace.weights);
        assert!(ensemble_weights(&trace.scores[..2], &net).is_err());
    }

    fn trace_from_gate_act(gate_act: Vec<f64>) -> DispatchTrace {
        let k = gate_act.len();
        DispatchTrace {
            sample_pre: vec![],
            sample_act: vec![],
            scores: vec![0.0; k],
            gate_pre: vec![0.0; k],
            weights: softmax(&gate_act),
            gate_act,
        }
    }

    #[test]
    fn top_k_renormalizes_as_masked_weights() {
        // Full weights [0.5, 0.3, 0.19, 0.01]; keeping the top two must
        // give [0.625, 0.375].
        let target: [f64; 4] = [0.5, 0.3, 0.19, 0.01];
        let trace = trace_from_gate_act(target.iter().map(|w| w.ln()).collect());
        let sel = top_k_selection(&trace, 2).unwrap();
        assert_eq!(sel.ids, vec![0, 1]);
        assert!((sel.weights[0] - 0.625).abs() < 1e-12);
        assert!((sel.weights[1] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn top_k_matches_masked_renormalization_on_random_inputs() {
        let mut rng = named_rng(23, "test/topk");
        for _ in 0..300 {
            let k_total = rng.random_range(2..=8);
            let keep = rng.random_range(1..=k_total);
            let net = init_network(k_total, 4, 3, 5, rng.random(), false);
            let feats = model_features(&net);
            let e = random_embedding(&mut rng, 4);
            let trace = dispatch(&e, &net, &feats);
            let sel = top_k_selection(&trace, keep).unwrap();
            assert!(sel.ids.windows(2).all(|p| p[0] < p[1]));
            let mass: f64 = sel.ids.iter().map(|&i| trace.weights[i]).sum();
            for (&id, &w) in sel.ids.iter().zip(&sel.weights) {
                assert!((w - trace.weights[id] / mass).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn top_k_equal_to_model_count_is_bit_exact() {
        let mut rng = named_rng(24, "test/topk_full");
        for _ in 0..100 {
            let k = rng.random_range(1..=8);
            let net = init_network(k, 4, 3, 5, rng.random(), false);
            let feats = model_features(&net);
            let e = random_embedding(&mut rng, 4);
            let trace = dispatch(&e, &net, &feats);
            let sel = top_k_selection(&trace, k).unwrap();
            assert_eq!(sel.ids, (0..k).collect::<Vec<_>>());
            for (a, b) in sel.weights.iter().zip(&trace.weights) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn top_k_breaks_ties_toward_lower_ids() {
        let trace = trace_from_gate_act(vec![1.0, 2.0, 2.0, 2.0]);
        let sel = top_k_selection(&trace, 2).unwrap();
        assert_eq!(sel.ids, vec![1, 2]);
        let sel = top_k_selection(&trace, 1).unwrap();
        assert_eq!(sel.ids, vec![1]);
    }

    #[test]
    fn top_k_rejects_zero_and_clamps_large_k() {
        let trace = trace_from_gate_act(vec![1.0, 0.5]);
        assert!(top_k_selection(&trace, 0).is_err());
        let sel = top_k_selection(&trace, 99).unwrap();
        assert_eq!(sel.ids, vec![0, 1]);
    }

    #[test]
    fn predict_mixes_selected_models() {
        let net = init_network(2, 3, 3, 4, 7, true);
        let feats = model_features(&net);
        let adapted = vec![vec![2.0, 0.0], vec![0.0, 4.0]];
        // Uniform gate: both models kept at weight 0.5.
        let out = predict(&[0.1, 0.2, 0.3], &adapted, &net, &feats, 2, CombineMode::Logits)
            .unwrap();
        assert_eq!(out.prediction, vec![1.0, 2.0]);
        let probs = predict(&[0.1, 0.2, 0.3], &adapted, &net, &feats, 2, CombineMode::Probs)
            .unwrap();
        let expect: Vec<f64> = softmax(&adapted[0])
            .iter()
            .zip(softmax(&adapted[1]))
            .map(|(a, b)| 0.5 * a + 0.5 * b)
            .collect();
        for (p, q) in probs.prediction.iter().zip(&expect) {
            assert!((p - q).abs() < 1e-15);
        }
        assert!((probs.prediction.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(predict(&[0.1], &adapted, &net, &feats, 2, CombineMode::Logits).is_err());
        assert!(predict(&[0.1, 0.2, 0.3], &adapted[..1], &net, &feats, 2, CombineMode::Logits)
            .is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(predict(&[0.1, 0.2, 0.3], &ragged, &net, &feats, 2, CombineMode::Logits).is_err());
    }

    #[test]
    fn dispatch_backward_matches_finite_differences() {
        let mut rng = named_rng(25, "test/dispatch_grad");
        for case in 0..15 {
            let k = rng.random_range(2..=4);
            let d_q = rng.random_range(2..=5);
            let d_m = rng.random_range(2..=4);
            let d_v = rng.random_range(2..=5);
            let mut net = init_network(k, d_q, d_m, d_v, rng.random(), false);
            for v in net.gate_bias.value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
            let e = random_embedding(&mut rng, d_q);
            let coeff: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();

            let feats = model_features(&net);
            let trace = dispatch(&e, &net, &feats);
            let mut scratch = ModelFeatureGrads::zeros(k, d_v);
            dispatch_backward(&mut net, &e, &trace, &feats, &coeff, &mut scratch);
            model_features_backward(&mut net, &scratch);

            let e2 = e.clone();
            let c2 = coeff.clone();
            let report = grad_check(
                &mut net,
                |n: &EnsembleNet| {
                    let f = model_features(n);
                    dot(&c2, &dispatch(&e2, n, &f).weights)
                },
                1e-5,
            );
            assert!(
                report.max_rel_err() < 1e-5,
                "case {case}: {:?}",
                report.worst()
            );
        }
    }
}
