//! Planted-specialty synthetic pools.
//!
//! The generator plants a smooth ground-truth reliability surface
//! A[k][d][c] in (0, 1) over (model, domain, class) and realizes it as
//! cached logits: model k boosts the slot its group's class map assigns
//! to the true class by `signal_gain * A`, and boosts a distractor slot
//! by `signal_gain * (1 - A) * distractor_gain`. Unreliable models are
//! therefore systematically wrong rather than merely noisy. The
//! distractor class is domain-dependent (class c confuses toward class
//! (c + 1 + d) mod C in domain d), the way a frozen model's confusion
//! pattern shifts across domains. A domain-blind linear adapter cannot
//! invert a scramble that changes per domain, while on any one domain
//! every unreliable model piles onto the same wrong class, so
//! indiscriminate averaging is poisoned exactly where reliability-aware
//! dispatch is not. `distractor_gain = 0` turns the distractor off and
//! leaves pure signal-plus-noise logits.
//!
//! Reliability is a logistic function of dot products between shared
//! unit latents (one per class, one per domain) and per-model direction
//! vectors, so it generalizes to held-out domains and can be estimated
//! from embeddings, which are a noisy projection of the same latents.
//!
//! `oracle_cell_accuracy` Monte-Carlo-estimates the accuracy a perfect
//! decoder of one model's raw logits would reach on one (domain, class)
//! cell, independent of any training code. Baselines (best single
//! model, uniform average, random subsets) are measured on adapters
//! trained with frozen uniform dispatch.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::adapt_logits;
use crate::error::{Result, SedgeError};
use crate::nn::{argmax, sigmoid};
use crate::params::{model_adapter_map, Params};
use crate::pool::{GroupSpec, ModelSpec, PoolCache, PoolManifest};
use crate::rng::named_rng;
use crate::tensor::Tensor;
use crate::train::{train, RunArtifacts, TrainConfig};

/// Dimension of the shared latent space behind classes and domains.
pub const LATENT_DIM: usize = 8;

/// Draw count for Monte Carlo oracle estimates.
pub const DEFAULT_ORACLE_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGroup {
    pub name: String,
    /// Output width of models in this group; must be >= num_classes so
    /// the class map can be injective.
    pub c_o: usize,
}

/// Generator configuration. Serialized alongside the pool so a
/// directory is reproducible from its own record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub pool_name: String,
    pub seed: u64,
    pub num_domains: usize,
    pub num_classes: usize,
    pub groups: Vec<GenGroup>,
    /// Group index per model; length is the pool size K.
    pub model_groups: Vec<usize>,
    pub samples_per_domain: usize,
    /// Embedding width d_q.
    pub embed_dim: usize,
    /// Logit boost scale (beta).
    pub signal_gain: f64,
    /// Logit noise sigma.
    pub logit_noise: f64,
    /// Embedding noise sigma.
    pub embed_noise: f64,
    /// Logistic sharpness (gamma) of the reliability surface.
    pub affinity_sharpness: f64,
    /// Weight of the domain term in the reliability logit.
    pub domain_affinity_scale: f64,
    /// Weight of the class term; larger than the domain weight by
    /// default so specialties differ more at class level.
    pub class_affinity_scale: f64,
    /// Strength of the wrong-slot boost for unreliable models.
    pub distractor_gain: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            pool_name: "synth".to_string(),
            seed: 0,
            num_domains: 4,
            num_classes: 10,
            groups: vec![
                GenGroup { name: "wide".to_string(), c_o: 20 },
                GenGroup { name: "narrow".to_string(), c_o: 12 },
            ],
            model_groups: vec![0, 0, 0, 0, 1, 1, 1, 1],
            samples_per_domain: 500,
            embed_dim: 32,
            signal_gain: 4.0,
            logit_noise: 1.0,
            embed_noise: 0.1,
            affinity_sharpness: 3.0,
            domain_affinity_scale: 0.6,
            class_affinity_scale: 1.6,
            distractor_gain: 1.0,
        }
    }
}

impl GenConfig {
    pub fn num_models(&self) -> usize {
        self.model_groups.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SedgeError::invalid_argument(m));
        if self.pool_name.is_empty() {
            return bad("pool_name must not be empty".into());
        }
        if self.num_domains < 2 {
            return bad("num_domains must be at least 2 for held-out evaluation".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        for g in &self.groups {
            if g.c_o < self.num_classes {
                return bad(format!(
                    "group {:?} has c_o={} but the class map needs at least {} slots",
                    g.name, g.c_o, self.num_classes
                ));
            }
        }
        if self.model_groups.is_empty() {
            return bad("model_groups must name at least one model".into());
        }
        for (k, &g) in self.model_groups.iter().enumerate() {
            if g >= self.groups.len() {
                return bad(format!(
                    "model {k} references group {g} but only {} groups exist",
                    self.groups.len()
                ));
            }
        }
        for (gid, g) in self.groups.iter().enumerate() {
            if !self.model_groups.contains(&gid) {
                return bad(format!("group {:?} has no models", g.name));
            }
        }
        if self.samples_per_domain == 0 {
            return bad("samples_per_domain must be positive".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        let finite_nonneg = [
            ("signal_gain", self.signal_gain),
            ("logit_noise", self.logit_noise),
            ("embed_noise", self.embed_noise),
            ("domain_affinity_scale", self.domain_affinity_scale),
            ("class_affinity_scale", self.class_affinity_scale),
            ("distractor_gain", self.distractor_gain),
        ];
        for (name, v) in finite_nonneg {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.affinity_sharpness.is_finite() || self.affinity_sharpness <= 0.0 {
            return bad(format!(
                "affinity_sharpness must be finite and positive, got {}",
                self.affinity_sharpness
            ));
        }
        Ok(())
    }

    /// Manifest for the pool this config generates. Domains are named
    /// d0..d{D-1}; models are named by group plus position in group.
    pub fn manifest(&self) -> PoolManifest {
        let groups: Vec<GroupSpec> = self
            .groups
            .iter()
            .enumerate()
            .map(|(gid, g)| GroupSpec {
                group_id: gid,
                name: g.name.clone(),
                c_o: g.c_o,
            })
            .collect();
        let mut within = vec![0usize; self.groups.len()];
        let models: Vec<ModelSpec> = self
            .model_groups
            .iter()
            .enumerate()
            .map(|(k, &gid)| {
                let name = format!("{}{}", self.groups[gid].name, within[gid]);
                within[gid] += 1;
                ModelSpec {
                    model_id: k,
                    name,
                    group_id: gid,
                }
            })
            .collect();
        PoolManifest {
            pool_name: self.pool_name.clone(),
            groups,
            models,
            num_classes: self.num_classes,
            d_q: self.embed_dim,
            domains: (0..self.num_domains).map(|d| format!("d{d}")).collect(),
        }
    }
}

/// The planted ground truth: shared latents, per-model directions, and
/// per-group injective class maps.
#[derive(Debug, Clone)]
pub struct PlantedSpecialty {
    /// num_classes x LATENT_DIM, unit rows.
    pub class_latents: Tensor,
    /// num_domains x LATENT_DIM, unit rows.
    pub domain_latents: Tensor,
    /// K x LATENT_DIM, unit rows; domain-side direction per model.
    pub domain_dirs: Tensor,
    /// K x LATENT_DIM, unit rows; class-side direction per model.
    pub class_dirs: Tensor,
    /// Per group: class c occupies output slot class_maps[g][c].
    pub class_maps: Vec<Vec<usize>>,
}

impl PlantedSpecialty {
    /// Ground-truth reliability of model k on (domain d, class c).
    pub fn affinity(&self, cfg: &GenConfig, k: usize, d: usize, c: usize) -> f64 {
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let dom = dot(self.domain_dirs.row(k), self.domain_latents.row(d));
        let cls = dot(self.class_dirs.row(k), self.class_latents.row(c));
        sigmoid(
            cfg.affinity_sharpness
                * (cfg.domain_affinity_scale * dom + cfg.class_affinity_scale * cls),
        )
    }

    /// Output slot carrying class c's signal for group g.
    pub fn true_slot(&self, g: usize, c: usize) -> usize {
        self.class_maps[g][c]
    }

    /// Output slot boosted when the model is unreliable on class c in
    /// domain d. The cyclic offset depends on the domain and never
    /// lands back on c itself.
    pub fn distractor_slot(&self, g: usize, c: usize, d: usize, num_classes: usize) -> usize {
        let offset = 1 + d % (num_classes - 1);
        self.class_maps[g][(c + offset) % num_classes]
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, dim]);
    for r in 0..n {
        let row = t.row_mut(r);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate latent draw");
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    t
}

/// Draws the planted ground truth for a config. Deterministic in
/// (seed, structure); independent of sample counts and noise levels.
pub fn plant_specialty(cfg: &GenConfig) -> Result<PlantedSpecialty> {
    cfg.validate()?;
    let k = cfg.num_models();
    let class_latents = unit_rows(
        &mut named_rng(cfg.seed, "gen/class_latents"),
        cfg.num_classes,
        LATENT_DIM,
    );
    let domain_latents = unit_rows(
        &mut named_rng(cfg.seed, "gen/domain_latents"),
        cfg.num_domains,
        LATENT_DIM,
    );
    let mut dir_rng = named_rng(cfg.seed, "gen/model_affinity");
    let domain_dirs = unit_rows(&mut dir_rng, k, LATENT_DIM);
    let class_dirs = unit_rows(&mut dir_rng, k, LATENT_DIM);
    let mut class_maps = Vec::with_capacity(cfg.groups.len());
    for (gid, g) in cfg.groups.iter().enumerate() {
        let mut rng = named_rng(cfg.seed, &format!("gen/classmap/{gid}"));
        let map = sample_indices(&mut rng, g.c_o, cfg.num_classes).into_vec();
        class_maps.push(map);
    }
    Ok(PlantedSpecialty {
        class_latents,
        domain_latents,
        domain_dirs,
        class_dirs,
        class_maps,
    })
}

/// Realizes a planted ground truth as an in-memory pool. Samples are
/// laid out domain-major; labels cycle 0..C within each domain so every
/// (domain, class) cell has nearly equal mass.
pub fn realize_pool(cfg: &GenConfig, planted: &PlantedSpecialty) -> Result<PoolCache> {
    cfg.validate()?;
    let manifest = cfg.manifest();
    let total = cfg.num_domains * cfg.samples_per_domain;
    let concat_dim = 2 * LATENT_DIM;

    let mut proj_rng = named_rng(cfg.seed, "gen/projection");
    let scale = 1.0 / (concat_dim as f64).sqrt();
    let mut projection = Tensor::zeros(&[concat_dim, cfg.embed_dim]);
    for v in projection.data_mut() {
        let n: f64 = StandardNormal.sample(&mut proj_rng);
        *v = n * scale;
    }

    let mut labels = Vec::with_capacity(total);
    let mut domain_ids = Vec::with_capacity(total);
    let mut embeddings = Tensor::zeros(&[total, cfg.embed_dim]);
    let mut emb_rng = named_rng(cfg.seed, "gen/embeddings");
    for d in 0..cfg.num_domains {
        for i in 0..cfg.samples_per_domain {
            let row_idx = d * cfg.samples_per_domain + i;
            let y = i % cfg.num_classes;
            labels.push(y as u32);
            domain_ids.push(d as u32);
            let u = planted.class_latents.row(y);
            let v = planted.domain_latents.row(d);
            for q in 0..cfg.embed_dim {
                let mut acc = 0.0;
                for t in 0..LATENT_DIM {
                    acc += u[t] * projection.get2(t, q);
                    acc += v[t] * projection.get2(LATENT_DIM + t, q);
                }
                let n: f64 = StandardNormal.sample(&mut emb_rng);
                embeddings.set2(row_idx, q, acc + cfg.embed_noise * n);
            }
        }
    }

    let mut logits = Vec::with_capacity(cfg.num_models());
    for (k, &gid) in cfg.model_groups.iter().enumerate() {
        let c_o = cfg.groups[gid].c_o;
        let mut z = Tensor::zeros(&[total, c_o]);
        let mut rng = named_rng(cfg.seed, &format!("gen/logits/{k}"));
        for d in 0..cfg.num_domains {
            for i in 0..cfg.samples_per_domain {
                let row_idx = d * cfg.samples_per_domain + i;
                let y = i % cfg.num_classes;
                let a = planted.affinity(cfg, k, d, y);
                let row = z.row_mut(row_idx);
                for v in row.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v = cfg.logit_noise * n;
                }
                row[planted.true_slot(gid, y)] += cfg.signal_gain * a;
                row[planted.distractor_slot(gid, y, d, cfg.num_classes)] +=
                    cfg.signal_gain * (1.0 - a) * cfg.distractor_gain;
            }
        }
        logits.push(z);
    }

    let pool = PoolCache {
        manifest,
        embeddings,
        labels,
        domain_ids,
        logits,
    };
    pool.validate()?;
    Ok(pool)
}

/// Generates a pool directory: caches plus `gen_config.json`. The same
/// config always produces byte-identical files.
pub fn generate_pool(cfg: &GenConfig, dir: &Path) -> Result<PoolCache> {
    let planted = plant_specialty(cfg)?;
    let pool = realize_pool(cfg, &planted)?;
    pool.save(dir)?;
    let path = dir.join("gen_config.json");
    let mut text = serde_json::to_string_pretty(cfg)
        .map_err(|e| SedgeError::invalid_argument(format!("config serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| SedgeError::io(&path, e))?;
    Ok(pool)
}

/// Monte Carlo estimate of the accuracy an oracle decoder of model k's
/// raw logits reaches on cell (domain d, class c): the probability that
/// the true slot wins the argmax over boosted noise.
pub fn oracle_cell_accuracy(
    cfg: &GenConfig,
    planted: &PlantedSpecialty,
    k: usize,
    d: usize,
    c: usize,
    draws: usize,
) -> f64 {
    assert!(draws > 0, "oracle needs at least one draw");
    let gid = cfg.model_groups[k];
    let c_o = cfg.groups[gid].c_o;
    let a = planted.affinity(cfg, k, d, c);
    let true_slot = planted.true_slot(gid, c);
    let dis_slot = planted.distractor_slot(gid, c, d, cfg.num_classes);
    let mut rng = named_rng(cfg.seed, &format!("oracle/cell/{k}/{d}/{c}"));
    let mut z = vec![0.0f64; c_o];
    let mut hits = 0usize;
    for _ in 0..draws {
        for v in z.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = cfg.logit_noise * n;
        }
        z[true_slot] += cfg.signal_gain * a;
        z[dis_slot] += cfg.signal_gain * (1.0 - a) * cfg.distractor_gain;
        if argmax(&z) == true_slot {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Mean oracle accuracy of model k over all classes of domain d.
pub fn oracle_model_domain_accuracy(
    cfg: &GenConfig,
    planted: &PlantedSpecialty,
    k: usize,
    d: usize,
    draws: usize,
) -> f64 {
    let per_class: f64 = (0..cfg.num_classes)
        .map(|c| oracle_cell_accuracy(cfg, planted, k, d, c, draws))
        .sum();
    per_class / cfg.num_classes as f64
}

/// Baseline training config: frozen uniform dispatch, adapters fitted
/// on the per-model loss alone.
pub fn uniform_train_config(base: &TrainConfig, num_models: usize) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.uniform_gate = true;
    cfg.lambda_c = 0.0;
    cfg.lambda_b = 1.0;
    cfg.lambda_e = 0.0;
    cfg.top_k = num_models;
    cfg
}

/// Trains adapters under frozen uniform dispatch. The shared stage for
/// the uniform-average and random-subset baselines.
pub fn train_uniform_adapter(
    pool: &PoolCache,
    target_domain: usize,
    base: &TrainConfig,
) -> Result<RunArtifacts> {
    train(
        pool,
        target_domain,
        &uniform_train_config(base, pool.manifest.num_models()),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestSingleOutcome {
    /// Test accuracy of each model with its own trained adapter.
    pub per_model_test_acc: Vec<f64>,
    /// Best model id; ties go to the lower id.
    pub best_model: usize,
    pub best_test_acc: f64,
}

/// Trains one adapter per model in isolation and reports each model's
/// test accuracy plus the best. Models are independent, so they run in
/// parallel; results are deterministic either way.
pub fn baseline_best_single(
    pool: &PoolCache,
    target_domain: usize,
    base: &TrainConfig,
) -> Result<BestSingleOutcome> {
    let k = pool.manifest.num_models();
    let accs: Result<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|ki| {
            let view = pool.single_model_view(ki)?;
            let artifacts = train_uniform_adapter(&view, target_domain, base)?;
            Ok(artifacts.metrics.test_acc)
        })
        .collect();
    let per_model_test_acc = accs?;
    let mut best_model = 0;
    for ki in 1..k {
        if per_model_test_acc[ki] > per_model_test_acc[best_model] {
            best_model = ki;
        }
    }
    Ok(BestSingleOutcome {
        best_test_acc: per_model_test_acc[best_model],
        per_model_test_acc,
        best_model,
    })
}

fn subset_average_correct(
    pool: &PoolCache,
    params: &Params,
    adapter_idx: &[usize],
    sample: usize,
    chosen: &[usize],
) -> bool {
    let c = pool.manifest.num_classes;
    let mut mixed = vec![0.0f64; c];
    for &ki in chosen {
        let adapted = adapt_logits(pool.logits[ki].row(sample), &params.adapters[adapter_idx[ki]]);
        for (m, a) in mixed.iter_mut().zip(&adapted) {
            *m += a;
        }
    }
    let inv = 1.0 / chosen.len() as f64;
    for m in mixed.iter_mut() {
        *m *= inv;
    }
    argmax(&mixed) == pool.labels[sample] as usize
}

/// Accuracy of the uniform average of all adapted models over the given
/// samples.
pub fn baseline_uniform(pool: &PoolCache, params: &Params, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(SedgeError::invalid_argument(
            "cannot evaluate a baseline on an empty index set".to_string(),
        ));
    }
    let all: Vec<usize> = (0..pool.manifest.num_models()).collect();
    let adapter_idx = model_adapter_map(&pool.manifest);
    let mut hits = 0usize;
    for &i in indices {
        if subset_average_correct(pool, params, &adapter_idx, i, &all) {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}

/// Accuracy of averaging k models drawn uniformly without replacement,
/// fresh per sample. With k equal to the pool size this is exactly the
/// uniform baseline.
pub fn baseline_random_ensemble(
    pool: &PoolCache,
    params: &Params,
    indices: &[usize],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let num_models = pool.manifest.num_models();
    if k == 0 || k > num_models {
        return Err(SedgeError::invalid_argument(format!(
            "random ensemble size {k} must be in 1..={num_models}"
        )));
    }
    if indices.is_empty() {
        return Err(SedgeError::invalid_argument(
            "cannot evaluate a baseline on an empty index set".to_string(),
        ));
    }
    let adapter_idx = model_adapter_map(&pool.manifest);
    let mut rng = named_rng(seed, "baseline/random");
    let mut hits = 0usize;
    for &i in indices {
        let mut chosen = sample_indices(&mut rng, num_models, k).into_vec();
        // Ascending order fixes the summation order, so k = K is
        // bit-identical to the uniform baseline.
        chosen.sort_unstable();
        if subset_average_correct(pool, params, &adapter_idx, i, &chosen) {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}
