//! A model pool on disk: cached outputs of K frozen models over N
//! samples, plus a manifest describing the pool. Models belong to
//! pretraining groups; all models in a group share a label space of
//! width `c_o`, so one adapter per group serves them all.
//!
//! Directory layout:
//!
//! ```text
//! pool/
//!   manifest.json      pool name, groups, models, classes, domains
//!   embeddings.bin     N x d_q, f64
//!   labels.bin         N, u32, each < num_classes
//!   domains.bin        N, u32, each < domains.len()
//!   logits_<k>.bin     N x c_o(group of model k), f64, one per model
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SedgeError};
use crate::tensor::{read_indices, read_tensor, write_indices, write_tensor, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: usize,
    pub name: String,
    /// Width of the group's pretraining label space.
    pub c_o: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: usize,
    pub name: String,
    pub group_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub pool_name: String,
    pub groups: Vec<GroupSpec>,
    pub models: Vec<ModelSpec>,
    pub num_classes: usize,
    /// Query embedding width.
    pub d_q: usize,
    pub domains: Vec<String>,
}

impl PoolManifest {
    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn group(&self, group_id: usize) -> Option<&GroupSpec> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }

    /// Group of a model. Panics on unknown ids; `validate` guarantees
    /// every model of a checked manifest resolves.
    pub fn group_of(&self, model_id: usize) -> &GroupSpec {
        let gid = self.models[model_id].group_id;
        self.group(gid).expect("validated manifest")
    }

    pub fn domain_id(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == name)
            .ok_or_else(|| SedgeError::UnknownDomain {
                name: name.to_string(),
                valid: self.domains.clone(),
            })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SedgeError::validation("manifest.json", msg));
        if self.models.is_empty() {
            return fail("no models".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        if self.d_q == 0 {
            return fail("d_q must be positive".into());
        }
        if self.domains.is_empty() {
            return fail("no domains".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.model_id != i {
                return fail(format!(
                    "model_ids must be contiguous from 0, found {} at position {i}",
                    m.model_id
                ));
            }
            if self.group(m.group_id).is_none() {
                return fail(format!(
                    "model {} references unknown group {}",
                    m.model_id, m.group_id
                ));
            }
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.c_o == 0 {
                return fail(format!("group {} has zero-width label space", g.group_id));
            }
            if self.groups[..i].iter().any(|h| h.group_id == g.group_id) {
                return fail(format!("duplicate group_id {}", g.group_id));
            }
        }
        for g in &self.groups {
            if !self.models.iter().any(|m| m.group_id == g.group_id) {
                return fail(format!("group {} has no models", g.group_id));
            }
        }
        Ok(())
    }
}

/// Fully loaded pool: manifest plus every cached array, validated for
/// mutual consistency.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub manifest: PoolManifest,
    /// N x d_q.
    pub embeddings: Tensor,
    pub labels: Vec<u32>,
    pub domain_ids: Vec<u32>,
    /// Per model: N x c_o of the model's group.
    pub logits: Vec<Tensor>,
}

impl PoolCache {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    /// Loads and validates a pool directory. Any inconsistency names
    /// the offending file.
    pub fn load(dir: &Path) -> Result<PoolCache> {
        let manifest_path = dir.join("manifest.json");
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| SedgeError::io(&manifest_path, e))?;
        let manifest: PoolManifest = serde_json::from_str(&text).map_err(|e| SedgeError::Json {
            path: manifest_path,
            source: e,
        })?;
        manifest.validate()?;

        let embeddings = read_tensor(&dir.join("embeddings.bin"))?;
        let labels = read_indices(&dir.join("labels.bin"))?;
        let domain_ids = read_indices(&dir.join("domains.bin"))?;
        let mut logits = Vec::with_capacity(manifest.num_models());
        for k in 0..manifest.num_models() {
            logits.push(read_tensor(&dir.join(format!("logits_{k}.bin")))?);
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

    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        let n = self.labels.len();
        if n == 0 {
            return Err(SedgeError::validation("labels.bin", "pool has no samples"));
        }
        if self.embeddings.dims().len() != 2 {
            return Err(SedgeError::validation(
                "embeddings.bin",
                format!("expected rank 2, found rank {}", self.embeddings.dims().len()),
            ));
        }
        if self.embeddings.rows() != n {
            return Err(SedgeError::validation(
                "embeddings.bin",
                format!("{} rows, labels.bin has {n} entries", self.embeddings.rows()),
            ));
        }
        if self.embeddings.cols() != self.manifest.d_q {
            return Err(SedgeError::validation(
                "embeddings.bin",
                format!(
                    "{} columns, manifest d_q is {}",
                    self.embeddings.cols(),
                    self.manifest.d_q
                ),
            ));
        }
        if self.domain_ids.len() != n {
            return Err(SedgeError::validation(
                "domains.bin",
                format!("{} entries, labels.bin has {n}", self.domain_ids.len()),
            ));
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if y as usize >= self.manifest.num_classes {
                return Err(SedgeError::validation(
                    "labels.bin",
                    format!(
                        "label {y} at index {i} out of range, num_classes is {}",
                        self.manifest.num_classes
                    ),
                ));
            }
        }
        for (i, &d) in self.domain_ids.iter().enumerate() {
            if d as usize >= self.manifest.domains.len() {
                return Err(SedgeError::validation(
                    "domains.bin",
                    format!(
                        "domain id {d} at index {i} out of range, pool has {} domains",
                        self.manifest.domains.len()
                    ),
                ));
            }
        }
        if self.logits.len() != self.manifest.num_models() {
            return Err(SedgeError::validation(
                "manifest.json",
                format!(
                    "manifest lists {} models, {} logit tensors loaded",
                    self.manifest.num_models(),
                    self.logits.len()
                ),
            ));
        }
        for (k, z) in self.logits.iter().enumerate() {
            let file = format!("logits_{k}.bin");
            if z.dims().len() != 2 {
                return Err(SedgeError::validation(
                    &file,
                    format!("expected rank 2, found rank {}", z.dims().len()),
                ));
            }
            if z.rows() != n {
                return Err(SedgeError::validation(
                    &file,
                    format!("{} rows, labels.bin has {n} entries", z.rows()),
                ));
            }
            let c_o = self.manifest.group_of(k).c_o;
            if z.cols() != c_o {
                return Err(SedgeError::validation(
                    &file,
                    format!("{} columns, group label space is {c_o}", z.cols()),
                ));
            }
        }
        Ok(())
    }

    /// Writes the pool directory. Identical pools produce byte-identical
    /// directories.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| SedgeError::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&manifest_path, text).map_err(|e| SedgeError::io(&manifest_path, e))?;
        write_tensor(&dir.join("embeddings.bin"), &self.embeddings)?;
        write_indices(&dir.join("labels.bin"), &self.labels)?;
        write_indices(&dir.join("domains.bin"), &self.domain_ids)?;
        for (k, z) in self.logits.iter().enumerate() {
            write_tensor(&dir.join(format!("logits_{k}.bin")), z)?;
        }
        Ok(())
    }

    /// Restriction of the pool to one model, used by single-model
    /// baselines. The model keeps its group and is renumbered to id 0.
    pub fn single_model_view(&self, model_id: usize) -> Result<PoolCache> {
        if model_id >= self.manifest.num_models() {
            return Err(SedgeError::invalid_argument(format!(
                "model id {model_id} out of range, pool has {} models",
                self.manifest.num_models()
            )));
        }
        let spec = &self.models_spec(model_id);
        let group = self.manifest.group_of(model_id).clone();
        let manifest = PoolManifest {
            pool_name: format!("{}_{}", self.manifest.pool_name, spec.name),
            groups: vec![GroupSpec {
                group_id: 0,
                name: group.name,
                c_o: group.c_o,
            }],
            models: vec![ModelSpec {
                model_id: 0,
                name: spec.name.clone(),
                group_id: 0,
            }],
            num_classes: self.manifest.num_classes,
            d_q: self.manifest.d_q,
            domains: self.manifest.domains.clone(),
        };
        Ok(PoolCache {
            manifest,
            embeddings: self.embeddings.clone(),
            labels: self.labels.clone(),
            domain_ids: self.domain_ids.clone(),
            logits: vec![self.logits[model_id].clone()],
        })
    }

    fn models_spec(&self, model_id: usize) -> ModelSpec {
        self.manifest.models[model_id].clone()
    }

    /// Ascending sample indices belonging to one domain.
    pub fn domain_indices(&self, domain_id: usize) -> Vec<usize> {
        self.domain_ids
            .iter()
            .enumerate()
            .filter(|(_, &d)| d as usize == domain_id)
            .map(|(i, _)| i)
            .collect()
    }
}
