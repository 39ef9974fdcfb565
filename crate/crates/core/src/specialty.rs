//! Specialty analytics over a trained system: which models are good
//! where, how differently specialties distribute across groups, and
//! which models the dispatcher actually leans on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::adapt_logits;
use crate::ensemble::{dispatch, model_features};
use crate::error::{Result, SedgeError};
use crate::params::{model_adapter_map, Params};
use crate::pool::PoolCache;
use crate::tensor::Tensor;

/// Smoothing added to normalized specialty columns before KL.
pub const KL_SMOOTHING_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialtyLevel {
    Domain,
    Class,
}

impl SpecialtyLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpecialtyLevel::Domain => "domain",
            SpecialtyLevel::Class => "class",
        }
    }
}

/// K x G matrix of model-by-group specialty. Raw entries are summed
/// log-likelihoods; `normalized` marks columnwise min-max scaling.
#[derive(Debug, Clone)]
pub struct SpecialtyMatrix {
    pub values: Tensor,
    pub level: SpecialtyLevel,
    pub group_names: Vec<String>,
    pub normalized: bool,
}

/// Sums each model's adapted true-label log-likelihood over every
/// sample of each group (domain or class). Errors if a group has no
/// samples.
pub fn aggregate_specialty(
    pool: &PoolCache,
    params: &Params,
    level: SpecialtyLevel,
) -> Result<SpecialtyMatrix> {
    let k = pool.manifest.num_models();
    let (num_groups, group_names): (usize, Vec<String>) = match level {
        SpecialtyLevel::Domain => (
            pool.manifest.domains.len(),
            pool.manifest.domains.clone(),
        ),
        SpecialtyLevel::Class => (
            pool.manifest.num_classes,
            (0..pool.manifest.num_classes)
                .map(|c| format!("class_{c}"))
                .collect(),
        ),
    };
    let group_of = |i: usize| -> usize {
        match level {
            SpecialtyLevel::Domain => pool.domain_ids[i] as usize,
            SpecialtyLevel::Class => pool.labels[i] as usize,
        }
    };

    let mut counts = vec![0usize; num_groups];
    let mut values = Tensor::zeros(&[k, num_groups]);
    let adapter_idx = model_adapter_map(&pool.manifest);
    for i in 0..pool.num_samples() {
        let g = group_of(i);
        counts[g] += 1;
        let y = pool.labels[i] as usize;
        for (ki, &ai) in adapter_idx.iter().enumerate() {
            let adapted = adapt_logits(pool.logits[ki].row(i), &params.adapters[ai]);
            // ln softmax(a)[y] = a[y] - logsumexp(a)
            let ll = adapted[y] - crate::nn::log_sum_exp(&adapted);
            values.set2(ki, g, values.get2(ki, g) + ll);
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(SedgeError::invalid_argument(format!(
            "{} {:?} has no samples, cannot aggregate specialty",
            level.as_str(),
            group_names[g]
        )));
    }
    Ok(SpecialtyMatrix {
        values,
        level,
        group_names,
        normalized: false,
    })
}

/// Min-max normalizes each column to [0, 1]. A constant column maps to
/// all zeros.
pub fn minmax_normalize(m: &SpecialtyMatrix) -> SpecialtyMatrix {
    let k = m.values.rows();
    let g = m.values.cols();
    let mut out = m.values.clone();
    for j in 0..g {
        let col: Vec<f64> = (0..k).map(|i| m.values.get2(i, j)).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, &cv) in col.iter().enumerate() {
            let v = if hi > lo { (cv - lo) / (hi - lo) } else { 0.0 };
            out.set2(i, j, v);
        }
    }
    SpecialtyMatrix {
        values: out,
        level: m.level,
        group_names: m.group_names.clone(),
        normalized: true,
    }
}

/// G x G matrix of KL divergences between smoothed, sum-normalized
/// specialty columns: entry (i, j) is KL(col_i || col_j). Requires a
/// normalized matrix.
pub fn kl_matrix(m: &SpecialtyMatrix) -> Result<Tensor> {
    if !m.normalized {
        return Err(SedgeError::invalid_argument(
            "kl_matrix requires a min-max normalized specialty matrix".to_string(),
        ));
    }
    let k = m.values.rows();
    let g = m.values.cols();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(g);
    for j in 0..g {
        let mut col: Vec<f64> = (0..k)
            .map(|i| m.values.get2(i, j) + KL_SMOOTHING_EPS)
            .collect();
        let sum: f64 = col.iter().sum();
        for v in &mut col {
            *v /= sum;
        }
        cols.push(col);
    }
    let mut out = Tensor::zeros(&[g, g]);
    for a in 0..g {
        for b in 0..g {
            if a == b {
                continue;
            }
            let kl: f64 = cols[a]
                .iter()
                .zip(&cols[b])
                .map(|(&p, &q)| p * (p / q).ln())
                .sum();
            out.set2(a, b, kl);
        }
    }
    Ok(out)
}

/// Mean of the off-diagonal entries of a square matrix.
pub fn mean_offdiag(m: &Tensor) -> f64 {
    let g = m.rows();
    if g < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in 0..g {
        for b in 0..g {
            if a != b {
                sum += m.get2(a, b);
            }
        }
    }
    sum / (g * (g - 1)) as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub model_id: usize,
    pub model_name: String,
    /// Sum of full dispatch weights over the samples.
    pub weight_sum: f64,
    /// 1-based, by descending weight sum, ties to the lower id.
    pub rank: usize,
}

/// Sums each model's full dispatch weight over the given samples and
/// ranks models by total mass.
pub fn model_importance(
    pool: &PoolCache,
    params: &Params,
    indices: &[usize],
) -> Result<Vec<ImportanceEntry>> {
    if indices.is_empty() {
        return Err(SedgeError::invalid_argument(
            "cannot rank model importance over an empty index set".to_string(),
        ));
    }
    let k = pool.manifest.num_models();
    let feats = model_features(&params.net);
    let mut sums = vec![0.0; k];
    for &i in indices {
        if i >= pool.num_samples() {
            return Err(SedgeError::invalid_argument(format!(
                "sample index {i} out of range, pool has {} samples",
                pool.num_samples()
            )));
        }
        let trace = dispatch(pool.embeddings.row(i), &params.net, &feats);
        for (s, &w) in sums.iter_mut().zip(&trace.weights) {
            *s += w;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    let mut entries: Vec<ImportanceEntry> = (0..k)
        .map(|ki| ImportanceEntry {
            model_id: ki,
            model_name: pool.manifest.models[ki].name.clone(),
            weight_sum: sums[ki],
            rank: 0,
        })
        .collect();
    for (pos, &ki) in order.iter().enumerate() {
        entries[ki].rank = pos + 1;
    }
    Ok(entries)
}

/// Writes a specialty matrix as CSV: one row per model, one column per
/// group.
pub fn write_specialty_csv(path: &Path, m: &SpecialtyMatrix, pool: &PoolCache) -> Result<()> {
    let mut csv = String::from("model");
    for g in &m.group_names {
        csv.push(',');
        csv.push_str(g);
    }
    csv.push('\n');
    for ki in 0..m.values.rows() {
        csv.push_str(&pool.manifest.models[ki].name);
        for j in 0..m.values.cols() {
            csv.push_str(&format!(",{}", m.values.get2(ki, j)));
        }
        csv.push('\n');
    }
    std::fs::write(path, csv).map_err(|e| SedgeError::io(path, e))
}

/// Writes a KL matrix as CSV with the smoothing constant recorded in a
/// comment line.
pub fn write_kl_csv(path: &Path, kl: &Tensor, group_names: &[String]) -> Result<()> {
    let mut csv = format!("# smoothing_epsilon={KL_SMOOTHING_EPS}\n");
    csv.push_str("group");
    for g in group_names {
        csv.push(',');
        csv.push_str(g);
    }
    csv.push('\n');
    for (a, name) in group_names.iter().enumerate() {
        csv.push_str(name);
        for b in 0..kl.cols() {
            csv.push_str(&format!(",{}", kl.get2(a, b)));
        }
        csv.push('\n');
    }
    std::fs::write(path, csv).map_err(|e| SedgeError::io(path, e))
}

/// Writes an importance ranking as CSV, model id order.
pub fn write_importance_csv(path: &Path, entries: &[ImportanceEntry]) -> Result<()> {
    let mut csv = String::from("model_id,model_name,weight_sum,rank\n");
    for e in entries {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.model_id, e.model_name, e.weight_sum, e.rank
        ));
    }
    std::fs::write(path, csv).map_err(|e| SedgeError::io(path, e))
}
