//! Leave-one-domain-out evaluation. One domain is held out entirely as
//! test; every other domain contributes a deterministic 80/20
//! train/validation split. The protocol repeats training over each
//! domain as target and several seeds and aggregates test accuracy.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapter::adapt_logits;
use crate::ensemble::{model_features, predict, CombineMode};
use crate::error::{Result, SedgeError};
use crate::nn::argmax;
use crate::params::{model_adapter_map, Params};
use crate::pool::PoolCache;
use crate::rng::named_rng;
use crate::train::{train, RunArtifacts, TrainConfig};

/// Index sets of one leave-one-domain-out split. All three lists are
/// ascending and pairwise disjoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target_domain: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits a pool for one target domain: the target is test, and each
/// source domain sends floor(20%) of its samples (chosen by a seeded
/// shuffle) to validation and the rest to training.
pub fn split_dataset(pool: &PoolCache, target_domain: usize, seed: u64) -> Result<SplitSpec> {
    let num_domains = pool.manifest.domains.len();
    if target_domain >= num_domains {
        return Err(SedgeError::invalid_argument(format!(
            "target domain id {target_domain} out of range, pool has {num_domains} domains"
        )));
    }
    if num_domains < 2 {
        return Err(SedgeError::invalid_argument(
            "leave-one-domain-out needs at least 2 domains".to_string(),
        ));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for d in 0..num_domains {
        if d == target_domain {
            continue;
        }
        let mut indices = pool.domain_indices(d);
        let mut rng = named_rng(seed, &format!("split/domain/{d}"));
        indices.shuffle(&mut rng);
        let n_val = indices.len() / 5;
        val.extend_from_slice(&indices[..n_val]);
        train.extend_from_slice(&indices[n_val..]);
    }
    if train.is_empty() {
        return Err(SedgeError::invalid_argument(
            "no training samples outside the target domain".to_string(),
        ));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitSpec {
        target_domain,
        train,
        val,
        test: pool.domain_indices(target_domain),
    })
}

/// Top-k ensemble accuracy over the given samples. Ties in the
/// prediction resolve to the lowest class id.
pub fn evaluate(
    pool: &PoolCache,
    params: &Params,
    indices: &[usize],
    top_k: usize,
    mode: CombineMode,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(SedgeError::invalid_argument(
            "cannot evaluate an empty index set".to_string(),
        ));
    }
    let k = pool.manifest.num_models();
    let group_idx = model_adapter_map(&pool.manifest);
    let feats = model_features(&params.net);
    let mut correct = 0usize;
    for &i in indices {
        if i >= pool.num_samples() {
            return Err(SedgeError::invalid_argument(format!(
                "sample index {i} out of range, pool has {} samples",
                pool.num_samples()
            )));
        }
        let adapted: Vec<Vec<f64>> = (0..k)
            .map(|ki| adapt_logits(pool.logits[ki].row(i), &params.adapters[group_idx[ki]]))
            .collect();
        let outcome = predict(
            pool.embeddings.row(i),
            &adapted,
            &params.net,
            &feats,
            top_k,
            mode,
        )?;
        if argmax(&outcome.prediction) == pool.labels[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub train: TrainConfig,
    /// Seeds per target domain; run s uses base seed + s.
    pub num_seeds: usize,
    /// Worker threads; 1 runs sequentially.
    pub jobs: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            train: TrainConfig::default(),
            num_seeds: 3,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub target_domain: String,
    pub seed: u64,
    pub best_iter: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSummary {
    pub target_domain: String,
    pub mean_test_acc: f64,
    /// Sample standard deviation over seeds; zero for a single seed.
    pub std_test_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub pool_name: String,
    pub rows: Vec<RunRow>,
    pub domains: Vec<DomainSummary>,
    /// Mean of the per-domain means.
    pub grand_mean_test_acc: f64,
}

/// Runs the full protocol: every domain as target, `num_seeds` repeats
/// each. Returns the aggregated report and all run artifacts in
/// (domain-major, seed-minor) order.
pub fn run_protocol(
    pool: &PoolCache,
    cfg: &ProtocolConfig,
) -> Result<(ProtocolReport, Vec<RunArtifacts>)> {
    if cfg.num_seeds == 0 {
        return Err(SedgeError::invalid_argument(
            "protocol needs at least one seed".to_string(),
        ));
    }
    let num_domains = pool.manifest.domains.len();
    let cells: Vec<(usize, u64)> = (0..num_domains)
        .flat_map(|d| (0..cfg.num_seeds as u64).map(move |s| (d, cfg.train.seed + s)))
        .collect();

    let run_cell = |&(domain, seed): &(usize, u64)| -> Result<RunArtifacts> {
        let mut tc = cfg.train.clone();
        tc.seed = seed;
        train(pool, domain, &tc)
    };

    let outcomes: Vec<Result<RunArtifacts>> = if cfg.jobs <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        use rayon::prelude::*;
        let thread_pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| SedgeError::invalid_argument(format!("worker pool: {e}")))?;
        thread_pool.install(|| cells.par_iter().map(run_cell).collect())
    };

    let mut artifacts = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        artifacts.push(o?);
    }

    let rows: Vec<RunRow> = artifacts
        .iter()
        .map(|a| RunRow {
            target_domain: pool.manifest.domains[a.target_domain].clone(),
            seed: a.config.seed,
            best_iter: a.best_iter,
            val_acc: a.metrics.val_acc,
            test_acc: a.metrics.test_acc,
        })
        .collect();

    let mut domains = Vec::with_capacity(num_domains);
    for d in 0..num_domains {
        let accs: Vec<f64> = artifacts
            .iter()
            .filter(|a| a.target_domain == d)
            .map(|a| a.metrics.test_acc)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (accs.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        domains.push(DomainSummary {
            target_domain: pool.manifest.domains[d].clone(),
            mean_test_acc: mean,
            std_test_acc: std,
        });
    }
    let grand = domains.iter().map(|d| d.mean_test_acc).sum::<f64>() / domains.len() as f64;

    Ok((
        ProtocolReport {
            pool_name: pool.manifest.pool_name.clone(),
            rows,
            domains,
            grand_mean_test_acc: grand,
        },
        artifacts,
    ))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &ProtocolReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SedgeError::io(dir, e))?;
    let json_path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| SedgeError::io(&json_path, e))?;

    let mut csv = String::from("target_domain,seed,best_iter,val_acc,test_acc\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.target_domain, r.seed, r.best_iter, r.val_acc, r.test_acc
        ));
    }
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, csv).map_err(|e| SedgeError::io(&csv_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use crate::rng::named_rng;

    fn pool() -> PoolCache {
        let mut rng = named_rng(50, "test/eval_pool");
        crate::train::tests::random_pool(&mut rng, 2, 3, 4, 20, 3)
    }

    #[test]
    fn split_partitions_sources_and_holds_out_target() {
        let p = pool();
        let s = split_dataset(&p, 1, 7).unwrap();
        assert_eq!(s.test, p.domain_indices(1));
        // 20 samples per source domain: 4 val, 16 train, two sources.
        assert_eq!(s.val.len(), 8);
        assert_eq!(s.train.len(), 32);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).cloned().collect();
        all.sort_unstable();
        let mut expected: Vec<usize> = p.domain_indices(0);
        expected.extend(p.domain_indices(2));
        expected.sort_unstable();
        assert_eq!(all, expected);
        for i in &s.val {
            assert!(!s.train.contains(i));
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let p = pool();
        let a = split_dataset(&p, 0, 7).unwrap();
        let b = split_dataset(&p, 0, 7).unwrap();
        assert_eq!(a.val, b.val);
        assert_eq!(a.train, b.train);
        let c = split_dataset(&p, 0, 8).unwrap();
        assert_ne!(a.val, c.val);
    }

    #[test]
    fn split_floor_rounds_validation_down() {
        let mut rng = named_rng(51, "test/floor");
        let p = crate::train::tests::random_pool(&mut rng, 2, 3, 4, 4, 2);
        // 4 samples per domain: floor(0.8) = 0 go to validation.
        let s = split_dataset(&p, 0, 1).unwrap();
        assert!(s.val.is_empty());
        assert_eq!(s.train.len(), 4);
    }

    #[test]
    fn split_rejects_bad_targets() {
        let p = pool();
        assert!(split_dataset(&p, 9, 0).is_err());
    }

    #[test]
    fn evaluate_against_constant_prediction_oracle() {
        // Zeroed adapters make every prediction the zero vector, so
        // argmax is always class 0 and accuracy equals the share of
        // class-0 labels.
        let p = pool();
        let mut params = init_params(&p.manifest, 3, 4, 0, true);
        for a in &mut params.adapters {
            a.weight.value.data_mut().fill(0.0);
        }
        let indices: Vec<usize> = (0..p.num_samples()).collect();
        let acc = evaluate(&p, &params, &indices, 2, CombineMode::Logits).unwrap();
        let class0 = p.labels.iter().filter(|&&y| y == 0).count();
        assert_eq!(acc, class0 as f64 / p.num_samples() as f64);
    }

    #[test]
    fn evaluate_validates_inputs() {
        let p = pool();
        let params = init_params(&p.manifest, 3, 4, 0, false);
        assert!(evaluate(&p, &params, &[], 2, CombineMode::Logits).is_err());
        assert!(evaluate(&p, &params, &[9999], 2, CombineMode::Logits).is_err());
    }

    fn quick_protocol_cfg(jobs: usize) -> ProtocolConfig {
        ProtocolConfig {
            train: TrainConfig {
                max_iters: 20,
                eval_every: 10,
                avg_start_iter: 15,
                batch_size: 8,
                top_k: 2,
                model_embed_dim: 3,
                joint_dim: 4,
                ..TrainConfig::default()
            },
            num_seeds: 2,
            jobs,
        }
    }

    #[test]
    fn protocol_covers_every_domain_and_seed() {
        let p = pool();
        let (report, artifacts) = run_protocol(&p, &quick_protocol_cfg(1)).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(artifacts.len(), 6);
        assert_eq!(report.domains.len(), 3);
        let seeds: Vec<u64> = report.rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![0, 1, 0, 1, 0, 1]);

        // Aggregates recompute from rows.
        for ds in &report.domains {
            let accs: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.target_domain == ds.target_domain)
                .map(|r| r.test_acc)
                .collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            assert!((ds.mean_test_acc - mean).abs() < 1e-15);
            let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (accs.len() - 1) as f64;
            assert!((ds.std_test_acc - var.sqrt()).abs() < 1e-15);
        }
        let grand =
            report.domains.iter().map(|d| d.mean_test_acc).sum::<f64>() / 3.0;
        assert!((report.grand_mean_test_acc - grand).abs() < 1e-15);
    }

    #[test]
    fn parallel_protocol_matches_sequential() {
        let p = pool();
        let (seq, _) = run_protocol(&p, &quick_protocol_cfg(1)).unwrap();
        let (par, _) = run_protocol(&p, &quick_protocol_cfg(3)).unwrap();
        assert_eq!(
            serde_json::to_string(&seq).unwrap(),
            serde_json::to_string(&par).unwrap()
        );
    }

    #[test]
    fn report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = pool();
        let (report, _) = run_protocol(&p, &quick_protocol_cfg(1)).unwrap();
        write_report(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: ProtocolReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.grand_mean_test_acc, report.grand_mean_test_acc);
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + report.rows.len());
        assert!(csv.starts_with("target_domain,seed,best_iter,val_acc,test_acc\n"));
    }
}
