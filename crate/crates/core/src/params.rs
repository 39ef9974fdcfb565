//! The full trainable state: one adapter per pretraining group plus
//! the dispatch network, with persistence to a run directory and the
//! running weight average used for evaluation snapshots.
//!
//! Persisted layout, one tensor file per block, stems fixed by the
//! block names:
//!
//! ```text
//! run/
//!   adapter_<gid>_W.bin   adapter_<gid>_b.bin   per group
//!   ens_Em.bin  ens_Wi.bin  ens_Wm.bin  ens_Wmlp.bin  ens_bmlp.bin
//! ```

use std::path::Path;

use crate::adapter::{init_adapter, AdapterGroup};
use crate::ensemble::{init_network, EnsembleNet};
use crate::error::{Result, SedgeError};
use crate::nn::{ParamBlock, ParamVector};
use crate::pool::PoolManifest;
use crate::tensor::{read_tensor, write_tensor};

#[derive(Debug, Clone)]
pub struct Params {
    /// Aligned with the manifest's group order.
    pub adapters: Vec<AdapterGroup>,
    pub net: EnsembleNet,
    /// Whether adapter biases receive updates.
    pub train_adapter_bias: bool,
    /// Whether the gate bias receives updates.
    pub train_gate_bias: bool,
    /// When false the whole dispatch network is frozen, leaving only
    /// the adapters trainable (uniform-dispatch training).
    pub train_net: bool,
}

/// Fresh parameters for a pool. `zero_gate` starts the dispatcher at
/// an exactly uniform mix.
pub fn init_params(
    manifest: &PoolManifest,
    d_m: usize,
    d_v: usize,
    seed: u64,
    zero_gate: bool,
) -> Params {
    let adapters = manifest
        .groups
        .iter()
        .map(|g| init_adapter(g, manifest.num_classes, seed))
        .collect();
    let net = init_network(
        manifest.num_models(),
        manifest.d_q,
        d_m,
        d_v,
        seed,
        zero_gate,
    );
    Params {
        adapters,
        net,
        train_adapter_bias: true,
        train_gate_bias: true,
        train_net: true,
    }
}

/// For each model, the index of its group's adapter in
/// [`Params::adapters`] (manifest group order).
pub fn model_adapter_map(manifest: &PoolManifest) -> Vec<usize> {
    manifest
        .models
        .iter()
        .map(|m| {
            manifest
                .groups
                .iter()
                .position(|g| g.group_id == m.group_id)
                .expect("validated manifest")
        })
        .collect()
}

/// Addresses one parameter block inside [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    AdapterWeight(usize),
    AdapterBias(usize),
    Net(usize),
}

impl Params {
    fn all_slots(&self) -> Vec<Slot> {
        let mut slots = Vec::with_capacity(self.adapters.len() * 2 + 5);
        for g in 0..self.adapters.len() {
            slots.push(Slot::AdapterWeight(g));
            slots.push(Slot::AdapterBias(g));
        }
        for b in 0..5 {
            slots.push(Slot::Net(b));
        }
        slots
    }

    fn trainable_slots(&self) -> Vec<Slot> {
        let mut slots = Vec::new();
        for g in 0..self.adapters.len() {
            slots.push(Slot::AdapterWeight(g));
            if self.train_adapter_bias {
                slots.push(Slot::AdapterBias(g));
            }
        }
        if self.train_net {
            for b in 0..5 {
                // Net block 4 is the gate bias.
                if b != 4 || self.train_gate_bias {
                    slots.push(Slot::Net(b));
                }
            }
        }
        slots
    }

    fn block(&self, slot: Slot) -> &ParamBlock {
        match slot {
            Slot::AdapterWeight(g) => &self.adapters[g].weight,
            Slot::AdapterBias(g) => &self.adapters[g].bias,
            Slot::Net(b) => self.net.block(b),
        }
    }

    fn block_mut(&mut self, slot: Slot) -> &mut ParamBlock {
        match slot {
            Slot::AdapterWeight(g) => &mut self.adapters[g].weight,
            Slot::AdapterBias(g) => &mut self.adapters[g].bias,
            Slot::Net(b) => self.net.block_mut(b),
        }
    }

    /// Every block, trainable or not, in persistence order.
    pub fn all_blocks(&self) -> Vec<&ParamBlock> {
        self.all_slots().iter().map(|&s| self.block(s)).collect()
    }

    /// Applies one optimizer step to every trainable block.
    pub fn adam_step(&mut self, cfg: &crate::nn::AdamConfig) {
        for slot in self.trainable_slots() {
            crate::nn::adam_step(self.block_mut(slot), cfg);
        }
    }

    pub fn zero_grads(&mut self) {
        for slot in self.all_slots() {
            self.block_mut(slot).zero_grad();
        }
    }

    /// Writes every block to `<dir>/<block name>.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SedgeError::io(dir, e))?;
        for block in self.all_blocks() {
            write_tensor(&dir.join(format!("{}.bin", block.name)), &block.value)?;
        }
        Ok(())
    }

    /// Loads block values from a run directory, validating shapes
    /// against the manifest. Optimizer state starts fresh.
    pub fn load(dir: &Path, manifest: &PoolManifest) -> Result<Params> {
        let read = |stem: &str| read_tensor(&dir.join(format!("{stem}.bin")));
        let expect_dims = |stem: &str, t: &crate::tensor::Tensor, dims: &[usize]| {
            if t.dims() != dims {
                return Err(SedgeError::validation(
                    format!("{stem}.bin"),
                    format!("dims {:?}, expected {:?}", t.dims(), dims),
                ));
            }
            Ok(())
        };

        let c = manifest.num_classes;
        let mut adapters = Vec::with_capacity(manifest.groups.len());
        for g in &manifest.groups {
            let gid = g.group_id;
            let w_stem = format!("adapter_{gid}_W");
            let b_stem = format!("adapter_{gid}_b");
            let w = read(&w_stem)?;
            expect_dims(&w_stem, &w, &[g.c_o, c])?;
            let b = read(&b_stem)?;
            expect_dims(&b_stem, &b, &[c])?;
            adapters.push(AdapterGroup {
                group_id: gid,
                weight: ParamBlock::new(w_stem, w),
                bias: ParamBlock::new(b_stem, b),
            });
        }

        let k = manifest.num_models();
        let embed = read("ens_Em")?;
        if embed.dims().len() != 2 || embed.rows() != k {
            return Err(SedgeError::validation(
                "ens_Em.bin",
                format!("dims {:?}, expected {k} rows", embed.dims()),
            ));
        }
        let d_m = embed.cols();
        let proj_in = read("ens_Wi")?;
        if proj_in.dims().len() != 2 || proj_in.rows() != manifest.d_q {
            return Err(SedgeError::validation(
                "ens_Wi.bin",
                format!("dims {:?}, expected {} rows", proj_in.dims(), manifest.d_q),
            ));
        }
        let d_v = proj_in.cols();
        let proj_m = read("ens_Wm")?;
        expect_dims("ens_Wm", &proj_m, &[d_m, d_v])?;
        let gate_w = read("ens_Wmlp")?;
        expect_dims("ens_Wmlp", &gate_w, &[k, k])?;
        let gate_b = read("ens_bmlp")?;
        expect_dims("ens_bmlp", &gate_b, &[k])?;

        Ok(Params {
            adapters,
            net: EnsembleNet {
                model_embed: ParamBlock::new("ens_Em", embed),
                sample_proj: ParamBlock::new("ens_Wi", proj_in),
                model_proj: ParamBlock::new("ens_Wm", proj_m),
                gate_weight: ParamBlock::new("ens_Wmlp", gate_w),
                gate_bias: ParamBlock::new("ens_bmlp", gate_b),
            },
            train_adapter_bias: true,
            train_gate_bias: true,
            train_net: true,
        })
    }
}

impl ParamVector for Params {
    fn num_blocks(&self) -> usize {
        self.trainable_slots().len()
    }
    fn block_name(&self, b: usize) -> &str {
        &self.block(self.trainable_slots()[b]).name
    }
    fn block_len(&self, b: usize) -> usize {
        self.block(self.trainable_slots()[b]).value.len()
    }
    fn get(&self, b: usize, i: usize) -> f64 {
        self.block(self.trainable_slots()[b]).value.data()[i]
    }
    fn set(&mut self, b: usize, i: usize, v: f64) {
        let slot = self.trainable_slots()[b];
        self.block_mut(slot).value.data_mut()[i] = v;
    }
    fn grad(&self, b: usize, i: usize) -> f64 {
        self.block(self.trainable_slots()[b]).grad.data()[i]
    }
}

/// Running arithmetic mean of parameter snapshots:
/// avg <- (avg * n + current) / (n + 1), elementwise over every block.
#[derive(Debug, Clone)]
pub struct ParamAverage {
    pub mean: Params,
    pub count: usize,
}

impl ParamAverage {
    /// Starts the average at the first snapshot.
    pub fn new(params: &Params) -> Self {
        ParamAverage {
            mean: params.clone(),
            count: 1,
        }
    }

    pub fn update(&mut self, current: &Params) {
        let n = self.count as f64;
        for slot in self.mean.all_slots() {
            let cur = current.block(slot).value.data().to_vec();
            let avg = self.mean.block_mut(slot).value.data_mut();
            for (a, c) in avg.iter_mut().zip(cur) {
                *a = (*a * n + c) / (n + 1.0);
            }
        }
        self.count += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{GroupSpec, ModelSpec};
    use crate::rng::named_rng;
    use rand::Rng;

    fn manifest() -> PoolManifest {
        PoolManifest {
            pool_name: "p".into(),
            groups: vec![
                GroupSpec {
                    group_id: 0,
                    name: "a".into(),
                    c_o: 6,
                },
                GroupSpec {
                    group_id: 3,
                    name: "b".into(),
                    c_o: 4,
                },
            ],
            models: vec![
                ModelSpec {
                    model_id: 0,
                    name: "m0".into(),
                    group_id: 0,
                },
                ModelSpec {
                    model_id: 1,
                    name: "m1".into(),
                    group_id: 3,
                },
                ModelSpec {
                    model_id: 2,
                    name: "m2".into(),
                    group_id: 3,
                },
            ],
            num_classes: 5,
            d_q: 7,
            domains: vec!["d0".into(), "d1".into()],
        }
    }

    #[test]
    fn init_covers_every_group_and_respects_dims() {
        let p = init_params(&manifest(), 8, 9, 3, false);
        assert_eq!(p.adapters.len(), 2);
        assert_eq!(p.adapters[0].weight.value.dims(), &[6, 5]);
        assert_eq!(p.adapters[1].weight.value.dims(), &[4, 5]);
        assert_eq!(p.adapters[1].weight.name, "adapter_3_W");
        assert_eq!(p.net.model_embed.value.dims(), &[3, 8]);
        assert_eq!(p.net.sample_proj.value.dims(), &[7, 9]);
        assert_eq!(p.all_blocks().len(), 9);
    }

    #[test]
    fn trainability_flags_shrink_the_trainable_set() {
        let mut p = init_params(&manifest(), 4, 4, 0, false);
        assert_eq!(p.num_blocks(), 9);
        p.train_adapter_bias = false;
        assert_eq!(p.num_blocks(), 7);
        p.train_gate_bias = false;
        assert_eq!(p.num_blocks(), 6);
        p.train_net = false;
        assert_eq!(p.num_blocks(), 2);
        let names: Vec<&str> = (0..p.num_blocks()).map(|b| p.block_name(b)).collect();
        assert_eq!(names, vec!["adapter_0_W", "adapter_3_W"]);
    }

    #[test]
    fn frozen_blocks_receive_no_adam_update() {
        let mut p = init_params(&manifest(), 4, 4, 0, false);
        p.train_net = false;
        let before = p.net.model_embed.value.data().to_vec();
        for slot in p.all_slots() {
            p.block_mut(slot).grad.data_mut().fill(1.0);
        }
        p.adam_step(&crate::nn::AdamConfig::default());
        assert_eq!(p.net.model_embed.value.data(), before.as_slice());
        assert_ne!(
            p.adapters[0].weight.value.data()[0],
            init_params(&manifest(), 4, 4, 0, false).adapters[0]
                .weight
                .value
                .data()[0]
        );
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        let p = init_params(&m, 4, 9, 17, false);
        p.save(dir.path()).unwrap();
        let q = Params::load(dir.path(), &m).unwrap();
        for (a, b) in p.all_blocks().iter().zip(q.all_blocks()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data());
        }
        assert_eq!(q.net.joint_dim(), 9);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        init_params(&m, 4, 4, 17, false).save(dir.path()).unwrap();
        let mut wrong = m.clone();
        wrong.num_classes = 7;
        let err = Params::load(dir.path(), &wrong).unwrap_err();
        match err {
            SedgeError::Validation { file, .. } => assert_eq!(file, "adapter_0_W.bin"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_missing_block() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        init_params(&m, 4, 4, 17, false).save(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("ens_Wmlp.bin")).unwrap();
        assert!(matches!(
            Params::load(dir.path(), &m),
            Err(SedgeError::Io { .. })
        ));
    }

    #[test]
    fn running_average_equals_offline_mean() {
        let m = manifest();
        let mut rng = named_rng(6, "test/avg");
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut p = init_params(&m, 3, 3, 0, false);
            for slot in p.all_slots() {
                for v in p.block_mut(slot).value.data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            p
        };
        let snapshots: Vec<Params> = (0..10).map(|_| make(&mut rng)).collect();
        let mut avg = ParamAverage::new(&snapshots[0]);
        for s in &snapshots[1..] {
            avg.update(s);
        }
        assert_eq!(avg.count, 10);
        for (slot_idx, block) in avg.mean.all_blocks().iter().enumerate() {
            for i in 0..block.value.len() {
                let offline: f64 = snapshots
                    .iter()
                    .map(|s| s.all_blocks()[slot_idx].value.data()[i])
                    .sum::<f64>()
                    / snapshots.len() as f64;
                assert!((block.value.data()[i] - offline).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn average_of_one_snapshot_is_the_snapshot() {
        let p = init_params(&manifest(), 3, 3, 2, false);
        let avg = ParamAverage::new(&p);
        assert_eq!(avg.count, 1);
        assert_eq!(
            avg.mean.net.model_embed.value.data(),
            p.net.model_embed.value.data()
        );
    }
}
