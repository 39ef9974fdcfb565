//! Label-space adapters. Each pretraining group owns one affine map
//! from its label space (width c_o) to the task label space (width C);
//! every model in the group shares it. Adapting cached logits is the
//! only way model outputs enter the task label space.

use crate::nn::{softmax, ParamBlock};
use crate::pool::GroupSpec;
use crate::rng::named_rng;
use crate::tensor::Tensor;
use rand::Rng;

/// Adapter for one pretraining group: a c_o x C weight and a length-C
/// bias. Block names double as file stems when a run is persisted.
#[derive(Debug, Clone)]
pub struct AdapterGroup {
    pub group_id: usize,
    pub weight: ParamBlock,
    pub bias: ParamBlock,
}

/// Uniform init with fan-based scale sqrt(6 / (c_o + C)), bias zero.
/// Deterministic in (seed, group id).
pub fn init_adapter(group: &GroupSpec, num_classes: usize, seed: u64) -> AdapterGroup {
    let gid = group.group_id;
    let bound = (6.0 / (group.c_o + num_classes) as f64).sqrt();
    let mut rng = named_rng(seed, &format!("init/adapter/{gid}"));
    let data = (0..group.c_o * num_classes)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    AdapterGroup {
        group_id: gid,
        weight: ParamBlock::new(
            format!("adapter_{gid}_W"),
            Tensor::new(vec![group.c_o, num_classes], data).expect("init shape"),
        ),
        bias: ParamBlock::new(format!("adapter_{gid}_b"), Tensor::zeros(&[num_classes])),
    }
}

/// Maps raw model logits into the task label space: a = z W + b.
pub fn adapt_logits(raw: &[f64], adapter: &AdapterGroup) -> Vec<f64> {
    let w = &adapter.weight.value;
    debug_assert_eq!(raw.len(), w.rows());
    let c = w.cols();
    let mut out = adapter.bias.value.data().to_vec();
    for (o, &z) in raw.iter().enumerate() {
        let row = w.row(o);
        for (a, &wv) in out.iter_mut().zip(row) {
            *a += z * wv;
        }
    }
    debug_assert_eq!(out.len(), c);
    out
}

/// Probability the adapted head assigns to the true label.
pub fn model_likelihood(adapted: &[f64], y: usize) -> f64 {
    softmax(adapted)[y]
}

/// Accumulates dL/dW and dL/db into the adapter's gradients, given the
/// upstream gradient in the adapted logits.
pub fn adapt_backward(adapter: &mut AdapterGroup, raw: &[f64], grad_adapted: &[f64]) {
    let c = adapter.weight.value.cols();
    debug_assert_eq!(grad_adapted.len(), c);
    let gw = adapter.weight.grad.data_mut();
    for (o, &z) in raw.iter().enumerate() {
        let row = &mut gw[o * c..(o + 1) * c];
        for (g, &ga) in row.iter_mut().zip(grad_adapted) {
            *g += z * ga;
        }
    }
    for (g, &ga) in adapter.bias.grad.data_mut().iter_mut().zip(grad_adapted) {
        *g += ga;
    }
}

impl crate::nn::ParamVector for AdapterGroup {
    fn num_blocks(&self) -> usize {
        2
    }
    fn block_name(&self, b: usize) -> &str {
        if b == 0 {
            &self.weight.name
        } else {
            &self.bias.name
        }
    }
    fn block_len(&self, b: usize) -> usize {
        if b == 0 {
            self.weight.value.len()
        } else {
            self.bias.value.len()
        }
    }
    fn get(&self, b: usize, i: usize) -> f64 {
        if b == 0 {
            self.weight.value.data()[i]
        } else {
            self.bias.value.data()[i]
        }
    }
    fn set(&mut self, b: usize, i: usize, v: f64) {
        if b == 0 {
            self.weight.value.data_mut()[i] = v;
        } else {
            self.bias.value.data_mut()[i] = v;
        }
    }
    fn grad(&self, b: usize, i: usize) -> f64 {
        if b == 0 {
            self.weight.grad.data()[i]
        } else {
            self.bias.grad.data()[i]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy, cross_entropy_grad, grad_check};
    use crate::rng::named_rng;
    use rand::Rng;

    fn group(c_o: usize) -> GroupSpec {
        GroupSpec {
            group_id: 2,
            name: "g".into(),
            c_o,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_adapter(&group(7), 4, 9);
        let b = init_adapter(&group(7), 4, 9);
        assert_eq!(a.weight.value.data(), b.weight.value.data());
        assert_eq!(a.weight.name, "adapter_2_W");
        assert_eq!(a.weight.value.dims(), &[7, 4]);
        assert!(a.bias.value.data().iter().all(|&v| v == 0.0));
        let bound = (6.0 / 11.0f64).sqrt();
        assert!(a.weight.value.data().iter().all(|&v| v.abs() < bound));
        assert!(a.weight.value.data().iter().any(|&v| v != 0.0));
        let c = init_adapter(&group(7), 4, 10);
        assert_ne!(a.weight.value.data(), c.weight.value.data());
    }

    #[test]
    fn adapt_matches_hand_computation() {
        let mut adapter = init_adapter(&group(2), 2, 0);
        adapter
            .weight
            .value
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        adapter.bias.value.data_mut().copy_from_slice(&[0.5, -0.5]);
        // [1, 2] . [[1, 2], [3, 4]] + [0.5, -0.5] = [7.5, 9.5]
        assert_eq!(adapt_logits(&[1.0, 2.0], &adapter), vec![7.5, 9.5]);
    }

    #[test]
    fn identity_adapter_passes_logits_through() {
        let mut adapter = init_adapter(&group(3), 3, 0);
        adapter.weight.value.data_mut().fill(0.0);
        for i in 0..3 {
            adapter.weight.value.set2(i, i, 1.0);
        }
        let z = [0.4, -1.0, 2.5];
        assert_eq!(adapt_logits(&z, &adapter), z.to_vec());
    }

    #[test]
    fn likelihood_is_true_class_probability() {
        assert!((model_likelihood(&[0.0, 0.0, 0.0, 0.0], 2) - 0.25).abs() < 1e-15);
        let p = model_likelihood(&[0.0, 2.0f64.ln()], 1);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = named_rng(4, "test/adapter_grad");
        for _ in 0..10 {
            let c_o = rng.random_range(2..6);
            let c = rng.random_range(2..5);
            let mut adapter = init_adapter(
                &GroupSpec {
                    group_id: 0,
                    name: "g".into(),
                    c_o,
                },
                c,
                rng.random(),
            );
            for v in adapter.bias.value.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            let raw: Vec<f64> = (0..c_o).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..c);

            let adapted = adapt_logits(&raw, &adapter);
            let g = cross_entropy_grad(&adapted, y);
            adapt_backward(&mut adapter, &raw, &g);

            let raw2 = raw.clone();
            let report = grad_check(
                &mut adapter,
                |a: &AdapterGroup| cross_entropy(&adapt_logits(&raw2, a), y),
                1e-5,
            );
            assert!(report.max_rel_err() < 1e-6, "{:?}", report.worst());
        }
    }
}
