//! Feature extractor of the in-repo reference network:
//!
//! ```text
//! 1×256×256 → conv 8@7×7/4 (pad 3) → ReLU → maxpool 2 → 8×32×32
//!           → conv 16@5×5/1 (pad 2) → ReLU → maxpool 2 → 16×16×16
//!           → fc 4096→64 → ReLU
//! ```
//!
//! The classifier head (dropout, fc 64→7) lives in the parent module.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, ConvShape};
use super::params::{ParamStore, Tensor};
use crate::error::Result;
use crate::face::FACE_SIZE;

pub const FEATURES: usize = 64;

pub const CONV1: ConvShape = ConvShape {
    in_channels: 1,
    out_channels: 8,
    in_h: FACE_SIZE,
    in_w: FACE_SIZE,
    kernel: 7,
    stride: 4,
    pad: 3,
};

pub const CONV2: ConvShape = ConvShape {
    in_channels: 8,
    out_channels: 16,
    in_h: 32,
    in_w: 32,
    kernel: 5,
    stride: 1,
    pad: 2,
};

const FLAT: usize = 16 * 16 * 16;

pub const PARAM_NAMES: [&str; 6] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
];

pub fn shapes() -> [(&'static str, Vec<usize>); 6] {
    [
        ("conv1.weight", vec![8, 1, 7, 7]),
        ("conv1.bias", vec![8]),
        ("conv2.weight", vec![16, 8, 5, 5]),
        ("conv2.bias", vec![16]),
        ("fc1.weight", vec![FEATURES, FLAT]),
        ("fc1.bias", vec![FEATURES]),
    ]
}

/// He-normal weights, zero biases.
pub fn init_params<R: Rng>(rng: &mut R) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, shape) in shapes() {
        let mut t = Tensor::zeros(name, &shape);
        if name.ends_with(".weight") {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            for v in &mut t.data {
                *v = normal.sample(rng);
            }
        }
        store.push(t)?;
    }
    Ok(store)
}

/// ReLU gates followed by the two layers of pooling winners.
pub type Signature = (Vec<bool>, Vec<usize>, Vec<usize>);

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    input: Vec<f64>,
    conv1: Vec<f64>,
    pool1: Vec<f64>,
    pool1_arg: Vec<usize>,
    conv2: Vec<f64>,
    pool2: Vec<f64>,
    pool2_arg: Vec<usize>,
    features: Vec<f64>,
}

impl Cache {
    /// ReLU on/off pattern and pooling winners; two passes with equal
    /// signatures are on the same linear piece of the network.
    pub fn signature(&self) -> Signature {
        let active = self
            .conv1
            .iter()
            .chain(&self.conv2)
            .chain(&self.features)
            .map(|v| *v > 0.0)
            .collect();
        (active, self.pool1_arg.clone(), self.pool2_arg.clone())
    }
}

pub fn forward(params: &ParamStore, input: Vec<f64>) -> (Vec<f64>, Cache) {
    let mut conv1 = layers::conv2d_forward(&CONV1, &input, params.data("conv1.weight"), params.data("conv1.bias"));
    layers::relu_inplace(&mut conv1);
    let (pool1, pool1_arg) = layers::maxpool2_forward(&conv1, 8, CONV1.out_h(), CONV1.out_w());
    let mut conv2 = layers::conv2d_forward(&CONV2, &pool1, params.data("conv2.weight"), params.data("conv2.bias"));
    layers::relu_inplace(&mut conv2);
    let (pool2, pool2_arg) = layers::maxpool2_forward(&conv2, 16, CONV2.out_h(), CONV2.out_w());
    let mut features = layers::linear_forward(params.data("fc1.weight"), params.data("fc1.bias"), &pool2);
    layers::relu_inplace(&mut features);
    let cache = Cache {
        input,
        conv1,
        pool1,
        pool1_arg,
        conv2,
        pool2,
        pool2_arg,
        features: features.clone(),
    };
    (features, cache)
}

/// Forward pass restricted to the linear piece recorded in `piece`: ReLU
/// gates and pooling winners are taken from `piece` instead of recomputed.
/// Agrees with [`forward`] wherever the activation pattern is unchanged.
pub fn forward_on_piece(params: &ParamStore, input: &[f64], piece: &Cache) -> Vec<f64> {
    let gate = |x: &mut [f64], pattern: &[f64]| {
        for (v, p) in x.iter_mut().zip(pattern) {
            if *p <= 0.0 {
                *v = 0.0;
            }
        }
    };
    let mut conv1 = layers::conv2d_forward(&CONV1, input, params.data("conv1.weight"), params.data("conv1.bias"));
    gate(&mut conv1, &piece.conv1);
    let pool1: Vec<f64> = piece.pool1_arg.iter().map(|&i| conv1[i]).collect();
    let mut conv2 = layers::conv2d_forward(&CONV2, &pool1, params.data("conv2.weight"), params.data("conv2.bias"));
    gate(&mut conv2, &piece.conv2);
    let pool2: Vec<f64> = piece.pool2_arg.iter().map(|&i| conv2[i]).collect();
    let mut features = layers::linear_forward(params.data("fc1.weight"), params.data("fc1.bias"), &pool2);
    gate(&mut features, &piece.features);
    features
}

/// Backpropagates `grad_features` (d loss / d features) into `grads`.
pub fn backward(params: &ParamStore, cache: &Cache, grad_features: &[f64], grads: &mut ParamStore) {
    let mut g = grad_features.to_vec();
    layers::relu_backward_inplace(&cache.features, &mut g);

    let (gw, gb) = grads.data_pair_mut("fc1.weight", "fc1.bias");
    let g_pool2 = layers::linear_backward(params.data("fc1.weight"), &cache.pool2, &g, gw, gb, true)
        .expect("input grad requested");

    let mut g_conv2 = layers::maxpool2_backward(&g_pool2, &cache.pool2_arg, cache.conv2.len());
    layers::relu_backward_inplace(&cache.conv2, &mut g_conv2);
    let (gw, gb) = grads.data_pair_mut("conv2.weight", "conv2.bias");
    let g_pool1 = layers::conv2d_backward(&CONV2, &cache.pool1, params.data("conv2.weight"), &g_conv2, gw, gb, true)
        .expect("input grad requested");

    let mut g_conv1 = layers::maxpool2_backward(&g_pool1, &cache.pool1_arg, cache.conv1.len());
    layers::relu_backward_inplace(&cache.conv1, &mut g_conv1);
    let (gw, gb) = grads.data_pair_mut("conv1.weight", "conv1.bias");
    layers::conv2d_backward(&CONV1, &cache.input, params.data("conv1.weight"), &g_conv1, gw, gb, false);
}
