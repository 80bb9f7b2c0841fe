//! The 7-way expression classifier: a backbone producing a feature vector,
//! then dropout and a fully connected layer to 7 logits, then softmax.

mod backbone;
mod layers;
mod model_file;
mod params;
mod reference;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

pub use backbone::{load_backbone, Backbone, BackboneHandle, FeatureTable, KNOWN_BACKBONES, PRECOMPUTED, REFERENCE};
pub use layers::ConvShape;
pub use model_file::MODEL_MAGIC;
pub use params::{ParamStore, Tensor};
pub use reference::{Cache as ReferenceCache, Signature, FEATURES as REFERENCE_FEATURES};

use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::face::FACE_SIZE;
use crate::image::GrayImage;
use crate::trainer::cross_entropy_loss;

pub type Logits = [f64; NUM_CLASSES];
pub type Probabilities = [f64; NUM_CLASSES];

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &Logits) -> Result<Probabilities> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index. The flag reports
/// whether a tie occurred.
pub fn argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            tie = false;
        } else if v == values[best] {
            tie = true;
        }
    }
    (best, tie)
}

/// One model input: the preprocessed face plus the key (file stem) used by
/// backbones that look features up instead of computing them.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub key: &'a str,
    pub image: &'a GrayImage,
}

pub enum Mode<'a> {
    Eval,
    /// Dropout active; masks drawn from the given generator in batch order.
    Train(&'a mut ChaCha8Rng),
}

struct ItemCache {
    backbone: Option<reference::Cache>,
    /// Per-feature dropout multiplier (0 or 1/(1-p)).
    mask: Vec<f64>,
    head_input: Vec<f64>,
}

/// Result of a forward pass; keeps activations when run in train mode.
pub struct ForwardPass {
    train: bool,
    items: Vec<ItemCache>,
    pub logits: Vec<Logits>,
}

impl ForwardPass {
    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Activation pattern of the reference backbone for each item.
    pub fn signatures(&self) -> Vec<Option<Signature>> {
        self.items
            .iter()
            .map(|c| {
                c.backbone.as_ref().map(|b| {
                    let (mut active, p1, p2) = b.signature();
                    active.extend(c.mask.iter().map(|m| *m > 0.0));
                    (active, p1, p2)
                })
            })
            .collect()
    }
}

pub struct BackwardResult {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Gradient of the mean loss for every parameter, aligned with
    /// `ClassifierModel::params`.
    pub grads: ParamStore,
    pub probabilities: Vec<Probabilities>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub backbone: Backbone,
    pub params: ParamStore,
    pub dropout_p: f64,
    /// Mean of `pixel/255` over the training set, subtracted from inputs.
    pub input_mean: f64,
    pub class_order: [Emotion; NUM_CLASSES],
    /// Free-form `key=value` echo of the configuration that produced the model.
    pub config: Vec<(String, String)>,
}

impl ClassifierModel {
    /// Attaches a freshly initialised (He-normal, seeded) head to `backbone`.
    pub fn new(handle: BackboneHandle, dropout_p: f64, seed: u64) -> Result<ClassifierModel> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::InvalidInput(format!("dropout_p must be in [0, 1), got {dropout_p}")));
        }
        let features = handle.backbone.feature_len();
        let mut params = handle.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6865_6164);
        let std = (2.0 / features as f64).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).expect("valid std");
        let mut w = Tensor::zeros(HEAD_WEIGHT, &[NUM_CLASSES, features]);
        for v in &mut w.data {
            *v = rand_distr::Distribution::sample(&normal, &mut rng);
        }
        params.push(w)?;
        params.push(Tensor::zeros(HEAD_BIAS, &[NUM_CLASSES]))?;
        Ok(ClassifierModel {
            backbone: handle.backbone,
            params,
            dropout_p,
            input_mean: 0.0,
            class_order: Emotion::ALL,
            config: Vec::new(),
        })
    }

    /// Reference backbone + head, everything seeded from `seed`.
    pub fn reference(seed: u64, dropout_p: f64) -> Result<ClassifierModel> {
        ClassifierModel::new(load_backbone(REFERENCE, None, seed)?, dropout_p, seed)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    pub fn zero_head(&mut self) {
        for name in [HEAD_WEIGHT, HEAD_BIAS] {
            self.params.data_mut(name).fill(0.0);
        }
    }

    /// Marks every tensor whose name starts with one of `prefixes` as
    /// non-trainable.
    pub fn freeze(&mut self, prefixes: &[&str]) {
        for t in self.params.iter_mut() {
            if prefixes.iter().any(|p| t.name.starts_with(p)) {
                t.trainable = false;
            }
        }
    }

    pub fn freeze_backbone(&mut self) {
        for t in self.params.iter_mut() {
            if !t.name.starts_with("head.") {
                t.trainable = false;
            }
        }
    }

    fn backbone_trainable(&self) -> bool {
        self.params
            .iter()
            .any(|t| t.trainable && !t.name.starts_with("head."))
    }

    fn normalise(&self, image: &GrayImage) -> Result<Vec<f64>> {
        if image.width() != FACE_SIZE || image.height() != FACE_SIZE {
            return Err(Error::ShapeMismatch {
                expected: format!("{FACE_SIZE}x{FACE_SIZE} input"),
                actual: format!("{}x{}", image.width(), image.height()),
            });
        }
        Ok(image
            .pixels()
            .iter()
            .map(|&p| p as f64 / 255.0 - self.input_mean)
            .collect())
    }

    fn features(&self, ex: &Example, keep_cache: bool) -> Result<(Vec<f64>, Option<reference::Cache>)> {
        match &self.backbone {
            Backbone::Reference => {
                let (f, cache) = reference::forward(&self.params, self.normalise(ex.image)?);
                Ok((f, keep_cache.then_some(cache)))
            }
            Backbone::Precomputed(table) => Ok((table.get(ex.key)?.to_vec(), None)),
        }
    }

    pub fn forward(&self, batch: &[Example], mode: Mode) -> Result<ForwardPass> {
        let features = self.backbone.feature_len();
        let (train, masks) = match mode {
            Mode::Eval => (false, vec![vec![1.0; features]; batch.len()]),
            Mode::Train(rng) => {
                let keep = 1.0 / (1.0 - self.dropout_p);
                let masks = (0..batch.len())
                    .map(|_| {
                        (0..features)
                            .map(|_| if rng.random::<f64>() < self.dropout_p { 0.0 } else { keep })
                            .collect()
                    })
                    .collect();
                (true, masks)
            }
        };
        let head_w = self.params.data(HEAD_WEIGHT);
        let head_b = self.params.data(HEAD_BIAS);
        let items: Vec<(ItemCache, Logits)> = batch
            .par_iter()
            .zip(masks)
            .map(|(ex, mask)| {
                let (f, cache) = self.features(ex, train)?;
                let head_input: Vec<f64> = f.iter().zip(&mask).map(|(a, m)| a * m).collect();
                let out = layers::linear_forward(head_w, head_b, &head_input);
                let mut logits = [0.0; NUM_CLASSES];
                logits.copy_from_slice(&out);
                Ok((
                    ItemCache {
                        backbone: cache,
                        mask,
                        head_input,
                    },
                    logits,
                ))
            })
            .collect::<Result<_>>()?;
        let (items, logits): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        Ok(ForwardPass {
            train,
            items: if train { items } else { Vec::new() },
            logits,
        })
    }

    /// Logits for `batch` on the linear piece of `around`, a train-mode pass
    /// over the same examples: its ReLU gates, pooling winners and dropout
    /// masks are reused. Gives exact finite differences of the function the
    /// analytic gradient differentiates, even across activation kinks.
    pub fn forward_on_piece(&self, batch: &[Example], around: &ForwardPass) -> Result<Vec<Logits>> {
        if !around.train || around.items.len() != batch.len() {
            return Err(Error::InvalidInput(
                "forward_on_piece needs a train-mode pass over the same batch".into(),
            ));
        }
        let head_w = self.params.data(HEAD_WEIGHT);
        let head_b = self.params.data(HEAD_BIAS);
        batch
            .par_iter()
            .zip(&around.items)
            .map(|(ex, item)| {
                let f = match (&self.backbone, &item.backbone) {
                    (Backbone::Reference, Some(piece)) => {
                        reference::forward_on_piece(&self.params, &self.normalise(ex.image)?, piece)
                    }
                    _ => self.features(ex, false)?.0,
                };
                let head_input: Vec<f64> = f.iter().zip(&item.mask).map(|(a, m)| a * m).collect();
                let mut logits = [0.0; NUM_CLASSES];
                logits.copy_from_slice(&layers::linear_forward(head_w, head_b, &head_input));
                Ok(logits)
            })
            .collect()
    }

    /// Eval-mode logits, computed in chunks to bound memory.
    pub fn predict(&self, batch: &[Example]) -> Result<Vec<Logits>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(64) {
            out.extend(self.forward(chunk, Mode::Eval)?.logits);
        }
        Ok(out)
    }

    /// Mean cross-entropy and its gradient for a train-mode pass.
    pub fn backward(&self, pass: &ForwardPass, labels: &[Emotion]) -> Result<BackwardResult> {
        if !pass.train {
            return Err(Error::InvalidInput(
                "backward needs a forward pass run in train mode".into(),
            ));
        }
        if labels.len() != pass.logits.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", pass.logits.len()),
                actual: format!("{}", labels.len()),
            });
        }
        let n = labels.len() as f64;
        let backbone_grads = self.backbone_trainable() && self.backbone.supports_gradients();
        let head_w = self.params.data(HEAD_WEIGHT);
        let per_item: Vec<(f64, ParamStore, Probabilities)> = pass
            .items
            .par_iter()
            .zip(&pass.logits)
            .zip(labels)
            .map(|((item, logits), &label)| {
                let probs = softmax(logits)?;
                let loss = cross_entropy_loss(&probs, label);
                let mut grad_logits = probs;
                grad_logits[label.index()] -= 1.0;
                for g in &mut grad_logits {
                    *g /= n;
                }
                let mut grads = self.params.zeros_like();
                let (gw, gb) = grads.data_pair_mut(HEAD_WEIGHT, HEAD_BIAS);
                let grad_in = layers::linear_backward(
                    head_w,
                    &item.head_input,
                    &grad_logits,
                    gw,
                    gb,
                    backbone_grads,
                );
                if let (Some(grad_in), Some(cache)) = (grad_in, item.backbone.as_ref()) {
                    let grad_features: Vec<f64> =
                        grad_in.iter().zip(&item.mask).map(|(g, m)| g * m).collect();
                    reference::backward(&self.params, cache, &grad_features, &mut grads);
                }
                Ok((loss, grads, probs))
            })
            .collect::<Result<_>>()?;

        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        let mut probabilities = Vec::with_capacity(per_item.len());
        for (l, g, p) in &per_item {
            loss += l;
            grads.add_scaled(g, 1.0);
            probabilities.push(*p);
        }
        Ok(BackwardResult {
            loss: loss / n,
            grads,
            probabilities,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.3; 7]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
        let p = softmax(&[1000.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 + 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        let p = softmax(&[2f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!(softmax(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), (1, true));
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), (1, false));
        assert_eq!(argmax(&[2.0, 2.0]), (0, true));
    }

    #[test]
    fn reference_parameter_count_is_stable() {
        let m = ClassifierModel::reference(0, 0.5).unwrap();
        // conv1 8·49+8, conv2 16·8·25+16, fc1 4096·64+64, head 64·7+7
        assert_eq!(m.parameter_count(), 400 + 3216 + 262_208 + 455);
        let names: Vec<_> = m.params.iter().map(|t| t.name.clone()).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut m = ClassifierModel::reference(1, 0.5).unwrap();
        m.zero_head();
        let img = GrayImage::filled(FACE_SIZE, FACE_SIZE, 0);
        let logits = m.predict(&[Example { key: "z", image: &img }]).unwrap();
        let p = softmax(&logits[0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn eval_mode_is_repeatable_and_backward_rejects_it() {
        let m = ClassifierModel::reference(2, 0.5).unwrap();
        let img = GrayImage::from_fn(FACE_SIZE, FACE_SIZE, |x, y| ((x * y) % 251) as u8);
        let batch = [Example { key: "a", image: &img }, Example { key: "a", image: &img }];
        let a = m.forward(&batch, Mode::Eval).unwrap();
        let b = m.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.logits[0], a.logits[1]);
        assert!(m.backward(&a, &[Emotion::Sad, Emotion::Sad]).is_err());
    }

    #[test]
    fn seeded_dropout_is_repeatable() {
        let m = ClassifierModel::reference(3, 0.5).unwrap();
        let img = GrayImage::from_fn(FACE_SIZE, FACE_SIZE, |x, y| ((x + 3 * y) % 256) as u8);
        let batch = [Example { key: "a", image: &img }; 3];
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            m.forward(&batch, Mode::Train(&mut rng)).unwrap().logits
        };
        assert_eq!(run(), run());
        let eval = m.forward(&batch, Mode::Eval).unwrap().logits;
        assert_ne!(run()[0], eval[0]);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let m = ClassifierModel::reference(0, 0.5).unwrap();
        let img = GrayImage::filled(128, 128, 3);
        assert!(matches!(
            m.predict(&[Example { key: "x", image: &img }]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn logit_gradient_is_probabilities_minus_one_hot() {
        let m = ClassifierModel::reference(4, 0.0).unwrap();
        let img = GrayImage::from_fn(FACE_SIZE, FACE_SIZE, |x, y| ((x ^ y) % 256) as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = m.forward(&[Example { key: "a", image: &img }], Mode::Train(&mut rng)).unwrap();
        let label = Emotion::Fearful;
        let out = m.backward(&pass, &[label]).unwrap();
        let p = softmax(&pass.logits[0]).unwrap();
        // head bias gradient == d loss / d logits
        let gb = &out.grads.get(HEAD_BIAS).unwrap().data;
        for i in 0..NUM_CLASSES {
            let expect = p[i] - if i == label.index() { 1.0 } else { 0.0 };
            assert!((gb[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut m = ClassifierModel::reference(5, 0.0).unwrap();
        m.zero_head();
        m.params.data_mut(HEAD_BIAS)[Emotion::Happy.index()] = 60.0;
        let img = GrayImage::filled(FACE_SIZE, FACE_SIZE, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = m.forward(&[Example { key: "a", image: &img }], Mode::Train(&mut rng)).unwrap();
        let out = m.backward(&pass, &[Emotion::Happy]).unwrap();
        assert!(out.loss < 1e-20);
        assert!(out.grads.get(HEAD_BIAS).unwrap().data.iter().all(|g| g.abs() < 1e-20));
    }

    #[test]
    fn linear_piece_matches_forward_at_the_same_point() {
        let mut m = ClassifierModel::reference(6, 0.5).unwrap();
        let img = GrayImage::from_fn(FACE_SIZE, FACE_SIZE, |x, y| ((x * 3 + y * 5) % 256) as u8);
        let batch = [Example { key: "a", image: &img }];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pass = m.forward(&batch, Mode::Train(&mut rng)).unwrap();
        assert_eq!(m.forward_on_piece(&batch, &pass).unwrap(), pass.logits);
        // shifting every conv1 bias moves the pattern, the piece stays linear
        for b in m.params.data_mut("conv1.bias") {
            *b += 0.5;
        }
        let moved = m.forward_on_piece(&batch, &pass).unwrap();
        assert_ne!(moved, pass.logits);
        let eval = m.forward(&batch, Mode::Eval).unwrap();
        assert!(m.forward_on_piece(&batch, &eval).is_err());
    }
}
