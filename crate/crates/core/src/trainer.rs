//! Mini-batch SGD with momentum and a linear learning-rate decay.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{self, load_backbone, ClassifierModel, Example, Mode, ParamStore, REFERENCE};
use crate::dataset::InputVariant;
use crate::emotion::Emotion;
use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrDecay {
    Linear,
    None,
}

impl LrDecay {
    pub fn as_str(self) -> &'static str {
        match self {
            LrDecay::Linear => "linear",
            LrDecay::None => "none",
        }
    }
}

impl FromStr for LrDecay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LrDecay::Linear),
            "none" => Ok(LrDecay::None),
            other => Err(Error::InvalidInput(format!("unknown lr_decay `{other}` (linear|none)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub epochs: usize,
    pub lr_decay: LrDecay,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
    pub seed: u64,
    pub input_variant: InputVariant,
    pub backbone: String,
    pub backbone_weights: Option<PathBuf>,
    pub freeze_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            epochs: 100,
            lr_decay: LrDecay::Linear,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 0.0,
            dropout_p: 0.5,
            seed: 0,
            input_variant: InputVariant::Plain,
            backbone: REFERENCE.to_string(),
            backbone_weights: None,
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order; the config file format.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("base_lr", self.base_lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_decay", self.lr_decay.as_str().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("seed", self.seed.to_string()),
            ("input_variant", self.input_variant.as_str().to_string()),
            ("backbone", self.backbone.clone()),
            ("freeze_backbone", self.freeze_backbone.to_string()),
        ];
        if let Some(w) = &self.backbone_weights {
            v.push(("backbone_weights", w.display().to_string()));
        }
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "base_lr" => self.base_lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_decay" => self.lr_decay = value.parse()?,
            "batch_size" => self.batch_size = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "dropout_p" => self.dropout_p = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "input_variant" => self.input_variant = value.parse()?,
            "backbone" => self.backbone = value.to_string(),
            "backbone_weights" => {
                self.backbone_weights = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            "freeze_backbone" => self.freeze_backbone = num(key, value)?,
            other => return Err(Error::InvalidInput(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file; `#` starts a comment. Keys not in
    /// the file keep their defaults.
    pub fn parse_text(text: &str, source: &Path) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: source.to_path_buf(),
                line: (i + 1) as u64,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got `{line}`")))?;
            config
                .set(k.trim(), v.trim())
                .map_err(|e| parse_err(e.to_string()))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse_text(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    /// Fresh model for this configuration (backbone, head, freezing).
    pub fn build_model(&self) -> Result<ClassifierModel> {
        let handle = load_backbone(&self.backbone, self.backbone_weights.as_deref(), self.seed)?;
        let mut model = ClassifierModel::new(handle, self.dropout_p, self.seed)?;
        if self.freeze_backbone {
            model.freeze_backbone();
        }
        Ok(model)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based).
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidInput(format!(
            "epoch {epoch} outside schedule of {} epochs",
            config.epochs
        )));
    }
    Ok(match config.lr_decay {
        LrDecay::Linear => config.base_lr * (1.0 - epoch as f64 / config.epochs as f64),
        LrDecay::None => config.base_lr,
    })
}

/// `-ln p[label]`, with `p` floored at 1e-12.
pub fn cross_entropy_loss(probabilities: &[f64], label: Emotion) -> f64 {
    -probabilities[label.index()].max(1e-12).ln()
}

/// A decoded, preprocessed training or evaluation image.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub key: String,
    pub image: GrayImage,
    pub label: Emotion,
}

impl LabeledImage {
    pub fn example(&self) -> Example<'_> {
        Example {
            key: &self.key,
            image: &self.image,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `None` when training without a validation split.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,lr,train_loss,val_loss,val_acc,seconds";

pub fn write_epoch_csv<W: Write>(records: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{EPOCH_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.epoch,
            r.lr,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_acc),
            r.seconds
        )?;
    }
    Ok(())
}

pub fn save_epoch_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_epoch_csv(records, &mut buf).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_epoch_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<Option<f64>> {
            let v = row.get(i).unwrap_or("").trim();
            if v.is_empty() {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("bad number `{v}` in column {i}"),
            })
        };
        let required = |i: usize| -> Result<f64> {
            field(i)?.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column {i} is empty"),
            })
        };
        records.push(EpochRecord {
            epoch: required(0)? as usize,
            lr: required(1)?,
            train_loss: required(2)?,
            val_loss: field(3)?,
            val_acc: field(4)?,
            seconds: required(5)?,
        });
    }
    Ok(records)
}

pub struct TrainOutcome {
    pub final_model: ClassifierModel,
    /// Highest validation accuracy (earliest epoch on ties); the final model
    /// when there is no validation split.
    pub best_model: ClassifierModel,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
    pub steps: usize,
}

/// Mean of `pixel/255` over a set of images.
pub fn pixel_mean(images: &[LabeledImage]) -> f64 {
    let mut total = 0u64;
    let mut count = 0u64;
    for item in images {
        total += item.image.pixels().iter().map(|&p| p as u64).sum::<u64>();
        count += item.image.pixels().len() as u64;
    }
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64 / 255.0
    }
}

/// Mean loss and accuracy of `model` (eval mode) over `images`.
pub fn loss_and_accuracy(model: &ClassifierModel, images: &[LabeledImage]) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no images to score".into()));
    }
    let examples: Vec<Example> = images.iter().map(LabeledImage::example).collect();
    let logits = model.predict(&examples)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (l, item) in logits.iter().zip(images) {
        let p = classifier::softmax(l)?;
        loss += cross_entropy_loss(&p, item.label);
        if classifier::argmax(l).0 == item.label.index() {
            correct += 1;
        }
    }
    Ok((loss / images.len() as f64, correct as f64 / images.len() as f64))
}

/// Runs `epochs · ⌈|train|/batch_size⌉` momentum
/// SGD steps, reshuffling the training set every epoch from `config.seed`.
///
/// Sets `model.input_mean` from the training images before the first step.
pub fn train(
    mut model: ClassifierModel,
    train_set: &[LabeledImage],
    val_set: &[LabeledImage],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    model.input_mean = pixel_mean(train_set);
    model.dropout_p = config.dropout_p;
    model.config = config.to_pairs();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: ParamStore = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ClassifierModel)> = None;
    let mut steps = 0;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_schedule(config, epoch)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<Example> = chunk.iter().map(|&i| train_set[i].example()).collect();
            let labels: Vec<Emotion> = chunk.iter().map(|&i| train_set[i].label).collect();
            let pass = model.forward(&examples, Mode::Train(&mut rng))?;
            if pass.logits.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_index, lr, loss: f64::NAN });
            }
            let result = model.backward(&pass, &labels)?;
            if !result.loss.is_finite() || !result.grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    lr,
                    loss: result.loss,
                });
            }
            sgd_step(&mut model.params, &mut velocity, &result.grads, lr, config);
            loss_sum += result.loss * chunk.len() as f64;
            steps += 1;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&model, val_set)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: lr {lr:.6} train_loss {train_loss:.4} val_loss {} val_acc {}",
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_acc.map_or("-".into(), |v| format!("{v:.4}")),
        );
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                debug!("new best validation accuracy {acc:.4} at epoch {epoch}");
                best = Some((acc, epoch, model.clone()));
            }
        }
        records.push(record);
    }

    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (config.epochs - 1, model.clone()),
    };
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        records,
        steps,
    })
}

/// `v ← μ·v − lr·(g + λ·w)`, `w ← w + v` for trainable tensors.
fn sgd_step(params: &mut ParamStore, velocity: &mut ParamStore, grads: &ParamStore, lr: f64, config: &TrainConfig) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads.iter()) {
        if !p.trainable {
            continue;
        }
        for ((w, vel), grad) in p.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
            *vel = config.momentum * *vel - lr * (grad + config.weight_decay * *w);
            *w += *vel;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::FACE_SIZE;

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(&c, 0).unwrap(), 0.01);
        assert!((lr_schedule(&c, 50).unwrap() - 0.005).abs() < 1e-15);
        assert!((lr_schedule(&c, 99).unwrap() - 0.0001).abs() < 1e-15);
        assert!(lr_schedule(&c, 100).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..100 {
            let lr = lr_schedule(&c, e).unwrap();
            assert!(lr < prev);
            prev = lr;
        }
        let flat = TrainConfig {
            lr_decay: LrDecay::None,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(&flat, 99).unwrap(), 0.01);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = [1.0 / 7.0; 7];
        assert!((cross_entropy_loss(&uniform, Emotion::Sad) - 7f64.ln()).abs() < 1e-12);
        let mut p = [0.0; 7];
        p[3] = 1.0;
        assert_eq!(cross_entropy_loss(&p, Emotion::Happy), 0.0);
        assert!((cross_entropy_loss(&p, Emotion::Angry) - 1e12f64.ln()).abs() < 1e-9);
        let mut q = [0.125; 7];
        q[0] = 0.25;
        assert!((cross_entropy_loss(&q, Emotion::Angry) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn config_file_round_trip() {
        let c = TrainConfig {
            base_lr: 0.02,
            epochs: 7,
            lr_decay: LrDecay::None,
            seed: 42,
            input_variant: InputVariant::SaliencyProduct,
            freeze_backbone: true,
            ..TrainConfig::default()
        };
        let back = TrainConfig::parse_text(&c.to_string(), Path::new("c.txt")).unwrap();
        assert_eq!(back, c);
        let partial = TrainConfig::parse_text("# comment\nepochs = 3\n\n", Path::new("c.txt")).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.base_lr, 0.01);
        let err = TrainConfig::parse_text("epochs=3\nlearning=1\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(TrainConfig::parse_text("batch_size=0", Path::new("c.txt")).is_err());
        assert!(TrainConfig::parse_text("base_lr=-1", Path::new("c.txt")).is_err());
    }

    #[test]
    fn epoch_csv_round_trip() {
        let records = vec![
            EpochRecord { epoch: 0, lr: 0.01, train_loss: 1.9, val_loss: Some(1.8), val_acc: Some(0.25), seconds: 1.5 },
            EpochRecord { epoch: 1, lr: 0.005, train_loss: 1.2, val_loss: None, val_acc: None, seconds: 1.25 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        save_epoch_csv(&records, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,val_loss,val_acc,seconds\n"));
        assert_eq!(load_epoch_csv(&p).unwrap(), records);
    }

    fn tiny_set(n: usize) -> Vec<LabeledImage> {
        (0..n)
            .map(|i| LabeledImage {
                key: format!("img{i}"),
                image: GrayImage::from_fn(FACE_SIZE, FACE_SIZE, |x, y| ((x * (i + 1) + y * 3) % 256) as u8),
                label: Emotion::from_index(i % 7).unwrap(),
            })
            .collect()
    }

    #[test]
    fn one_epoch_one_batch_is_one_step() {
        let set = tiny_set(3);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let model = config.build_model().unwrap();
        let before = model.params.clone();
        let out = train(model, &set, &[], &config).unwrap();
        assert_eq!(out.steps, 1);
        assert_eq!(out.records.len(), 1);
        assert_ne!(out.final_model.params, before);
        assert!(out.records[0].val_acc.is_none());
        assert!(train(config.build_model().unwrap(), &[], &[], &config).is_err());
    }

    #[test]
    fn frozen_backbone_only_moves_head() {
        let set = tiny_set(2);
        let config = TrainConfig {
            epochs: 1,
            freeze_backbone: true,
            ..TrainConfig::default()
        };
        let model = config.build_model().unwrap();
        let before = model.params.clone();
        let out = train(model, &set, &[], &config).unwrap();
        for (a, b) in before.iter().zip(out.final_model.params.iter()) {
            if a.name.starts_with("head.") {
                assert_ne!(a.data, b.data, "{}", a.name);
            } else {
                assert_eq!(a.data, b.data, "{}", a.name);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let set = tiny_set(2);
        let config = TrainConfig {
            epochs: 3,
            base_lr: 1e300,
            lr_decay: LrDecay::None,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let err = train(config.build_model().unwrap(), &set, &[], &config).err().unwrap();
        assert_eq!(err.category(), "training");
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }
}
