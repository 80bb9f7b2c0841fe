//! Backbone adapters: anything that turns an image into a fixed-length
//! feature vector for the 7-way head.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::reference;
use crate::error::{Error, Result};

pub const REFERENCE: &str = "reference";
pub const PRECOMPUTED: &str = "precomputed-features";
pub const KNOWN_BACKBONES: [&str; 2] = [REFERENCE, PRECOMPUTED];

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    /// The in-repo convolutional stack, trainable end to end.
    Reference,
    /// Features extracted offline by an external network (frozen).
    Precomputed(FeatureTable),
}

impl Backbone {
    pub fn id(&self) -> &'static str {
        match self {
            Backbone::Reference => REFERENCE,
            Backbone::Precomputed(_) => PRECOMPUTED,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            Backbone::Reference => reference::FEATURES,
            Backbone::Precomputed(t) => t.dim,
        }
    }

    pub fn supports_gradients(&self) -> bool {
        matches!(self, Backbone::Reference)
    }
}

/// Feature vectors keyed by image file stem, read from a headerless CSV:
/// `key,f0,f1,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub path: PathBuf,
    pub dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn load(path: &Path) -> Result<FeatureTable> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
        let mut rows = HashMap::new();
        let mut dim = None;
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let key = record.get(0).ok_or_else(|| bad("empty row".into()))?.to_string();
            let values: Vec<f64> = record
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(bad(format!("expected {d} features, found {}", values.len())))
                }
                _ => {}
            }
            rows.insert(key, values);
        }
        let dim = dim.filter(|d| *d > 0).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "feature table is empty".into(),
        })?;
        Ok(FeatureTable {
            path: path.to_path_buf(),
            dim,
            rows,
        })
    }

    pub fn get(&self, key: &str) -> Result<&[f64]> {
        self.rows.get(key).map(Vec::as_slice).ok_or_else(|| Error::Backend {
            backend: PRECOMPUTED.into(),
            message: format!("no features for `{key}` in {}", self.path.display()),
        })
    }
}

/// A loaded backbone and its parameters (empty for frozen external ones).
#[derive(Debug, Clone)]
pub struct BackboneHandle {
    pub backbone: Backbone,
    pub params: ParamStore,
}

/// Resolves a backbone adapter.
///
/// * `reference` without weights: fresh He-normal init from `seed`.
/// * `reference` with weights: the backbone tensors of a saved model file.
/// * `precomputed-features`: the feature CSV at `weights`.
///
/// Weights are never downloaded.
pub fn load_backbone(id: &str, weights: Option<&Path>, seed: u64) -> Result<BackboneHandle> {
    match id {
        REFERENCE => match weights {
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(BackboneHandle {
                    backbone: Backbone::Reference,
                    params: reference::init_params(&mut rng)?,
                })
            }
            Some(path) => {
                if !path.exists() {
                    return Err(Error::MissingWeights {
                        path: path.to_path_buf(),
                        hint: "pass a model file written by `fer train`, or omit the weights \
                               to start from a seeded random initialisation"
                            .into(),
                    });
                }
                let model = super::ClassifierModel::load(path)?;
                if model.backbone != Backbone::Reference {
                    return Err(Error::ModelFormat(format!(
                        "{} holds a `{}` backbone, not `reference`",
                        path.display(),
                        model.backbone.id()
                    )));
                }
                let mut params = ParamStore::new();
                for name in reference::PARAM_NAMES {
                    let mut t = model.params.get(name).cloned().ok_or_else(|| {
                        Error::ModelFormat(format!("{} lacks tensor {name}", path.display()))
                    })?;
                    t.trainable = true;
                    params.push(t)?;
                }
                Ok(BackboneHandle {
                    backbone: Backbone::Reference,
                    params,
                })
            }
        },
        PRECOMPUTED => {
            let path = weights.ok_or_else(|| Error::MissingWeights {
                path: PathBuf::new(),
                hint: "the precomputed-features backbone needs a feature CSV (key,f0,f1,...)".into(),
            })?;
            if !path.exists() {
                return Err(Error::MissingWeights {
                    path: path.to_path_buf(),
                    hint: "extract features for every image with the pretrained network and \
                           write them as `key,f0,f1,...` rows keyed by image file stem"
                        .into(),
                });
            }
            Ok(BackboneHandle {
                backbone: Backbone::Precomputed(FeatureTable::load(path)?),
                params: ParamStore::new(),
            })
        }
        other => Err(Error::UnknownBackend {
            kind: "backbone adapter",
            id: other.into(),
            known: KNOWN_BACKBONES.iter().map(|s| s.to_string()).collect(),
        }),
    }
}
