//! Cross-dataset experiment presets.
//!
//! | id | train on                      | test on          | input            |
//! |----|-------------------------------|------------------|------------------|
//! | E1 | CFEE, 1127/245/238 by image   | CFEE test split  | plain            |
//! | E2 | RaFD, 987/210/210 by subject  | RaFD test split  | plain            |
//! | E3 | all of CFEE                   | all of RaFD      | plain            |
//! | E4 | all of CFEE                   | all of RaFD      | saliency product |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use super::{overall_accuracy, render_reports, summary_text, write_summary, ConfusionMatrix, Percent, ReportFiles};
use crate::dataset::{
    make_split, save_manifest, scan_dataset, DatasetLayout, ImageSample, InputVariant, SplitManifest, SplitPolicy,
    SplitSizes,
};
use crate::error::{Error, Result};
use crate::face::{DetectorRegistry, NoFacePolicy, SYNTHETIC, VIOLA_JONES};
use crate::pipeline::{load_labeled, preprocess_manifest, product_dirs, saliency_manifest};
use crate::saliency::parse_backend;
use crate::synthetic::is_synthetic;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentPreset {
    E1,
    E2,
    E3,
    E4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainSource {
    /// Train, validate and test on splits of one dataset. `counts` are the
    /// published split sizes for `expected_total` images; other dataset
    /// sizes get the same proportions.
    Split {
        layout: DatasetLayout,
        policy: SplitPolicy,
        counts: [usize; 3],
        expected_total: usize,
    },
    /// Train on every image of one dataset and test on another.
    Full { train: DatasetLayout, test: DatasetLayout },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSet {
    SameDataset,
    Other(DatasetLayout),
}

impl ExperimentPreset {
    pub const ALL: [ExperimentPreset; 4] = [
        ExperimentPreset::E1,
        ExperimentPreset::E2,
        ExperimentPreset::E3,
        ExperimentPreset::E4,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ExperimentPreset::E1 => "E1",
            ExperimentPreset::E2 => "E2",
            ExperimentPreset::E3 => "E3",
            ExperimentPreset::E4 => "E4",
        }
    }

    pub fn source(self) -> TrainSource {
        match self {
            ExperimentPreset::E1 => TrainSource::Split {
                layout: DatasetLayout::Cfee,
                policy: SplitPolicy::ByImage,
                counts: [1127, 245, 238],
                expected_total: 1610,
            },
            ExperimentPreset::E2 => TrainSource::Split {
                layout: DatasetLayout::Rafd,
                policy: SplitPolicy::BySubject,
                counts: [987, 210, 210],
                expected_total: 1407,
            },
            ExperimentPreset::E3 | ExperimentPreset::E4 => TrainSource::Full {
                train: DatasetLayout::Cfee,
                test: DatasetLayout::Rafd,
            },
        }
    }

    pub fn variant(self) -> InputVariant {
        match self {
            ExperimentPreset::E4 => InputVariant::SaliencyProduct,
            _ => InputVariant::Plain,
        }
    }

    /// Published test accuracy for the real datasets.
    pub fn reference_accuracy(self) -> Percent {
        Percent(match self {
            ExperimentPreset::E1 => 7479,
            ExperimentPreset::E2 => 9571,
            ExperimentPreset::E3 => 7719,
            ExperimentPreset::E4 => 6539,
        })
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentPreset::E1 => "train and test on CFEE (1127/245/238 split by image)",
            ExperimentPreset::E2 => "train and test on RaFD (987/210/210 split by subject)",
            ExperimentPreset::E3 => "train on all of CFEE, test on all of RaFD",
            ExperimentPreset::E4 => "train on CFEE saliency products, test on RaFD saliency products",
        }
    }

    fn layouts(self) -> Vec<DatasetLayout> {
        match self.source() {
            TrainSource::Split { layout, .. } => vec![layout],
            TrainSource::Full { train, test } => vec![train, test],
        }
    }

    /// Split sizes for a dataset of `n` images.
    pub fn split_sizes(self, n: usize) -> Option<SplitSizes> {
        match self.source() {
            TrainSource::Split {
                counts, expected_total, ..
            } => Some(if n == expected_total {
                SplitSizes::Counts(counts)
            } else {
                SplitSizes::Ratios(SplitSizes::Counts(counts).ratios())
            }),
            TrainSource::Full { .. } => None,
        }
    }
}

impl fmt::Display for ExperimentPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExperimentPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentPreset::ALL
            .into_iter()
            .find(|p| p.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownBackend {
                kind: "experiment preset",
                id: s.to_string(),
                known: ExperimentPreset::ALL.iter().map(|p| p.id().to_string()).collect(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    /// Generated fixture data; no comparison with published numbers.
    Synthetic,
    Real,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Real => "real",
        }
    }
}

/// Inputs and knobs of an experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentPaths {
    pub cfee_root: Option<PathBuf>,
    pub rafd_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Face detector id; `None` picks `synthetic` for fixture data and
    /// `viola-jones` otherwise.
    pub detector: Option<String>,
    pub cascade: Option<PathBuf>,
    pub on_no_face: NoFacePolicy,
    pub saliency_backend: String,
    pub saliency_endpoint: Option<PathBuf>,
}

impl ExperimentPaths {
    pub fn new(out_dir: &Path) -> Self {
        ExperimentPaths {
            cfee_root: None,
            rafd_root: None,
            out_dir: out_dir.to_path_buf(),
            detector: None,
            cascade: None,
            on_no_face: NoFacePolicy::Skip,
            saliency_backend: "spectral".into(),
            saliency_endpoint: None,
        }
    }

    fn root(&self, layout: DatasetLayout) -> Option<&Path> {
        match layout {
            DatasetLayout::Cfee => self.cfee_root.as_deref(),
            DatasetLayout::Rafd => self.rafd_root.as_deref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub preset: ExperimentPreset,
    pub provenance: Provenance,
    pub matrix: ConfusionMatrix,
    pub accuracy: Percent,
    pub files: ReportFiles,
    pub summary: String,
    pub best_epoch: usize,
}

fn preset_inputs(preset: ExperimentPreset, paths: &ExperimentPaths) -> Result<Vec<(DatasetLayout, PathBuf)>> {
    let mut missing = Vec::new();
    let mut found = Vec::new();
    for layout in preset.layouts() {
        match paths.root(layout) {
            Some(root) if root.is_dir() => found.push((layout, root.to_path_buf())),
            Some(root) => missing.push(format!("--{}-root {} does not exist", layout.id(), root.display())),
            None => missing.push(format!("--{}-root is required", layout.id())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "preset {preset} ({}) is missing its input: {}",
            preset.description(),
            missing.join("; ")
        )));
    }
    Ok(found)
}

fn prepare_manifest(preset: ExperimentPreset, roots: &[(DatasetLayout, PathBuf)], seed: u64) -> Result<SplitManifest> {
    let scan = |layout: DatasetLayout| -> Result<Vec<ImageSample>> {
        let root = &roots.iter().find(|(l, _)| *l == layout).expect("checked").1;
        let report = scan_dataset(root, layout)?;
        if report.samples.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no {} images found below {}",
                layout.id(),
                root.display()
            )));
        }
        info!("{}: {}", layout.id(), report.to_string().trim_end());
        Ok(report.samples)
    };
    match preset.source() {
        TrainSource::Split { layout, policy, .. } => {
            let samples = scan(layout)?;
            let sizes = preset.split_sizes(samples.len()).expect("split preset");
            make_split(&samples, sizes, policy, seed)
        }
        TrainSource::Full { train, test } => {
            let train_samples = scan(train)?;
            let test_samples = scan(test)?;
            Ok(SplitManifest {
                sizes: SplitSizes::Counts([train_samples.len(), 0, test_samples.len()]),
                train: train_samples,
                val: Vec::new(),
                test: test_samples,
                policy: SplitPolicy::FullTrain,
                seed,
                variant: None,
            })
        }
    }
}

/// Runs one preset end to end below `paths.out_dir`:
/// `manifest.csv`, `faces/`, optionally `saliency/` and `products/`, then
/// `model.fer`, `model_best.fer`, `train_config.txt` and the report files.
pub fn run_experiment(
    preset: ExperimentPreset,
    config: &TrainConfig,
    paths: &ExperimentPaths,
) -> Result<ExperimentReport> {
    let roots = preset_inputs(preset, paths)?;
    let provenance = if roots.iter().any(|(_, r)| is_synthetic(r)) {
        Provenance::Synthetic
    } else {
        Provenance::Real
    };
    let mut config = config.clone();
    config.input_variant = preset.variant();
    config.validate()?;
    let out = &paths.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let manifest = prepare_manifest(preset, &roots, config.seed)?;
    save_manifest(&manifest, &out.join("manifest.csv"))?;

    let detector_id = paths.detector.clone().unwrap_or_else(|| {
        if provenance == Provenance::Synthetic {
            SYNTHETIC.into()
        } else {
            VIOLA_JONES.into()
        }
    });
    let registry = DetectorRegistry::standard(paths.cascade.as_deref())?;
    let detector = registry.get(&detector_id)?;
    let faces_dir = out.join("faces");
    let mut prepared = preprocess_manifest(&manifest, detector, paths.on_no_face, &faces_dir)?.manifest;

    if preset.variant() == InputVariant::SaliencyProduct {
        let backend = parse_backend(&paths.saliency_backend, paths.saliency_endpoint.as_deref())?;
        let maps = out.join("saliency");
        saliency_manifest(&prepared, backend.as_ref(), &maps)?;
        let products = out.join("products");
        product_dirs(&faces_dir, &maps, &products, false)?;
        prepared = crate::dataset::load_manifest(&products.join(crate::pipeline::STAGE_MANIFEST))?.manifest;
    }

    let train_set = load_labeled(&prepared.train)?;
    let val_set = load_labeled(&prepared.val)?;
    let test_set = load_labeled(&prepared.test)?;
    if test_set.is_empty() {
        return Err(Error::InvalidInput(format!("preset {preset}: test set is empty")));
    }
    config.save(&out.join("train_config.txt"))?;
    let outcome = train(config.build_model()?, &train_set, &val_set, &config)?;
    outcome.final_model.save(&out.join("model.fer"))?;
    outcome.best_model.save(&out.join("model_best.fer"))?;

    let evaluation = super::evaluate(&outcome.best_model, &test_set)?;
    let files = render_reports(&evaluation.matrix, &outcome.records, out)?;
    let accuracy = overall_accuracy(&evaluation.matrix)?;

    let mut extra = vec![
        ("preset".to_string(), format!("{preset}: {}", preset.description())),
        ("provenance".to_string(), provenance.as_str().to_string()),
        ("input variant".to_string(), preset.variant().to_string()),
        ("train/val/test images".to_string(), format!("{}/{}/{}", train_set.len(), val_set.len(), test_set.len())),
        ("evaluated model".to_string(), format!("epoch {} (best validation)", outcome.best_epoch)),
        ("argmax ties".to_string(), evaluation.ties.to_string()),
    ];
    match provenance {
        Provenance::Real => {
            let reference = preset.reference_accuracy();
            let delta = accuracy.0 as i64 - reference.0 as i64;
            extra.push(("published accuracy".into(), format!("{reference}%")));
            extra.push((
                "delta vs published".into(),
                format!("{}{}.{:02} points", if delta < 0 { "-" } else { "+" }, delta.abs() / 100, delta.abs() % 100),
            ));
        }
        Provenance::Synthetic => {
            extra.push((
                "note".into(),
                "synthetic fixture data; accuracy is not comparable with published results".into(),
            ));
        }
    }
    let summary = summary_text(&format!("experiment {preset}"), &evaluation.matrix, &extra)?;
    write_summary(&out.join("summary.txt"), &summary)?;

    Ok(ExperimentReport {
        preset,
        provenance,
        matrix: evaluation.matrix,
        accuracy,
        files,
        summary,
        best_epoch: outcome.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_describe() {
        assert_eq!("e3".parse::<ExperimentPreset>().unwrap(), ExperimentPreset::E3);
        let err = "E9".parse::<ExperimentPreset>().unwrap_err();
        assert!(err.to_string().contains("E1, E2, E3, E4"));
        assert_eq!(ExperimentPreset::E4.variant(), InputVariant::SaliencyProduct);
        assert_eq!(ExperimentPreset::E3.reference_accuracy().to_string(), "77.19");
    }

    #[test]
    fn split_sizes_follow_dataset_size() {
        assert_eq!(ExperimentPreset::E1.split_sizes(1610), Some(SplitSizes::Counts([1127, 245, 238])));
        assert_eq!(ExperimentPreset::E2.split_sizes(1407), Some(SplitSizes::Counts([987, 210, 210])));
        let SplitSizes::Ratios(r) = ExperimentPreset::E1.split_sizes(70).unwrap() else { panic!() };
        assert!((r[0] - 0.7).abs() < 1e-12);
        assert_eq!(ExperimentPreset::E3.split_sizes(10), None);
    }

    #[test]
    fn missing_inputs_name_the_flag() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ExperimentPaths::new(dir.path());
        let err = run_experiment(ExperimentPreset::E3, &TrainConfig::default(), &paths).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("--cfee-root") && msg.contains("--rafd-root"), "{msg}");
        let mut paths = ExperimentPaths::new(dir.path());
        paths.rafd_root = Some(dir.path().join("absent"));
        let msg = run_experiment(ExperimentPreset::E2, &TrainConfig::default(), &paths)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("does not exist"), "{msg}");
    }
}
