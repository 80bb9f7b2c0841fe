//! Dataset discovery, split policies and split manifests.
//!
//! Two directory conventions are registered:
//!
//! * `cfee`: `<root>/<Expression>/<subject>_<anything>.{png,jpg,jpeg}`. The
//!   folder name is the label (noun or adjective form, any case); the subject
//!   id is the file stem up to the first `_`.
//! * `rafd`: RaFD file naming, anywhere below `<root>`:
//!   `Rafd090_<subject>_<ethnicity>_<gender>_<expression>_<gaze>.jpg`. Only the
//!   frontal camera (`090`) and the seven basic expressions are kept; gaze is
//!   one of `frontal`, `left`, `right`.

mod manifest;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};

pub use manifest::{load_manifest, save_manifest, write_manifest, LoadedManifest};
pub use split::{make_split, split_counts, Split, SplitManifest, SplitPolicy, SplitSizes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gaze {
    Front,
    Left,
    Right,
}

impl Gaze {
    pub fn as_str(self) -> &'static str {
        match self {
            Gaze::Front => "front",
            Gaze::Left => "left",
            Gaze::Right => "right",
        }
    }
}

impl FromStr for Gaze {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "front" | "frontal" => Ok(Gaze::Front),
            "left" => Ok(Gaze::Left),
            "right" => Ok(Gaze::Right),
            other => Err(Error::InvalidInput(format!("unknown gaze `{other}`"))),
        }
    }
}

/// Which image representation a manifest's paths point at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputVariant {
    Plain,
    SaliencyProduct,
}

impl InputVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            InputVariant::Plain => "plain",
            InputVariant::SaliencyProduct => "saliency_product",
        }
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(InputVariant::Plain),
            "saliency_product" | "saliency-product" => Ok(InputVariant::SaliencyProduct),
            other => Err(Error::InvalidInput(format!(
                "unknown input variant `{other}` (expected plain or saliency_product)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageSample {
    pub image_path: PathBuf,
    pub dataset_id: String,
    pub subject_id: String,
    pub emotion: Emotion,
    pub gaze: Option<Gaze>,
}

impl ImageSample {
    /// File stem used to key derived artifacts (crops, maps, products).
    pub fn stem(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    /// Location of this sample's derived artifact below `dir`:
    /// `<dir>/<dataset>/<Expression>/<stem>.png`.
    pub fn artifact_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.dataset_id)
            .join(self.emotion.name())
            .join(format!("{}.png", self.stem()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetLayout {
    Cfee,
    Rafd,
}

impl DatasetLayout {
    pub const KNOWN: [&'static str; 2] = ["cfee", "rafd"];

    pub fn id(self) -> &'static str {
        match self {
            DatasetLayout::Cfee => "cfee",
            DatasetLayout::Rafd => "rafd",
        }
    }

    /// Parses a path relative to the dataset root into its labels.
    pub fn parse(self, relative: &Path) -> std::result::Result<ParsedName, String> {
        let stem = relative
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| "non UTF-8 file name".to_string())?;
        match self {
            DatasetLayout::Cfee => {
                let folder = relative
                    .parent()
                    .and_then(|p| p.file_name())
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| "image is not inside an expression folder".to_string())?;
                let emotion = Emotion::parse_label(folder)
                    .ok_or_else(|| format!("folder `{folder}` is not a basic expression"))?;
                let (subject, _) = stem
                    .split_once('_')
                    .filter(|(s, _)| !s.is_empty())
                    .ok_or_else(|| format!("file name `{stem}` has no `<subject>_` prefix"))?;
                Ok(ParsedName {
                    subject_id: subject.to_string(),
                    emotion,
                    gaze: None,
                })
            }
            DatasetLayout::Rafd => {
                let parts: Vec<&str> = stem.split('_').collect();
                if parts.len() != 6 || !parts[0].to_ascii_lowercase().starts_with("rafd") {
                    return Err(format!("`{stem}` does not follow the RaFD naming scheme"));
                }
                let angle = &parts[0][4..];
                if angle != "090" {
                    return Err(format!("camera angle {angle} is not frontal"));
                }
                let emotion = Emotion::parse_label(parts[4])
                    .ok_or_else(|| format!("expression `{}` is not a basic expression", parts[4]))?;
                let gaze: Gaze = parts[5].parse().map_err(|e: Error| e.to_string())?;
                Ok(ParsedName {
                    subject_id: parts[1].to_string(),
                    emotion,
                    gaze: Some(gaze),
                })
            }
        }
    }
}

impl FromStr for DatasetLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cfee" => Ok(DatasetLayout::Cfee),
            "rafd" => Ok(DatasetLayout::Rafd),
            _ => Err(Error::UnknownBackend {
                kind: "dataset layout",
                id: s.to_string(),
                known: DatasetLayout::KNOWN.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedName {
    pub subject_id: String,
    pub emotion: Emotion,
    pub gaze: Option<Gaze>,
}

#[derive(Debug, Default)]
pub struct ScanReport {
    pub samples: Vec<ImageSample>,
    /// Files that looked like images but were skipped, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl ScanReport {
    pub fn per_class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.samples)
    }

    pub fn subject_count(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.subject_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

impl fmt::Display for ScanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} samples, {} subjects, {} skipped",
            self.samples.len(),
            self.subject_count(),
            self.skipped.len()
        )?;
        for (e, n) in Emotion::ALL.iter().zip(self.per_class_counts()) {
            writeln!(f, "  {:<10} {n}", e.name())?;
        }
        Ok(())
    }
}

pub fn class_counts(samples: &[ImageSample]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for s in samples {
        counts[s.emotion.index()] += 1;
    }
    counts
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ty = entry.file_type().map_err(|e| Error::io(&path, e))?;
        if ty.is_dir() {
            collect_files(&path, out)?;
        } else if is_image_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Discovers every labelled image below `root`. Samples come back sorted by
/// path; unparseable or undecodable files are logged and listed in
/// `ScanReport::skipped`.
pub fn scan_dataset(root: &Path, layout: DatasetLayout) -> Result<ScanReport> {
    let root = root.canonicalize().map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    collect_files(&root, &mut files)?;
    files.sort();

    let parsed: Vec<std::result::Result<ImageSample, (PathBuf, String)>> = files
        .into_par_iter()
        .map(|path| {
            let relative = path.strip_prefix(&root).unwrap_or(&path);
            let name = layout.parse(relative).map_err(|why| (path.clone(), why))?;
            image::image_dimensions(&path).map_err(|e| (path.clone(), format!("cannot decode: {e}")))?;
            Ok(ImageSample {
                image_path: path,
                dataset_id: layout.id().to_string(),
                subject_id: name.subject_id,
                emotion: name.emotion,
                gaze: name.gaze,
            })
        })
        .collect();

    let mut report = ScanReport::default();
    for item in parsed {
        match item {
            Ok(sample) => report.samples.push(sample),
            Err((path, why)) => {
                warn!("skipping {}: {why}", path.display());
                report.skipped.push((path, why));
            }
        }
    }
    if report.samples.is_empty() {
        warn!("no labelled images found below {}", root.display());
    }
    if !report.skipped.is_empty() {
        warn!("{} files skipped while scanning {}", report.skipped.len(), root.display());
    }
    Ok(report)
}

/// Groups sample indices by subject, subjects in lexicographic order.
pub(crate) fn subjects(samples: &[ImageSample]) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        map.entry(s.subject_id.as_str()).or_default().push(i);
    }
    map
}
