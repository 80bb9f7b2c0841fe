//! Batch stages over manifests: face crops, saliency maps and saliency
//! products. Each stage writes PNGs under its output directory using the
//! `<dataset>/<Expression>/<stem>.png` layout and, where it has one, a
//! rewritten manifest next to them.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::dataset::{save_manifest, ImageSample, InputVariant, SplitManifest};
use crate::error::{Error, Result};
use crate::face::{crop_resize_gray, detect_face, FaceBox, FaceDetector, NoFacePolicy, FACE_SIZE};
use crate::image::GrayImage;
use crate::product::{renormalize, scaled_product};
use crate::saliency::{SaliencyBackend, SaliencyMap};
use crate::trainer::LabeledImage;

/// File name of the manifest each stage writes into its output directory.
pub const STAGE_MANIFEST: &str = "manifest.csv";
/// Sidecar naming the saliency backend that produced a map directory.
pub const SALIENCY_SIDECAR: &str = "saliency_backend.txt";

/// Runs `f` on a pool of `jobs` threads (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug)]
pub struct PreprocessReport {
    /// Manifest of the written crops (variant `plain`).
    pub manifest: SplitManifest,
    /// Source images without a detected face that were dropped.
    pub skipped: Vec<PathBuf>,
    /// Source images cropped full-frame because no face was found.
    pub full_frame: Vec<PathBuf>,
}

enum CropOutcome {
    Written(ImageSample),
    FullFrame(ImageSample),
    Skipped(PathBuf),
}

/// Detects, crops and resizes every manifest image to a 256×256 grayscale
/// PNG under `out_dir`, then writes `out_dir/manifest.csv`.
pub fn preprocess_manifest(
    manifest: &SplitManifest,
    detector: &dyn FaceDetector,
    policy: NoFacePolicy,
    out_dir: &Path,
) -> Result<PreprocessReport> {
    let jobs: Vec<(crate::dataset::Split, &ImageSample)> = manifest.iter().collect();
    let outcomes: Vec<(crate::dataset::Split, CropOutcome)> = jobs
        .par_iter()
        .map(|&(split, sample)| {
            let image = GrayImage::load(&sample.image_path)?;
            let (face, full) = match detect_face(&image, detector, &sample.image_path) {
                Ok(b) => (b, false),
                Err(Error::NoFaceFound(path)) => match policy {
                    NoFacePolicy::Skip => {
                        warn!("no face in {}; skipped", path.display());
                        return Ok((split, CropOutcome::Skipped(path)));
                    }
                    NoFacePolicy::FullFrame => {
                        warn!("no face in {}; using the full frame", path.display());
                        (FaceBox::full_frame(&image), true)
                    }
                },
                Err(e) => return Err(e),
            };
            let crop = crop_resize_gray(&image, &face)?;
            let target = sample.artifact_path(out_dir);
            crop.save_png(&target)?;
            let written = ImageSample {
                image_path: target,
                ..sample.clone()
            };
            Ok((
                split,
                if full {
                    CropOutcome::FullFrame(written)
                } else {
                    CropOutcome::Written(written)
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut out = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        variant: Some(InputVariant::Plain),
        ..manifest.clone()
    };
    let mut skipped = Vec::new();
    let mut full_frame = Vec::new();
    for (split, outcome) in outcomes {
        match outcome {
            CropOutcome::Written(s) => out.split_mut(split).push(s),
            CropOutcome::FullFrame(s) => {
                full_frame.push(s.image_path.clone());
                out.split_mut(split).push(s);
            }
            CropOutcome::Skipped(p) => skipped.push(p),
        }
    }
    save_manifest(&out, &out_dir.join(STAGE_MANIFEST))?;
    info!(
        "preprocess: {} crops, {} skipped, {} full-frame",
        out.len(),
        skipped.len(),
        full_frame.len()
    );
    Ok(PreprocessReport {
        manifest: out,
        skipped,
        full_frame,
    })
}

/// Computes a saliency map for every face in `manifest` (which must list
/// preprocessed crops) and writes them as 8-bit PNGs under `out_dir`.
pub fn saliency_manifest(
    manifest: &SplitManifest,
    backend: &dyn SaliencyBackend,
    out_dir: &Path,
) -> Result<usize> {
    require_variant(manifest, InputVariant::Plain)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let samples: Vec<&ImageSample> = manifest.iter().map(|(_, s)| s).collect();
    let run = |s: &&ImageSample| -> Result<()> {
        let face = GrayImage::load(&s.image_path)?;
        let map = backend.compute(&face, &s.image_path)?;
        map.save_png(&s.artifact_path(out_dir))
    };
    match backend.concurrency_limit() {
        None => samples.par_iter().try_for_each(run)?,
        Some(n) => with_jobs(Some(n), || samples.par_iter().try_for_each(run))??,
    }
    let sidecar = out_dir.join(SALIENCY_SIDECAR);
    fs::write(&sidecar, format!("backend={}\n", backend.id())).map_err(|e| Error::io(&sidecar, e))?;
    info!("saliency: {} maps from `{}`", samples.len(), backend.id());
    Ok(samples.len())
}

fn collect_pngs(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_pngs(&path, base, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path.strip_prefix(base).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}

/// Multiplies every face PNG under `faces_dir` by the map at the same
/// relative path under `saliency_dir`, writing the products to the same
/// relative path under `out_dir`. When `faces_dir` holds a stage manifest, a
/// product manifest is written to `out_dir` too.
pub fn product_dirs(faces_dir: &Path, saliency_dir: &Path, out_dir: &Path, renorm: bool) -> Result<usize> {
    let mut rel = Vec::new();
    collect_pngs(faces_dir, faces_dir, &mut rel)?;
    rel.sort();
    let missing: Vec<PathBuf> = rel
        .iter()
        .map(|r| saliency_dir.join(r))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    rel.par_iter().try_for_each(|r| -> Result<()> {
        let face = GrayImage::load(&faces_dir.join(r))?;
        let map = SaliencyMap::load_png(&saliency_dir.join(r))?;
        let mut out = scaled_product(&face, &map)?;
        if renorm {
            out = renormalize(&out);
        }
        out.save_png(&out_dir.join(r))
    })?;

    let faces_manifest = faces_dir.join(STAGE_MANIFEST);
    if faces_manifest.is_file() {
        let loaded = crate::dataset::load_manifest(&faces_manifest)?;
        let mut m = loaded.manifest;
        for split in crate::dataset::Split::ALL {
            for s in m.split_mut(split) {
                s.image_path = s.artifact_path(out_dir);
            }
        }
        m.variant = Some(InputVariant::SaliencyProduct);
        save_manifest(&m, &out_dir.join(STAGE_MANIFEST))?;
    }
    info!("product: {} images", rel.len());
    Ok(rel.len())
}

/// Errors unless `manifest` lists images of `variant`.
pub fn require_variant(manifest: &SplitManifest, variant: InputVariant) -> Result<()> {
    match manifest.variant {
        Some(v) if v == variant => Ok(()),
        Some(v) => Err(Error::InvalidInput(format!(
            "manifest lists `{v}` images but `{variant}` was requested"
        ))),
        None => Err(Error::InvalidInput(format!(
            "manifest lists raw images; run `preprocess`{} first",
            if variant == InputVariant::SaliencyProduct {
                ", `saliency` and `product`"
            } else {
                ""
            }
        ))),
    }
}

/// Decodes preprocessed 256×256 images. Fails listing every missing file.
pub fn load_labeled(samples: &[ImageSample]) -> Result<Vec<LabeledImage>> {
    let missing: Vec<PathBuf> = samples
        .iter()
        .map(|s| s.image_path.clone())
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    samples
        .par_iter()
        .map(|s| {
            let image = GrayImage::load(&s.image_path)?;
            if image.width() != FACE_SIZE || image.height() != FACE_SIZE {
                return Err(Error::ShapeMismatch {
                    expected: format!("{FACE_SIZE}x{FACE_SIZE} preprocessed image"),
                    actual: format!("{}x{} at {}", image.width(), image.height(), s.image_path.display()),
                });
            }
            Ok(LabeledImage {
                key: s.stem(),
                image,
                label: s.emotion,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_split, scan_dataset, DatasetLayout, SplitPolicy, SplitSizes};
    use crate::face::HaarCascade;
    use crate::saliency::SpectralBackend;
    use crate::synthetic::{generate_dataset, FixtureLayout, FixtureSpec};

    #[test]
    fn stages_chain() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("raw");
        generate_dataset(
            &root,
            &FixtureSpec {
                layout: FixtureLayout::Cfee,
                subjects: 2,
                per_expression: 1,
                image_size: (64, 64),
                distractors: false,
                seed: 1,
            },
        )
        .unwrap();
        let scan = scan_dataset(&root, DatasetLayout::Cfee).unwrap();
        let m = make_split(&scan.samples, SplitSizes::Ratios([0.5, 0.25, 0.25]), SplitPolicy::ByImage, 0).unwrap();
        assert!(require_variant(&m, InputVariant::Plain).is_err());

        let faces = dir.path().join("faces");
        let report = preprocess_manifest(&m, &HaarCascade::synthetic_frontal(), NoFacePolicy::FullFrame, &faces).unwrap();
        assert_eq!(report.manifest.len(), 14);
        assert!(report.skipped.is_empty());
        let crops = load_labeled(&report.manifest.train).unwrap();
        assert!(crops.iter().all(|c| c.image.width() == FACE_SIZE));

        let maps = dir.path().join("maps");
        assert_eq!(saliency_manifest(&report.manifest, &SpectralBackend, &maps).unwrap(), 14);
        assert!(fs::read_to_string(maps.join(SALIENCY_SIDECAR)).unwrap().contains("spectral"));

        let products = dir.path().join("products");
        assert_eq!(product_dirs(&faces, &maps, &products, false).unwrap(), 14);
        let pm = crate::dataset::load_manifest(&products.join(STAGE_MANIFEST)).unwrap();
        assert!(!pm.has_missing());
        assert_eq!(pm.manifest.variant, Some(InputVariant::SaliencyProduct));
        require_variant(&pm.manifest, InputVariant::SaliencyProduct).unwrap();

        // a face without its map is reported by path
        let first = report.manifest.train[0].artifact_path(&maps);
        fs::remove_file(&first).unwrap();
        match product_dirs(&faces, &maps, &products, false) {
            Err(Error::MissingArtifacts(paths)) => assert_eq!(paths, vec![first]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_artifacts_are_listed() {
        let s = ImageSample {
            image_path: PathBuf::from("/nope/a.png"),
            dataset_id: "cfee".into(),
            subject_id: "S1".into(),
            emotion: crate::emotion::Emotion::Sad,
            gaze: None,
        };
        match load_labeled(&[s.clone(), s]) {
            Err(Error::MissingArtifacts(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
