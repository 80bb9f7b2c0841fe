//! Manifest CSV: `#`-prefixed metadata lines, then a header
//! `dataset_id,subject_id,emotion,gaze,split,path` and one row per image.
//! Paths below the manifest's own directory are written relative to it.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use super::split::{Split, SplitManifest, SplitPolicy, SplitSizes};
use super::{Gaze, ImageSample, InputVariant};
use crate::emotion::Emotion;
use crate::error::{Error, Result};

const MAGIC: &str = "# fer-manifest v1";
const HEADER: [&str; 6] = ["dataset_id", "subject_id", "emotion", "gaze", "split", "path"];

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedManifest {
    pub manifest: SplitManifest,
    /// Referenced images that do not exist on disk.
    pub missing: Vec<PathBuf>,
}

impl LoadedManifest {
    pub fn has_missing(&self) -> bool {
        !self.missing.is_empty()
    }
}

/// Serializes `manifest` as written to a file in `base_dir`. Image paths
/// below `base_dir` are stored relative to it, others as absolute paths.
pub fn write_manifest<W: Write>(manifest: &SplitManifest, base_dir: &Path, out: W) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(base_dir, e);
    let base_dir = std::path::absolute(base_dir).map_err(io_err)?;
    let mut out = out;
    writeln!(out, "{MAGIC}").map_err(io_err)?;
    writeln!(out, "# policy={}", manifest.policy).map_err(io_err)?;
    writeln!(out, "# seed={}", manifest.seed).map_err(io_err)?;
    writeln!(out, "# sizes={}", manifest.sizes).map_err(io_err)?;
    if let Some(v) = manifest.variant {
        writeln!(out, "# variant={v}").map_err(io_err)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("writing manifest: {e}"));
    w.write_record(HEADER).map_err(csv_err)?;
    for (split, s) in manifest.iter() {
        let absolute = std::path::absolute(&s.image_path).map_err(|e| Error::io(&s.image_path, e))?;
        let path = absolute.strip_prefix(&base_dir).unwrap_or(&absolute);
        let path = path.to_str().ok_or_else(|| {
            Error::InvalidInput(format!("non UTF-8 path {}", s.image_path.display()))
        })?;
        w.write_record([
            s.dataset_id.as_str(),
            s.subject_id.as_str(),
            s.emotion.name(),
            s.gaze.map_or("", Gaze::as_str),
            split.as_str(),
            path,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn save_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let base = absolute_parent(path)?;
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    let mut buf = Vec::new();
    write_manifest(manifest, &base, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn absolute_parent(path: &Path) -> Result<PathBuf> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    let parent = parent.unwrap_or(Path::new("."));
    std::path::absolute(parent).map_err(|e| Error::io(parent, e))
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = absolute_parent(path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut policy = None;
    let mut seed = None;
    let mut sizes = None;
    let mut variant = None;
    for (i, line) in text.lines().enumerate() {
        let Some(meta) = line.strip_prefix('#') else {
            break;
        };
        let line_no = i as u64 + 1;
        if i == 0 {
            if line != MAGIC {
                return Err(parse_err(line_no, format!("expected `{MAGIC}`")));
            }
            continue;
        }
        let (key, value) = meta
            .trim()
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "metadata line is not key=value".into()))?;
        let bad = |e: Error| parse_err(line_no, e.to_string());
        match key {
            "policy" => policy = Some(value.parse::<SplitPolicy>().map_err(bad)?),
            "seed" => {
                seed = Some(
                    value
                        .parse::<u64>()
                        .map_err(|e| parse_err(line_no, format!("seed: {e}")))?,
                )
            }
            "sizes" => sizes = Some(value.parse::<SplitSizes>().map_err(bad)?),
            "variant" => variant = Some(value.parse::<InputVariant>().map_err(bad)?),
            other => return Err(parse_err(line_no, format!("unknown metadata key `{other}`"))),
        }
    }
    let policy = policy.ok_or_else(|| parse_err(1, "missing `policy` metadata".into()))?;
    let seed = seed.ok_or_else(|| parse_err(1, "missing `seed` metadata".into()))?;
    let sizes = sizes.ok_or_else(|| parse_err(1, "missing `sizes` metadata".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(
            reader.position().line().saturating_sub(1).max(1),
            format!("expected header `{}`", HEADER.join(",")),
        ));
    }

    let mut manifest = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        sizes,
        policy,
        seed,
        variant,
    };
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected 6 fields, found {}", record.len())));
        }
        let bad = |e: Error| parse_err(line, e.to_string());
        let emotion: Emotion = record[2].parse().map_err(bad)?;
        let gaze = match &record[3] {
            "" => None,
            g => Some(g.parse::<Gaze>().map_err(bad)?),
        };
        let split: Split = record[4].parse().map_err(bad)?;
        let raw = PathBuf::from(&record[5]);
        let image_path = if raw.is_absolute() { raw } else { base.join(raw) };
        manifest.split_mut(split).push(ImageSample {
            image_path,
            dataset_id: record[0].to_string(),
            subject_id: record[1].to_string(),
            emotion,
            gaze,
        });
    }
    manifest.validate()?;

    let missing: Vec<PathBuf> = manifest
        .iter()
        .map(|(_, s)| &s.image_path)
        .filter(|p| !p.exists())
        .cloned()
        .collect();
    if !missing.is_empty() {
        warn!(
            "{}: {} referenced images are missing",
            path.display(),
            missing.len()
        );
    }
    Ok(LoadedManifest { manifest, missing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_split;
    use proptest::prelude::*;

    fn sample(dir: &Path, i: usize) -> ImageSample {
        ImageSample {
            image_path: dir.join(format!("rafd/x,{i}.png")),
            dataset_id: "rafd".into(),
            subject_id: format!("{:02}", i % 5),
            emotion: Emotion::ALL[i % 7],
            gaze: Some([Gaze::Front, Gaze::Left, Gaze::Right][i % 3]),
        }
    }

    #[test]
    fn malformed_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "# fer-manifest v1\n# policy=by-image\n# seed=1\n# sizes=ratios:1,0,0\n\
             dataset_id,subject_id,emotion,gaze,split,path\n\
             cfee,s1,Happy,,train,a.png\n\
             cfee,s1,Bored,,train,b.png\n",
        )
        .unwrap();
        match load_manifest(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 7, "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overlapping_entries_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "# fer-manifest v1\n# policy=by-image\n# seed=1\n# sizes=ratios:0.5,0,0.5\n\
             dataset_id,subject_id,emotion,gaze,split,path\n\
             cfee,s1,Happy,,train,a.png\n\
             cfee,s1,Happy,,test,a.png\n",
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::ManifestInvalid(_))));
    }

    #[test]
    fn missing_image_sets_flag() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = (0..6).map(|i| sample(dir.path(), i)).collect();
        for s in &samples {
            std::fs::create_dir_all(s.image_path.parent().unwrap()).unwrap();
            std::fs::write(&s.image_path, b"x").unwrap();
        }
        std::fs::remove_file(&samples[4].image_path).unwrap();
        let m = make_split(&samples, SplitSizes::Ratios([1.0, 0.0, 0.0]), SplitPolicy::ByImage, 3)
            .unwrap();
        let path = dir.path().join("manifest.csv");
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert!(loaded.has_missing());
        assert_eq!(loaded.missing, vec![samples[4].image_path.clone()]);
        assert_eq!(loaded.manifest, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn save_load_round_trip(n in 3usize..40, seed in any::<u64>(), by_subject in any::<bool>(), with_variant in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let samples: Vec<_> = (0..n).map(|i| sample(dir.path(), i)).collect();
            let policy = if by_subject { SplitPolicy::BySubject } else { SplitPolicy::ByImage };
            let mut m = make_split(&samples, SplitSizes::Ratios([0.6, 0.2, 0.2]), policy, seed).unwrap();
            if with_variant {
                m.variant = Some(InputVariant::SaliencyProduct);
            }
            let path = dir.path().join("sub/manifest.csv");
            save_manifest(&m, &path).unwrap();
            let first = std::fs::read(&path).unwrap();
            let loaded = load_manifest(&path).unwrap();
            prop_assert_eq!(&loaded.manifest, &m);
            save_manifest(&loaded.manifest, &path).unwrap();
            prop_assert_eq!(std::fs::read(&path).unwrap(), first);
        }
    }
}
