use std::path::{Path, PathBuf};
use std::process::Command;

use super::{normalize_map, spectral_residual_saliency, SaliencyMap};
use crate::error::{Error, Result};
use crate::image::{GrayImage, RealGrid};

/// A source of saliency maps for cropped faces.
pub trait SaliencyBackend: Send + Sync {
    fn id(&self) -> String;

    /// Maximum number of images processed concurrently; `None` means the
    /// backend is pure and can run on every worker.
    fn concurrency_limit(&self) -> Option<usize> {
        Some(1)
    }

    /// Unnormalised map for `image`; `source` is the original file the face
    /// came from and keys precomputed outputs.
    fn raw_map(&self, image: &GrayImage, source: &Path) -> Result<RealGrid>;

    /// Normalised map with the image's dimensions.
    fn compute(&self, image: &GrayImage, source: &Path) -> Result<SaliencyMap> {
        let raw = self.raw_map(image, source)?;
        coerce(&raw, image, &self.id())
    }
}

/// Resizes `raw` onto the image grid and min-max normalises it. Maps whose
/// aspect ratio differs from the image by more than 10% are rejected rather
/// than stretched.
fn coerce(raw: &RealGrid, image: &GrayImage, backend: &str) -> Result<SaliencyMap> {
    let raw_aspect = raw.width as f64 / raw.height as f64;
    let img_aspect = image.width() as f64 / image.height() as f64;
    if (raw_aspect / img_aspect - 1.0).abs() > 0.10 {
        return Err(Error::Backend {
            backend: backend.into(),
            message: format!(
                "map is {}x{} but the image is {}x{}",
                raw.width,
                raw.height,
                image.width(),
                image.height()
            ),
        });
    }
    normalize_map(&raw.resize_bilinear(image.width(), image.height()))
}

pub struct SpectralBackend;

impl SaliencyBackend for SpectralBackend {
    fn id(&self) -> String {
        "spectral".into()
    }

    fn concurrency_limit(&self) -> Option<usize> {
        None
    }

    fn raw_map(&self, image: &GrayImage, _source: &Path) -> Result<RealGrid> {
        Ok(spectral_residual_saliency(image)?.to_grid())
    }

    fn compute(&self, image: &GrayImage, _source: &Path) -> Result<SaliencyMap> {
        spectral_residual_saliency(image)
    }
}

/// Reads maps computed offline, one per source image, from a directory.
/// The map for `faces/Happy/s01_3.jpg` is `<dir>/s01_3.{png,jpg,txt,csv}`.
pub struct PrecomputedBackend {
    dir: PathBuf,
}

const MAP_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "txt", "csv"];

impl PrecomputedBackend {
    pub fn new(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Backend {
                backend: "external:precomputed".into(),
                message: format!("map directory {} does not exist", dir.display()),
            });
        }
        Ok(PrecomputedBackend {
            dir: dir.to_path_buf(),
        })
    }

    fn locate(&self, source: &Path) -> Result<PathBuf> {
        let stem = source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        MAP_EXTENSIONS
            .iter()
            .map(|ext| self.dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Backend {
                backend: self.id(),
                message: format!("no precomputed map for `{stem}` in {}", self.dir.display()),
            })
    }
}

impl SaliencyBackend for PrecomputedBackend {
    fn id(&self) -> String {
        "external:precomputed".into()
    }

    fn concurrency_limit(&self) -> Option<usize> {
        None
    }

    fn raw_map(&self, _image: &GrayImage, source: &Path) -> Result<RealGrid> {
        read_raw_map(&self.locate(source)?)
    }
}

/// Runs `<program> <input.png> <output.png>` once per image, e.g. a script
/// wrapping a pretrained saliency network.
pub struct CommandBackend {
    program: PathBuf,
    scratch: tempfile::TempDir,
}

impl CommandBackend {
    pub fn new(program: &Path) -> Result<Self> {
        let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(CommandBackend {
            program: program.to_path_buf(),
            scratch,
        })
    }
}

impl SaliencyBackend for CommandBackend {
    fn id(&self) -> String {
        "external:command".into()
    }

    fn raw_map(&self, image: &GrayImage, source: &Path) -> Result<RealGrid> {
        let stem = source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let input = self.scratch.path().join(format!("{stem}.in.png"));
        let output = self.scratch.path().join(format!("{stem}.out.png"));
        image.save_png(&input)?;
        let status = Command::new(&self.program)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::Backend {
                backend: self.id(),
                message: format!("cannot run {}: {e}", self.program.display()),
            })?;
        if !status.success() {
            return Err(Error::Backend {
                backend: self.id(),
                message: format!("{} exited with {status} on {stem}", self.program.display()),
            });
        }
        let map = read_raw_map(&output);
        let _ = std::fs::remove_file(&input);
        let _ = std::fs::remove_file(&output);
        map
    }
}

/// Reads a raw map: an image (8- or 16-bit intensities taken as-is) or a
/// text grid of numbers separated by whitespace or commas, one row per line.
pub fn read_raw_map(path: &Path) -> Result<RealGrid> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if ext == "txt" || ext == "csv" {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(str::parse::<f64>)
                .collect();
            rows.push(row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: e.to_string(),
            })?);
        }
        return RealGrid::from_rows(&rows);
    }
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let luma = img.to_luma16();
    let scale = if matches!(
        img,
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA16(_) | image::DynamicImage::ImageRgb16(_)
    ) {
        1.0
    } else {
        1.0 / 257.0
    };
    RealGrid::new(
        luma.width() as usize,
        luma.height() as usize,
        luma.pixels().map(|p| p[0] as f64 * scale).collect(),
    )
}

pub const KNOWN_BACKENDS: [&str; 3] = ["spectral", "external:precomputed", "external:command"];

/// Resolves `spectral` or `external:<id>`; external backends take their
/// endpoint (map directory or program path) from `endpoint`.
pub fn parse_backend(spec: &str, endpoint: Option<&Path>) -> Result<Box<dyn SaliencyBackend>> {
    let need_endpoint = || Error::Backend {
        backend: spec.into(),
        message: "this backend needs an endpoint (map directory or program path)".into(),
    };
    match spec {
        "spectral" => Ok(Box::new(SpectralBackend)),
        "external:precomputed" => Ok(Box::new(PrecomputedBackend::new(endpoint.ok_or_else(need_endpoint)?)?)),
        "external:command" => Ok(Box::new(CommandBackend::new(endpoint.ok_or_else(need_endpoint)?)?)),
        other => Err(Error::UnknownBackend {
            kind: "saliency backend",
            id: other.into(),
            known: KNOWN_BACKENDS.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precomputed_map_is_normalised() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("face01.txt"), "3 4\n5 7\n").unwrap();
        let backend = PrecomputedBackend::new(dir.path()).unwrap();
        let img = GrayImage::filled(2, 2, 50);
        let map = backend.compute(&img, Path::new("/data/Happy/face01.jpg")).unwrap();
        assert_eq!(map.values(), &[0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn precomputed_map_is_resized_to_the_face() {
        let dir = tempfile::tempdir().unwrap();
        let raw = GrayImage::from_fn(32, 32, |x, _| (x * 8) as u8);
        raw.save_png(&dir.path().join("s1_a.png")).unwrap();
        let backend = PrecomputedBackend::new(dir.path()).unwrap();
        let map = backend.compute(&GrayImage::filled(64, 64, 1), Path::new("s1_a.jpg")).unwrap();
        assert_eq!((map.width(), map.height()), (64, 64));
        assert_eq!(map.values().iter().copied().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn missing_map_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let backend = PrecomputedBackend::new(dir.path()).unwrap();
        let err = backend
            .compute(&GrayImage::filled(4, 4, 0), Path::new("x/Rafd090_01_a_b_sad_left.jpg"))
            .unwrap_err();
        assert_eq!(err.category(), "backend");
        assert!(err.to_string().contains("Rafd090_01_a_b_sad_left"), "{err}");
    }

    #[test]
    fn incompatible_aspect_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1,2,3,4\n").unwrap();
        let backend = PrecomputedBackend::new(dir.path()).unwrap();
        assert!(backend.compute(&GrayImage::filled(8, 8, 0), Path::new("a.png")).is_err());
    }

    #[test]
    fn unknown_and_unavailable_backends() {
        let err = parse_backend("external:mlnet", None).err().unwrap();
        assert!(err.to_string().contains("external:precomputed"));
        let err = parse_backend("external:precomputed", Some(Path::new("/nope/maps"))).err().unwrap();
        assert!(err.to_string().contains("external:precomputed"));
        assert!(parse_backend("external:command", None).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn command_backend_runs_program() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("sal.sh");
        // copies the input: saliency == the face itself
        std::fs::write(&script, "#!/bin/sh\ncp \"$1\" \"$2\"\n").unwrap();
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let backend = parse_backend("external:command", Some(&script)).unwrap();
        let img = GrayImage::from_fn(20, 20, |x, _| (x * 10) as u8);
        let map = backend.compute(&img, Path::new("f.png")).unwrap();
        assert_eq!(map.get(19, 0), 1.0);
        assert_eq!(map.get(0, 5), 0.0);
    }
}
