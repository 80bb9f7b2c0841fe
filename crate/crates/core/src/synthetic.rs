//! Drawn-face fixture datasets.
//!
//! Every image shows one cartoon face on a textured background. Faces differ
//! per subject (size, skin tone, proportions) and per expression (brows,
//! eyes, mouth), so the seven classes are learnable while the pixels are
//! still varied. Datasets are written in the `cfee` and `rafd` directory
//! layouts and carry a marker file so reports can flag them as synthetic.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Gaze;
use crate::emotion::Emotion;
use crate::error::{Error, Result};
use crate::face::{crop_resize_rgb, FaceBox};
use crate::trainer::LabeledImage;

/// Name of the file marking a directory tree as generated.
pub const MARKER_FILE: &str = "SYNTHETIC_FIXTURE";

/// True when `root` was written by this module.
pub fn is_synthetic(root: &Path) -> bool {
    root.join(MARKER_FILE).is_file()
}

/// Subject-level appearance, fixed across that subject's images.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    skin: [u8; 3],
    /// Face height over face width.
    aspect: f64,
    eye_spacing: f64,
    mouth_width: f64,
    feature_darkness: u8,
}

impl Subject {
    pub fn random<R: Rng>(id: &str, rng: &mut R) -> Subject {
        let tone = rng.random_range(170..235) as f64;
        Subject {
            id: id.to_string(),
            skin: [
                tone as u8,
                (tone * rng.random_range(0.80..0.92)) as u8,
                (tone * rng.random_range(0.65..0.82)) as u8,
            ],
            aspect: rng.random_range(1.0..1.12),
            eye_spacing: rng.random_range(0.19..0.23),
            mouth_width: rng.random_range(0.17..0.23),
            feature_darkness: rng.random_range(20..60),
        }
    }
}

/// One face to draw: bounding box of the head ellipse plus what it shows.
#[derive(Debug, Clone)]
pub struct FaceSpec {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub emotion: Emotion,
    pub gaze: Gaze,
}

impl FaceSpec {
    pub fn height(&self, subject: &Subject) -> f64 {
        self.width * subject.aspect
    }

    pub fn face_box(&self, subject: &Subject) -> FaceBox {
        FaceBox {
            x: self.x.round() as usize,
            y: self.y.round() as usize,
            w: self.width.round() as usize,
            h: self.height(subject).round() as usize,
            score: 1.0,
        }
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn blend(&mut self, x: i64, y: i64, c: [u8; 3], alpha: f64) {
        if x < 0 || y < 0 || x >= self.img.width() as i64 || y >= self.img.height() as i64 {
            return;
        }
        let p = self.img.get_pixel_mut(x as u32, y as u32);
        for (v, &t) in p.0.iter_mut().zip(&c) {
            *v = (*v as f64 * (1.0 - alpha) + t as f64 * alpha).round() as u8;
        }
    }

    /// Filled ellipse with a one-pixel antialiased rim.
    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, c: [u8; 3]) {
        let (x0, x1) = ((cx - rx - 1.0).floor() as i64, (cx + rx + 1.0).ceil() as i64);
        let (y0, y1) = ((cy - ry - 1.0).floor() as i64, (cy + ry + 1.0).ceil() as i64);
        let r = rx.min(ry).max(0.5);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let d = (dx * dx + dy * dy).sqrt();
                let edge = (1.0 - d) * r;
                let alpha = edge.clamp(-0.5, 0.5) + 0.5;
                if alpha > 0.0 {
                    self.blend(x, y, c, alpha);
                }
            }
        }
    }

    /// Thick polyline through `points`.
    fn stroke(&mut self, points: &[(f64, f64)], thickness: f64, c: [u8; 3]) {
        let r = thickness / 2.0;
        for pair in points.windows(2) {
            let ((ax, ay), (bx, by)) = (pair[0], pair[1]);
            let (x0, x1) = ((ax.min(bx) - r - 1.0) as i64, (ax.max(bx) + r + 1.0) as i64);
            let (y0, y1) = ((ay.min(by) - r - 1.0) as i64, (ay.max(by) + r + 1.0) as i64);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = (dx * dx + dy * dy).max(1e-12);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
                    let (qx, qy) = (ax + t * dx - px, ay + t * dy - py);
                    let d = (qx * qx + qy * qy).sqrt();
                    let alpha = (r - d).clamp(-0.5, 0.5) + 0.5;
                    if alpha > 0.0 {
                        self.blend(x, y, c, alpha);
                    }
                }
            }
        }
    }
}

/// Quadratic curve from `a` to `b` bending by `sag` (positive = downward).
fn curve(a: (f64, f64), b: (f64, f64), sag: f64) -> Vec<(f64, f64)> {
    let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0 + 2.0 * sag);
    (0..=16)
        .map(|i| {
            let t = i as f64 / 16.0;
            let u = 1.0 - t;
            (
                u * u * a.0 + 2.0 * u * t * mid.0 + t * t * b.0,
                u * u * a.1 + 2.0 * u * t * mid.1 + t * t * b.1,
            )
        })
        .collect()
}

/// Expression geometry in face-relative units (fractions of the face width).
struct Expression {
    /// Brow inner-end and outer-end heights above the eye centre.
    brow_inner: f64,
    brow_outer: f64,
    eye_open: f64,
    mouth_sag: f64,
    mouth_open: f64,
    mouth_width_scale: f64,
    nose_wrinkle: bool,
    mouth_tilt: f64,
}

fn expression(e: Emotion) -> Expression {
    let base = Expression {
        brow_inner: 0.12,
        brow_outer: 0.12,
        eye_open: 0.045,
        mouth_sag: 0.0,
        mouth_open: 0.0,
        mouth_width_scale: 1.0,
        nose_wrinkle: false,
        mouth_tilt: 0.0,
    };
    match e {
        Emotion::Angry => Expression {
            brow_inner: 0.05,
            brow_outer: 0.14,
            eye_open: 0.03,
            mouth_width_scale: 0.75,
            ..base
        },
        Emotion::Disgusted => Expression {
            brow_inner: 0.07,
            brow_outer: 0.09,
            eye_open: 0.028,
            mouth_sag: -0.015,
            mouth_width_scale: 0.9,
            nose_wrinkle: true,
            mouth_tilt: 0.05,
            ..base
        },
        Emotion::Fearful => Expression {
            brow_inner: 0.19,
            brow_outer: 0.14,
            eye_open: 0.07,
            mouth_open: 0.05,
            mouth_width_scale: 1.15,
            mouth_sag: 0.01,
            ..base
        },
        Emotion::Happy => Expression {
            mouth_sag: 0.06,
            mouth_width_scale: 1.25,
            eye_open: 0.035,
            ..base
        },
        Emotion::Neutral => base,
        Emotion::Sad => Expression {
            brow_inner: 0.17,
            brow_outer: 0.09,
            mouth_sag: -0.05,
            mouth_width_scale: 0.95,
            ..base
        },
        Emotion::Surprised => Expression {
            brow_inner: 0.22,
            brow_outer: 0.22,
            eye_open: 0.075,
            mouth_open: 0.1,
            mouth_width_scale: 0.6,
            ..base
        },
    }
}

/// Fills `img` with a dim, low-contrast texture.
fn background<R: Rng>(img: &mut RgbImage, rng: &mut R) {
    let base = [
        rng.random_range(40..90) as f64,
        rng.random_range(40..90) as f64,
        rng.random_range(40..90) as f64,
    ];
    let fx = rng.random_range(0.02..0.08);
    let fy = rng.random_range(0.02..0.08);
    let phase = rng.random_range(0.0..2.0 * PI);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let wave = 10.0 * ((x as f64 * fx + y as f64 * fy) * 2.0 * PI / 8.0 + phase).sin();
        let noise: f64 = rng.random_range(-6.0..6.0);
        for (v, b) in p.0.iter_mut().zip(&base) {
            *v = (b + wave + noise).clamp(0.0, 255.0) as u8;
        }
    }
}

fn draw_face<R: Rng>(canvas: &mut Canvas, subject: &Subject, spec: &FaceSpec, rng: &mut R) {
    let w = spec.width;
    let h = spec.height(subject);
    let (cx, cy) = (spec.x + w / 2.0, spec.y + h / 2.0);
    canvas.ellipse(cx, cy, w / 2.0, h / 2.0, subject.skin);

    let ex = expression(spec.emotion);
    let jitter = |rng: &mut R| rng.random_range(-0.008..0.008) * w;
    let dark = [subject.feature_darkness; 3];
    let eye_y = spec.y + 0.40 * h + jitter(rng);
    let spacing = subject.eye_spacing * w;
    let eye_rx = 0.085 * w;
    let gaze_dx = match spec.gaze {
        Gaze::Front => 0.0,
        Gaze::Left => -0.035 * w,
        Gaze::Right => 0.035 * w,
    };
    for side in [-1.0, 1.0] {
        let ecx = cx + side * spacing;
        canvas.ellipse(ecx, eye_y, eye_rx, ex.eye_open * w + 1.0, [235, 235, 230]);
        let pr = (ex.eye_open * w).min(0.045 * w).max(1.0);
        canvas.ellipse(ecx + gaze_dx, eye_y, pr, pr, dark);

        let inner = (cx + side * (spacing - 0.7 * eye_rx), eye_y - ex.brow_inner * w);
        let outer = (cx + side * (spacing + 1.2 * eye_rx), eye_y - ex.brow_outer * w);
        canvas.stroke(&[inner, outer], 0.045 * w, dark);
    }

    let nose_top = eye_y + 0.06 * w;
    let nose_y = spec.y + 0.62 * h;
    canvas.stroke(
        &[(cx, nose_top), (cx - 0.03 * w, nose_y), (cx + 0.03 * w, nose_y)],
        0.02 * w,
        [subject.skin[0] / 2, subject.skin[1] / 2, subject.skin[2] / 2],
    );
    if ex.nose_wrinkle {
        for side in [-1.0, 1.0] {
            let a = (cx + side * 0.05 * w, nose_top + 0.02 * w);
            let b = (cx + side * 0.11 * w, nose_top + 0.07 * w);
            canvas.stroke(&curve(a, b, 0.01 * w), 0.02 * w, dark);
        }
    }

    let mouth_y = spec.y + 0.77 * h + jitter(rng);
    let half = subject.mouth_width * ex.mouth_width_scale * w;
    let lips = [150, 50, 55];
    let tilt = ex.mouth_tilt * w;
    let left = (cx - half, mouth_y - ex.mouth_sag * w * 0.6 + tilt);
    let right = (cx + half, mouth_y - ex.mouth_sag * w * 0.6 - tilt);
    if ex.mouth_open > 0.0 {
        canvas.ellipse(cx, mouth_y, half, ex.mouth_open * w, lips);
        canvas.ellipse(cx, mouth_y, half * 0.7, ex.mouth_open * w * 0.6, [40, 15, 20]);
    } else {
        canvas.stroke(&curve(left, right, ex.mouth_sag * w), 0.04 * w, lips);
    }
}

/// Renders `faces` over a fresh background.
pub fn render_scene(
    width: u32,
    height: u32,
    faces: &[(Subject, FaceSpec)],
    seed: u64,
) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(width, height);
    background(&mut img, &mut rng);
    let mut canvas = Canvas { img };
    for (subject, spec) in faces {
        draw_face(&mut canvas, subject, spec, &mut rng);
    }
    canvas.img
}

/// A single-face image: face placed at a random position and size.
pub fn render_face(subject: &Subject, emotion: Emotion, gaze: Gaze, size: (u32, u32), seed: u64) -> (RgbImage, FaceBox) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (w, h) = (size.0 as f64, size.1 as f64);
    let max_face = (w * 0.85).min(h * 0.85 / subject.aspect);
    let face_w = rng.random_range(0.75..1.0) * max_face;
    let face_h = face_w * subject.aspect;
    let spec = FaceSpec {
        x: rng.random_range(0.0..(w - face_w).max(1.0)),
        y: rng.random_range(0.0..(h - face_h).max(1.0)),
        width: face_w,
        emotion,
        gaze,
    };
    let face_box = spec.face_box(subject);
    (render_scene(size.0, size.1, &[(subject.clone(), spec)], seed), face_box)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureLayout {
    Cfee,
    Rafd,
}

/// What to generate.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub layout: FixtureLayout,
    pub subjects: usize,
    /// Images per subject and expression (CFEE layout only; RaFD always has
    /// one per gaze direction).
    pub per_expression: usize,
    pub image_size: (u32, u32),
    /// Also write files the scanner must skip (non-frontal camera, unused
    /// expression, stray text file).
    pub distractors: bool,
    pub seed: u64,
}

impl FixtureSpec {
    /// 230 subjects × 7 expressions = 1610 images.
    pub fn cfee_full(seed: u64) -> FixtureSpec {
        FixtureSpec {
            layout: FixtureLayout::Cfee,
            subjects: 230,
            per_expression: 1,
            image_size: (96, 96),
            distractors: false,
            seed,
        }
    }

    /// 67 subjects × 7 expressions × 3 gaze directions = 1407 images.
    pub fn rafd_full(seed: u64) -> FixtureSpec {
        FixtureSpec {
            layout: FixtureLayout::Rafd,
            subjects: 67,
            per_expression: 1,
            image_size: (96, 120),
            distractors: false,
            seed,
        }
    }

    pub fn image_count(&self) -> usize {
        match self.layout {
            FixtureLayout::Cfee => self.subjects * 7 * self.per_expression,
            FixtureLayout::Rafd => self.subjects * 7 * 3,
        }
    }
}

/// One generated image and where its face is.
#[derive(Debug, Clone)]
pub struct FixtureImage {
    pub path: PathBuf,
    pub subject_id: String,
    pub emotion: Emotion,
    pub gaze: Gaze,
    pub face: FaceBox,
}

const RAFD_ETHNICITY: [&str; 2] = ["Caucasian", "Moroccan"];
const RAFD_GENDER: [&str; 2] = ["female", "male"];

fn rafd_gaze(g: Gaze) -> &'static str {
    match g {
        Gaze::Front => "frontal",
        Gaze::Left => "left",
        Gaze::Right => "right",
    }
}

/// Writes a fixture dataset below `root` and returns its images in path
/// order. Existing files with the same names are overwritten.
pub fn generate_dataset(root: &Path, spec: &FixtureSpec) -> Result<Vec<FixtureImage>> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut jobs = Vec::new();
    for s in 0..spec.subjects {
        let id = match spec.layout {
            FixtureLayout::Cfee => format!("S{:03}", s + 1),
            FixtureLayout::Rafd => format!("{:02}", s + 1),
        };
        let subject = Subject::random(&id, &mut rng);
        for emotion in Emotion::ALL {
            match spec.layout {
                FixtureLayout::Cfee => {
                    for k in 0..spec.per_expression {
                        let path = root
                            .join(emotion.name())
                            .join(format!("{id}_{:02}.png", k + 1));
                        jobs.push((subject.clone(), emotion, Gaze::Front, path, rng.random::<u64>()));
                    }
                }
                FixtureLayout::Rafd => {
                    let eth = RAFD_ETHNICITY[s % 2];
                    let gender = RAFD_GENDER[(s / 2) % 2];
                    for gaze in [Gaze::Front, Gaze::Left, Gaze::Right] {
                        let name = format!(
                            "Rafd090_{id}_{eth}_{gender}_{}_{}.jpg",
                            emotion.adjective().to_ascii_lowercase(),
                            rafd_gaze(gaze)
                        );
                        jobs.push((subject.clone(), emotion, gaze, root.join(name), rng.random::<u64>()));
                    }
                }
            }
        }
    }

    use rayon::prelude::*;
    let mut images: Vec<FixtureImage> = jobs
        .into_par_iter()
        .map(|(subject, emotion, gaze, path, seed)| {
            let (img, face) = render_face(&subject, emotion, gaze, spec.image_size, seed);
            save_rgb(&img, &path)?;
            Ok(FixtureImage {
                path,
                subject_id: subject.id.clone(),
                emotion,
                gaze,
                face,
            })
        })
        .collect::<Result<_>>()?;
    images.sort_by(|a, b| a.path.cmp(&b.path));

    if spec.distractors {
        let subject = Subject::random("99", &mut rng);
        let (img, _) = render_face(&subject, Emotion::Neutral, Gaze::Front, spec.image_size, 7);
        match spec.layout {
            FixtureLayout::Cfee => {
                save_rgb(&img, &root.join("Compound").join("S999_01.png"))?;
            }
            FixtureLayout::Rafd => {
                save_rgb(&img, &root.join("Rafd045_99_Caucasian_male_neutral_frontal.jpg"))?;
                save_rgb(&img, &root.join("Rafd090_99_Caucasian_male_contemptuous_frontal.jpg"))?;
            }
        }
        fs::write(root.join("README.txt"), "fixture\n").map_err(|e| Error::io(root, e))?;
    }

    let marker = root.join(MARKER_FILE);
    fs::write(&marker, format!("layout={:?}\nseed={}\n", spec.layout, spec.seed))
        .map_err(|e| Error::io(&marker, e))?;
    Ok(images)
}

fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Two faces of different sizes side by side; returns both boxes, larger
/// first.
pub fn render_two_faces(seed: u64) -> (RgbImage, FaceBox, FaceBox) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Subject::random("A", &mut rng);
    let b = Subject::random("B", &mut rng);
    let big = FaceSpec {
        x: 8.0,
        y: 12.0,
        width: 90.0,
        emotion: Emotion::Neutral,
        gaze: Gaze::Front,
    };
    let small = FaceSpec {
        x: 130.0,
        y: 40.0,
        width: 50.0,
        emotion: Emotion::Happy,
        gaze: Gaze::Front,
    };
    let boxes = (big.face_box(&a), small.face_box(&b));
    let img = render_scene(200, 130, &[(a, big), (b, small)], seed);
    (img, boxes.0, boxes.1)
}

/// In-memory balanced set of 256×256 face crops: `per_class` images of each
/// expression, subjects cycling through `subjects` ids, cropped with the
/// known face box. Ordered class-major.
pub fn labeled_faces(per_class: usize, subjects: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let people: Vec<Subject> = (0..subjects.max(1))
        .map(|i| Subject::random(&format!("S{:03}", i + 1), &mut rng))
        .collect();
    let mut out = Vec::with_capacity(per_class * 7);
    for emotion in Emotion::ALL {
        for k in 0..per_class {
            let subject = &people[k % people.len()];
            let gaze = [Gaze::Front, Gaze::Left, Gaze::Right][k % 3];
            let image_seed = rng.random::<u64>();
            let (img, face) = render_face(subject, emotion, gaze, (96, 96), image_seed);
            out.push(LabeledImage {
                key: format!("{}_{}_{k}", subject.id, emotion.name()),
                image: crop_resize_rgb(&img, &face)?,
                label: emotion,
            });
        }
    }
    Ok(out)
}

/// A blank solid-colour image of the given size.
pub fn blank_image(width: u32, height: u32, value: u8) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([value, value, value]))
}
