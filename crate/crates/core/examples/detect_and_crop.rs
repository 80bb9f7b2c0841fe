//! Finds the face in a drawn scene and crops it to 256x256.
//!
//! cargo run --example detect_and_crop -- [cascade.xml]

use std::path::{Path, PathBuf};

use fer_core::dataset::Gaze;
use fer_core::face::{crop_resize_gray, detect_face, DetectorRegistry, SYNTHETIC, VIOLA_JONES};
use fer_core::image::rgb_to_gray;
use fer_core::synthetic::{render_face, Subject};
use fer_core::Emotion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fer_core::Result<()> {
    let cascade = std::env::args().nth(1).map(PathBuf::from);
    let registry = DetectorRegistry::standard(cascade.as_deref())?;
    println!("detectors: {:?}", registry.known());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let subject = Subject::random("07", &mut rng);
    let (rgb, truth) = render_face(&subject, Emotion::Happy, Gaze::Front, (96, 96), 4);
    let gray = rgb_to_gray(&rgb);

    let id = if cascade.is_some() { VIOLA_JONES } else { SYNTHETIC };
    let found = detect_face(&gray, registry.get(id)?, Path::new("scene"))?;
    println!("drawn face {truth:?}");
    println!("{id} found {found:?}, IoU {:.3}", found.iou(&truth));

    let crop = crop_resize_gray(&gray, &found)?;
    let out = std::env::temp_dir().join("fer_face_crop.png");
    crop.save_png(&out)?;
    println!("{}x{} crop written to {}", crop.width(), crop.height(), out.display());
    Ok(())
}
