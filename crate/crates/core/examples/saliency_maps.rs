//! Spectral residual saliency of a face crop and of a square on a flat field.
//!
//! cargo run --example saliency_maps

use fer_core::image::GrayImage;
use fer_core::saliency::spectral_residual_saliency;
use fer_core::synthetic::labeled_faces;

fn main() -> fer_core::Result<()> {
    let square = GrayImage::from_fn(128, 128, |x, y| if (40..48).contains(&x) && (80..88).contains(&y) { 230 } else { 40 });
    let map = spectral_residual_saliency(&square)?;
    println!("square at (40..48, 80..88), saliency peak at {:?}", map.argmax());

    let faces = labeled_faces(1, 1, 3)?;
    let face = &faces[0];
    let map = spectral_residual_saliency(&face.image)?;
    let mean = map.values().iter().sum::<f64>() / map.values().len() as f64;
    println!("{} face: peak {:?}, mean saliency {mean:.3}", face.label.name(), map.argmax());

    let out = std::env::temp_dir().join("fer_saliency.png");
    map.save_png(&out)?;
    println!("map written to {}", out.display());
    Ok(())
}
