//! Multiplies a face crop by its saliency map.
//!
//! cargo run --example saliency_product

use fer_core::product::{renormalize, scaled_product};
use fer_core::saliency::spectral_residual_saliency;
use fer_core::synthetic::labeled_faces;

fn main() -> fer_core::Result<()> {
    let face = labeled_faces(1, 1, 5)?.remove(0).image;
    let map = spectral_residual_saliency(&face)?;
    let product = scaled_product(&face, &map)?;
    let stretched = renormalize(&product);
    println!("face      mean {:.1} range {:?}", face.mean(), face.min_max());
    println!("product   mean {:.1} range {:?}", product.mean(), product.min_max());
    println!("stretched mean {:.1} range {:?}", stretched.mean(), stretched.min_max());
    let out = std::env::temp_dir().join("fer_product.png");
    product.save_png(&out)?;
    println!("product written to {}", out.display());
    Ok(())
}
