//! Draws small synthetic datasets in both on-disk layouts.
//!
//! cargo run --example generate_fixtures -- [out_dir]

use std::path::PathBuf;

use fer_core::synthetic::{generate_dataset, FixtureLayout, FixtureSpec};

fn main() -> fer_core::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures".into());
    for (name, layout, size) in [("cfee", FixtureLayout::Cfee, (96, 96)), ("rafd", FixtureLayout::Rafd, (96, 120))] {
        let spec = FixtureSpec {
            layout,
            subjects: 8,
            per_expression: 1,
            image_size: size,
            distractors: true,
            seed: 1,
        };
        let images = generate_dataset(&out.join(name), &spec)?;
        println!("{name}: {} images in {}", images.len(), out.join(name).display());
    }
    Ok(())
}
