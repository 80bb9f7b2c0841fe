//! Runs one experiment preset on a small fixture dataset.
//!
//! cargo run --release --example run_experiment -- [E1|E2|E3|E4] [epochs]

use fer_core::evaluation::{run_experiment, ExperimentPaths, ExperimentPreset};
use fer_core::synthetic::{generate_dataset, FixtureLayout, FixtureSpec};
use fer_core::trainer::TrainConfig;

fn main() -> fer_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let id = args.next().unwrap_or_else(|| "E1".into());
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let preset = ExperimentPreset::ALL
        .into_iter()
        .find(|p| p.id().eq_ignore_ascii_case(&id))
        .ok_or_else(|| fer_core::Error::InvalidInput(format!("unknown preset `{id}`")))?;

    let dir = tempfile::tempdir().expect("tempdir");
    let mut paths = ExperimentPaths::new(&dir.path().join("out"));
    for (layout, size) in [(FixtureLayout::Cfee, (96, 96)), (FixtureLayout::Rafd, (96, 120))] {
        let root = dir.path().join(format!("{layout:?}").to_lowercase());
        let spec = FixtureSpec {
            layout,
            subjects: 12,
            per_expression: 1,
            image_size: size,
            distractors: false,
            seed: 9,
        };
        generate_dataset(&root, &spec)?;
        match layout {
            FixtureLayout::Cfee => paths.cfee_root = Some(root),
            FixtureLayout::Rafd => paths.rafd_root = Some(root),
        }
    }

    let config = TrainConfig {
        epochs,
        batch_size: 16,
        seed: 21,
        ..TrainConfig::default()
    };
    println!("{}: {}", preset.id(), preset.description());
    let report = run_experiment(preset, &config, &paths)?;
    println!("{}", report.summary);
    println!(
        "accuracy {} on {} data (published {}), best epoch {}",
        report.accuracy,
        report.provenance.as_str(),
        preset.reference_accuracy(),
        report.best_epoch
    );
    Ok(())
}
