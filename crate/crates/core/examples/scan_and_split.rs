//! Scans a fixture dataset and splits it by image and by subject.
//!
//! cargo run --example scan_and_split

use std::collections::HashSet;

use fer_core::dataset::{make_split, save_manifest, scan_dataset, DatasetLayout, Split, SplitPolicy, SplitSizes};
use fer_core::synthetic::{generate_dataset, FixtureLayout, FixtureSpec};

fn main() -> fer_core::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path().join("rafd");
    let spec = FixtureSpec {
        layout: FixtureLayout::Rafd,
        subjects: 10,
        per_expression: 1,
        image_size: (96, 120),
        distractors: true,
        seed: 2,
    };
    generate_dataset(&root, &spec)?;

    let report = scan_dataset(&root, DatasetLayout::Rafd)?;
    println!("{} images, {} subjects, {} skipped", report.samples.len(), report.subject_count(), report.skipped.len());
    println!("per class: {:?}", report.per_class_counts());

    for policy in [SplitPolicy::ByImage, SplitPolicy::BySubject] {
        let m = make_split(&report.samples, SplitSizes::Ratios([0.7, 0.15, 0.15]), policy, 7)?;
        let subjects = |s: Split| m.split(s).iter().map(|x| x.subject_id.clone()).collect::<HashSet<_>>();
        println!(
            "{}: train {} val {} test {}, subjects shared by train and test: {}",
            policy.as_str(),
            m.split(Split::Train).len(),
            m.split(Split::Val).len(),
            m.split(Split::Test).len(),
            subjects(Split::Train).intersection(&subjects(Split::Test)).count()
        );
        save_manifest(&m, &dir.path().join(format!("{}.csv", policy.as_str())))?;
    }
    Ok(())
}
