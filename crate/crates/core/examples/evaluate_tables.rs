//! Per-class and overall accuracy of a confusion matrix, plus the report files.
//!
//! cargo run --example evaluate_tables

use fer_core::evaluation::{overall_accuracy, per_class_accuracy, render_reports, summary_text, ConfusionMatrix};

fn main() -> fer_core::Result<()> {
    let cm = ConfusionMatrix::from_rows([
        [114, 0, 0, 0, 3, 84, 0],
        [8, 166, 0, 2, 20, 1, 4],
        [0, 0, 95, 0, 58, 16, 32],
        [2, 0, 2, 187, 7, 3, 0],
        [5, 0, 0, 0, 135, 59, 2],
        [3, 0, 0, 0, 10, 188, 0],
        [0, 0, 0, 0, 0, 0, 201],
    ]);
    for (i, acc) in per_class_accuracy(&cm).iter().enumerate() {
        println!("class {i}: {}", acc.map(|a| a.to_string()).unwrap_or_else(|| "n/a".into()));
    }
    println!("overall: {}", overall_accuracy(&cm)?);
    println!("{}", summary_text("example matrix", &cm, &[])?);

    let dir = std::env::temp_dir().join("fer_tables");
    let files = render_reports(&cm, &[], &dir)?;
    println!("wrote {} and {}", files.confusion_csv.display(), files.per_class_csv.display());
    Ok(())
}
