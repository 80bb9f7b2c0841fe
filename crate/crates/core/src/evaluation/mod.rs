//! Confusion matrices, accuracies, report files and experiment presets.

mod experiment;
mod report;

use std::fmt;
use std::path::Path;

use log::info;

use crate::classifier::{argmax, ClassifierModel, Example};
use crate::dataset::ImageSample;
use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::pipeline::load_labeled;
use crate::trainer::LabeledImage;

pub use experiment::{
    run_experiment, ExperimentPaths, ExperimentPreset, ExperimentReport, Provenance, TestSet, TrainSource,
};
pub use report::{
    parse_confusion_csv, render_plot, render_reports, write_confusion_csv, PlotLayout, ReportFiles, CONFUSION_CSV,
    EPOCHS_CSV, PER_CLASS_CSV, PLOT_PNG,
};

/// A percentage held as integer hundredths, so 56.72% is `Percent(5672)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(pub u32);

impl Percent {
    /// `100 · num / den` rounded half-up to two decimals, in exact integer
    /// arithmetic.
    pub fn from_ratio(num: u64, den: u64) -> Option<Percent> {
        if den == 0 {
            return None;
        }
        let scaled = 2 * 10_000 * num as u128 + den as u128;
        Some(Percent((scaled / (2 * den as u128)) as u32))
    }

    /// Parses `77.19`, `79.6`, `100` or `100.0`.
    pub fn parse(text: &str) -> Option<Percent> {
        let text = text.trim().trim_end_matches('%');
        let (int, frac) = text.split_once('.').unwrap_or((text, ""));
        if frac.len() > 2 || int.is_empty() {
            return None;
        }
        let int: u32 = int.parse().ok()?;
        let frac: u32 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<2}").parse().ok()?
        };
        Some(Percent(int * 100 + frac))
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Rows are true classes, columns predictions, both in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        ConfusionMatrix::default()
    }

    pub fn from_rows(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Emotion, predicted: Emotion) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: Emotion) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

/// Diagonal over row sum per class; `None` for a class with no test images.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> [Option<Percent>; NUM_CLASSES] {
    let mut out = [None; NUM_CLASSES];
    for e in Emotion::ALL {
        out[e.index()] = Percent::from_ratio(cm.counts[e.index()][e.index()], cm.row_sum(e));
    }
    out
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<Percent> {
    Percent::from_ratio(cm.trace(), cm.total())
        .ok_or_else(|| Error::InvalidInput("accuracy of an empty confusion matrix".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub matrix: ConfusionMatrix,
    /// Images whose top probability was shared by several classes.
    pub ties: usize,
}

/// Eval-mode predictions for `images`, accumulated into a confusion matrix.
pub fn evaluate(model: &ClassifierModel, images: &[LabeledImage]) -> Result<Evaluation> {
    let examples: Vec<Example> = images.iter().map(LabeledImage::example).collect();
    let logits = model.predict(&examples)?;
    let mut matrix = ConfusionMatrix::new();
    let mut ties = 0;
    for (l, item) in logits.iter().zip(images) {
        let (best, tie) = argmax(l);
        if tie {
            ties += 1;
        }
        matrix.record(item.label, model.class_order[best]);
    }
    if ties > 0 {
        info!("{ties} of {} predictions were ties (lowest class index taken)", images.len());
    }
    Ok(Evaluation { matrix, ties })
}

/// Loads the preprocessed images behind `samples` and evaluates them.
pub fn evaluate_samples(model: &ClassifierModel, samples: &[ImageSample]) -> Result<Evaluation> {
    evaluate(model, &load_labeled(samples)?)
}

/// Plain-text summary of one evaluation.
pub fn summary_text(title: &str, cm: &ConfusionMatrix, extra: &[(String, String)]) -> Result<String> {
    let mut s = format!("{title}\n");
    for (k, v) in extra {
        s.push_str(&format!("{k}: {v}\n"));
    }
    s.push_str(&format!("test images: {}\n", cm.total()));
    s.push_str(&format!("overall accuracy: {}%\n", overall_accuracy(cm)?));
    s.push_str("per-class accuracy:\n");
    for (e, acc) in Emotion::ALL.iter().zip(per_class_accuracy(cm)) {
        let value = acc.map_or("undefined (no test images)".to_string(), |p| format!("{p}%"));
        s.push_str(&format!("  {:<10} {value}\n", e.name()));
    }
    Ok(s)
}

pub fn write_summary(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
