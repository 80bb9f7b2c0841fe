//! Report files: confusion CSV, per-class CSV, epoch CSV and a training
//! curve PNG drawn without any plotting library.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{per_class_accuracy, ConfusionMatrix, Percent};
use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::trainer::{save_epoch_csv, EpochRecord};

pub const CONFUSION_CSV: &str = "confusion.csv";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const PLOT_PNG: &str = "training_curve.png";

const CORNER: &str = "true\\predicted";
const ACCURACY_ROW: &str = "per_class_accuracy";
const UNDEFINED: &str = "NA";

/// 8×8 label/count grid followed by the per-class accuracy row.
pub fn write_confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from(CORNER);
    for e in Emotion::ALL {
        s.push(',');
        s.push_str(e.name());
    }
    s.push('\n');
    for e in Emotion::ALL {
        s.push_str(e.name());
        for c in cm.counts[e.index()] {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s.push_str(ACCURACY_ROW);
    for acc in per_class_accuracy(cm) {
        s.push(',');
        s.push_str(&acc.map_or(UNDEFINED.to_string(), |p| p.to_string()));
    }
    s.push('\n');
    s
}

/// Reads the count grid back from [`write_confusion_csv`] output.
pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let bad = |m: String| Error::InvalidInput(format!("confusion CSV: {m}"));
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    if rows.len() < NUM_CLASSES + 1 {
        return Err(bad(format!("expected at least {} rows", NUM_CLASSES + 1)));
    }
    let header: Vec<&str> = rows[0].iter().skip(1).collect();
    let names: Vec<&str> = Emotion::ALL.iter().map(|e| e.name()).collect();
    if header != names {
        return Err(bad(format!("column labels {header:?} are not in canonical order")));
    }
    let mut cm = ConfusionMatrix::new();
    for (i, e) in Emotion::ALL.iter().enumerate() {
        let row = &rows[i + 1];
        if row.get(0) != Some(e.name()) || row.len() != NUM_CLASSES + 1 {
            return Err(bad(format!("row {} should be `{}` with 7 counts", i + 2, e.name())));
        }
        for j in 0..NUM_CLASSES {
            cm.counts[i][j] = row[j + 1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad count `{}`", &row[j + 1])))?;
        }
    }
    Ok(cm)
}

fn per_class_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("emotion,correct,total,accuracy\n");
    for (e, acc) in Emotion::ALL.iter().zip(per_class_accuracy(cm)) {
        s.push_str(&format!(
            "{},{},{},{}\n",
            e.name(),
            cm.counts[e.index()][e.index()],
            cm.row_sum(*e),
            acc.map_or(UNDEFINED.to_string(), |p: Percent| p.to_string())
        ));
    }
    s
}

/// Where the plot put things, for checking axis contracts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotLayout {
    pub width: u32,
    pub height: u32,
    /// Epoch at the left and right ends of the x axis.
    pub x_range: (f64, f64),
    /// Loss at the bottom and top of the left axis (accuracy always 0..1).
    pub loss_range: (f64, f64),
}

const TRAIN_LOSS_COLOUR: Rgb<u8> = Rgb([31, 119, 180]);
const VAL_LOSS_COLOUR: Rgb<u8> = Rgb([44, 160, 44]);
const VAL_ACC_COLOUR: Rgb<u8> = Rgb([255, 127, 14]);
const AXIS_COLOUR: Rgb<u8> = Rgb([40, 40, 40]);
const GRID_COLOUR: Rgb<u8> = Rgb([225, 225, 225]);

struct Frame {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>, thick: i64) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as i64).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.0 + t * (b.0 - a.0)).round() as i64;
        let y = (a.1 + t * (b.1 - a.1)).round() as i64;
        for dy in -(thick / 2)..=(thick / 2) {
            for dx in -(thick / 2)..=(thick / 2) {
                put(img, x + dx, y + dy, c);
            }
        }
    }
}

fn series(img: &mut RgbImage, points: &[(f64, f64)], c: Rgb<u8>) {
    match points {
        [] => {}
        [p] => line(img, (p.0 - 3.0, p.1), (p.0 + 3.0, p.1), c, 3),
        _ => {
            for w in points.windows(2) {
                line(img, w[0], w[1], c, 2);
            }
        }
    }
}

/// Training loss (blue), validation loss (green) against the left axis and
/// validation accuracy (orange) against a 0..1 right axis.
pub fn render_plot(records: &[EpochRecord]) -> Result<(RgbImage, PlotLayout)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no epoch records to plot".into()));
    }
    let (width, height) = (800u32, 480u32);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let f = Frame {
        left: 60.0,
        right: width as f64 - 60.0,
        top: 30.0,
        bottom: height as f64 - 50.0,
    };
    let first = records.first().unwrap().epoch as f64;
    let last = records.last().unwrap().epoch as f64;
    let x_range = (first, if last > first { last } else { first + 1.0 });
    let max_loss = records
        .iter()
        .flat_map(|r| [Some(r.train_loss), r.val_loss])
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let loss_range = (0.0, if max_loss > 0.0 { max_loss * 1.05 } else { 1.0 });

    let px = |epoch: f64| f.left + (epoch - x_range.0) / (x_range.1 - x_range.0) * (f.right - f.left);
    let py = |v: f64, (lo, hi): (f64, f64)| f.bottom - (v - lo) / (hi - lo) * (f.bottom - f.top);

    for k in 0..=10 {
        let y = f.top + (f.bottom - f.top) * k as f64 / 10.0;
        line(&mut img, (f.left, y), (f.right, y), GRID_COLOUR, 1);
        line(&mut img, (f.left - 5.0, y), (f.left, y), AXIS_COLOUR, 1);
        line(&mut img, (f.right, y), (f.right + 5.0, y), AXIS_COLOUR, 1);
    }
    let ticks = ((x_range.1 - x_range.0) as usize).clamp(1, 10);
    for k in 0..=ticks {
        let x = f.left + (f.right - f.left) * k as f64 / ticks as f64;
        line(&mut img, (x, f.bottom), (x, f.bottom + 5.0), AXIS_COLOUR, 1);
    }
    line(&mut img, (f.left, f.top), (f.left, f.bottom), AXIS_COLOUR, 1);
    line(&mut img, (f.right, f.top), (f.right, f.bottom), AXIS_COLOUR, 1);
    line(&mut img, (f.left, f.bottom), (f.right, f.bottom), AXIS_COLOUR, 1);

    let pts = |get: &dyn Fn(&EpochRecord) -> Option<f64>, range: (f64, f64)| -> Vec<(f64, f64)> {
        records
            .iter()
            .filter_map(|r| get(r).filter(|v| v.is_finite()).map(|v| (px(r.epoch as f64), py(v, range))))
            .collect()
    };
    series(&mut img, &pts(&|r| Some(r.train_loss), loss_range), TRAIN_LOSS_COLOUR);
    series(&mut img, &pts(&|r| r.val_loss, loss_range), VAL_LOSS_COLOUR);
    series(&mut img, &pts(&|r| r.val_acc, (0.0, 1.0)), VAL_ACC_COLOUR);

    for (i, c) in [TRAIN_LOSS_COLOUR, VAL_LOSS_COLOUR, VAL_ACC_COLOUR].into_iter().enumerate() {
        let x = f.left + 10.0 + 60.0 * i as f64;
        line(&mut img, (x, 12.0), (x + 40.0, 12.0), c, 5);
    }

    Ok((
        img,
        PlotLayout {
            width,
            height,
            x_range,
            loss_range,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub confusion_csv: PathBuf,
    pub per_class_csv: PathBuf,
    pub epochs_csv: Option<PathBuf>,
    pub plot_png: Option<PathBuf>,
    pub plot: Option<PlotLayout>,
}

/// Writes the confusion and per-class CSVs and, given epoch records, the
/// epoch CSV and the training-curve plot.
pub fn render_reports(cm: &ConfusionMatrix, records: &[EpochRecord], out_dir: &Path) -> Result<ReportFiles> {
    if cm.total() == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let confusion_csv = out_dir.join(CONFUSION_CSV);
    fs::write(&confusion_csv, write_confusion_csv(cm)).map_err(|e| Error::io(&confusion_csv, e))?;
    let per_class = out_dir.join(PER_CLASS_CSV);
    fs::write(&per_class, per_class_csv(cm)).map_err(|e| Error::io(&per_class, e))?;
    let mut files = ReportFiles {
        confusion_csv,
        per_class_csv: per_class,
        epochs_csv: None,
        plot_png: None,
        plot: None,
    };
    if !records.is_empty() {
        let epochs = out_dir.join(EPOCHS_CSV);
        save_epoch_csv(records, &epochs)?;
        let (img, layout) = render_plot(records)?;
        let plot = out_dir.join(PLOT_PNG);
        img.save(&plot).map_err(|e| Error::image(&plot, e))?;
        files.epochs_csv = Some(epochs);
        files.plot_png = Some(plot);
        files.plot = Some(layout);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            lr: 0.01,
            train_loss: 2.0 / (epoch + 1) as f64,
            val_loss: Some(2.5 / (epoch + 1) as f64),
            val_acc: Some(epoch as f64 / 100.0),
            seconds: 0.1,
        }
    }

    #[test]
    fn confusion_csv_round_trip() {
        let mut cm = ConfusionMatrix::new();
        cm.counts[0] = [114, 0, 0, 0, 3, 84, 0];
        cm.counts[6] = [0, 0, 0, 0, 0, 0, 201];
        let text = write_confusion_csv(&cm);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "true\\predicted,Angry,Disgusted,Fearful,Happy,Neutral,Sad,Surprised");
        assert_eq!(lines[1], "Angry,114,0,0,0,3,84,0");
        assert_eq!(lines[8], "per_class_accuracy,56.72,NA,NA,NA,NA,NA,100.00");
        assert_eq!(parse_confusion_csv(&text).unwrap(), cm);
        assert!(parse_confusion_csv("a,b\n").is_err());
    }

    #[test]
    fn single_record_plot() {
        let (img, layout) = render_plot(&[record(0)]).unwrap();
        assert_eq!((img.width(), img.height()), (800, 480));
        assert_eq!(layout.x_range, (0.0, 1.0));
    }

    #[test]
    fn hundred_record_axis() {
        let records: Vec<_> = (0..100).map(record).collect();
        let (img, layout) = render_plot(&records).unwrap();
        assert_eq!(layout.x_range, (0.0, 99.0));
        assert!(img.pixels().any(|p| *p == TRAIN_LOSS_COLOUR));
        assert!(img.pixels().any(|p| *p == VAL_ACC_COLOUR));
        assert!(render_plot(&[]).is_err());
    }

    #[test]
    fn report_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cm = ConfusionMatrix::new();
        cm.counts[2][2] = 4;
        let files = render_reports(&cm, &[record(0), record(1)], &dir.path().join("r")).unwrap();
        assert!(files.confusion_csv.is_file());
        assert!(files.plot_png.unwrap().is_file());
        let pc = fs::read_to_string(files.per_class_csv).unwrap();
        assert!(pc.contains("Fearful,4,4,100.00"));
    }

    #[test]
    fn unwritable_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let mut cm = ConfusionMatrix::new();
        cm.counts[0][0] = 1;
        let err = render_reports(&cm, &[], &blocker.join("sub")).unwrap_err();
        assert_eq!(err.category(), "io");
    }
}
