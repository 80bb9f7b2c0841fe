//! The `fer` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::ClassifierModel;
use crate::dataset::{load_manifest, make_split, save_manifest, scan_dataset, DatasetLayout, InputVariant, Split, SplitPolicy, SplitSizes};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_samples, overall_accuracy, parse_confusion_csv, render_reports, run_experiment, summary_text,
    write_summary, ExperimentPaths, ExperimentPreset,
};
use crate::face::{DetectorRegistry, NoFacePolicy, VIOLA_JONES};
use crate::pipeline::{load_labeled, preprocess_manifest, product_dirs, require_variant, saliency_manifest, with_jobs};
use crate::saliency::parse_backend;
use crate::trainer::{load_epoch_csv, save_epoch_csv, train, TrainConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "FER_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "fer_output";

#[derive(Debug, Parser)]
#[command(name = "fer", version, about = "Facial expression recognition pipeline", arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every random choice (splits, initialisation, shuffling, dropout).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-image stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count the labelled images of a dataset.
    Scan(ScanArgs),
    /// Partition a dataset into a train/val/test manifest.
    Split(SplitArgs),
    /// Detect, crop and resize faces to 256×256 grayscale.
    Preprocess(PreprocessArgs),
    /// Compute saliency maps for preprocessed faces.
    Saliency(SaliencyArgs),
    /// Multiply faces by their saliency maps.
    Product(ProductArgs),
    /// Train a classifier on a preprocessed manifest.
    Train(TrainArgs),
    /// Evaluate a model on a manifest split.
    Eval(EvalArgs),
    /// Run a cross-dataset experiment preset end to end.
    Experiment(ExperimentArgs),
    /// Re-render report files from saved CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "cfee")]
    pub layout: String,
    /// Directory for the scan report (default: $FER_OUTPUT_ROOT/scan).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "cfee")]
    pub layout: String,
    /// `train,val,test` fractions, or `counts:a,b,c`.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    /// by-image, by-subject or full-train.
    #[arg(long, default_value = "by-image")]
    pub policy: String,
    /// Manifest file to write (default: $FER_OUTPUT_ROOT/split/manifest.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// skip or full-frame.
    #[arg(long, default_value = "skip")]
    pub on_no_face: String,
    /// Face detector backend id.
    #[arg(long, default_value = VIOLA_JONES)]
    pub detector: String,
    /// OpenCV Haar cascade XML for the viola-jones detector.
    #[arg(long)]
    pub cascade: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    /// Manifest written by `preprocess`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// spectral, external:precomputed or external:command.
    #[arg(long, default_value = "spectral")]
    pub backend: String,
    /// Map directory or program for external backends.
    #[arg(long)]
    pub endpoint: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProductArgs {
    #[arg(long)]
    pub faces_dir: PathBuf,
    #[arg(long)]
    pub saliency_dir: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Stretch each product back to the full 0..255 range.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flat key=value training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// plain or saliency_product (overrides the config file).
    #[arg(long)]
    pub variant: Option<String>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Model file to write (default: $FER_OUTPUT_ROOT/train/model.fer).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "plain")]
    pub variant: String,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// E1, E2, E3 or E4.
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub cfee_root: Option<PathBuf>,
    #[arg(long)]
    pub rafd_root: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Face detector (default: synthetic for fixture data, else viola-jones).
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    #[arg(long, default_value = "skip")]
    pub on_no_face: String,
    #[arg(long, default_value = "spectral")]
    pub saliency_backend: String,
    #[arg(long)]
    pub saliency_endpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Confusion CSV written by `eval` or `experiment`.
    #[arg(long)]
    pub confusion: PathBuf,
    /// Epoch CSV written by `train` or `experiment`.
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

fn out_or_default(given: &Option<PathBuf>, sub: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| output_root().join(sub))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `<dir>/<command>.run.txt` with the parsed invocation.
fn echo_run(dir: &Path, command: &str, cli: &Cli) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(format!("{command}.run.txt"));
    let text = format!(
        "fer {}\nseed={}\njobs={}\n{:#?}\n",
        env!("CARGO_PKG_VERSION"),
        cli.seed.map_or("default".to_string(), |s| s.to_string()),
        cli.jobs.map_or("all".to_string(), |j| j.to_string()),
        cli.command
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn train_config(cli: &Cli, file: &Option<PathBuf>, overrides: &[String]) -> Result<TrainConfig> {
    let mut config = match file {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("--set expects KEY=VALUE, got `{o}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run_command(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Scan(a) => {
            let layout: DatasetLayout = a.layout.parse()?;
            let report = scan_dataset(&a.root, layout)?;
            let out = out_or_default(&a.out, "scan");
            echo_run(&out, "scan", cli)?;
            let mut text = report.to_string();
            for (p, why) in &report.skipped {
                text.push_str(&format!("skipped {}: {why}\n", p.display()));
            }
            let path = out.join("scan.txt");
            fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            print!("{report}");
        }
        Command::Split(a) => {
            let layout: DatasetLayout = a.layout.parse()?;
            let sizes: SplitSizes = a.ratios.parse()?;
            let policy: SplitPolicy = a.policy.parse()?;
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| output_root().join("split").join("manifest.csv"));
            let report = scan_dataset(&a.root, layout)?;
            let manifest = make_split(&report.samples, sizes, policy, seed)?;
            save_manifest(&manifest, &out)?;
            echo_run(&parent_dir(&out), "split", cli)?;
            println!(
                "{}: train {} / val {} / test {}",
                out.display(),
                manifest.train.len(),
                manifest.val.len(),
                manifest.test.len()
            );
        }
        Command::Preprocess(a) => {
            let loaded = load_manifest(&a.manifest)?;
            if loaded.has_missing() {
                return Err(Error::MissingArtifacts(loaded.missing));
            }
            let policy: NoFacePolicy = a.on_no_face.parse()?;
            let registry = DetectorRegistry::standard(a.cascade.as_deref())?;
            let detector = registry.get(&a.detector)?;
            let out = out_or_default(&a.out_dir, "faces");
            echo_run(&out, "preprocess", cli)?;
            let report = preprocess_manifest(&loaded.manifest, detector, policy, &out)?;
            println!(
                "{} faces written to {} ({} skipped, {} full-frame)",
                report.manifest.len(),
                out.display(),
                report.skipped.len(),
                report.full_frame.len()
            );
        }
        Command::Saliency(a) => {
            let loaded = load_manifest(&a.manifest)?;
            if loaded.has_missing() {
                return Err(Error::MissingArtifacts(loaded.missing));
            }
            let backend = parse_backend(&a.backend, a.endpoint.as_deref())?;
            let out = out_or_default(&a.out_dir, "saliency");
            echo_run(&out, "saliency", cli)?;
            let n = saliency_manifest(&loaded.manifest, backend.as_ref(), &out)?;
            println!("{n} saliency maps written to {}", out.display());
        }
        Command::Product(a) => {
            let out = out_or_default(&a.out_dir, "products");
            echo_run(&out, "product", cli)?;
            let n = product_dirs(&a.faces_dir, &a.saliency_dir, &out, a.renormalize)?;
            println!("{n} products written to {}", out.display());
        }
        Command::Train(a) => {
            let mut config = train_config(cli, &a.config, &a.overrides)?;
            if let Some(v) = &a.variant {
                config.input_variant = v.parse()?;
            }
            let loaded = load_manifest(&a.manifest)?;
            require_variant(&loaded.manifest, config.input_variant)?;
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| output_root().join("train").join("model.fer"));
            let dir = parent_dir(&out);
            echo_run(&dir, "train", cli)?;
            let train_set = load_labeled(&loaded.manifest.train)?;
            let val_set = load_labeled(&loaded.manifest.val)?;
            config.save(&sibling(&out, "_config.txt"))?;
            let outcome = train(config.build_model()?, &train_set, &val_set, &config)?;
            outcome.final_model.save(&out)?;
            outcome.best_model.save(&sibling(&out, "_best.fer"))?;
            save_epoch_csv(&outcome.records, &sibling(&out, "_epochs.csv"))?;
            println!(
                "{} steps over {} epochs; model {} (best validation epoch {})",
                outcome.steps,
                config.epochs,
                out.display(),
                outcome.best_epoch
            );
        }
        Command::Eval(a) => {
            let variant: InputVariant = a.variant.parse()?;
            let split: Split = a.split.parse()?;
            let model = ClassifierModel::load(&a.model)?;
            let loaded = load_manifest(&a.manifest)?;
            require_variant(&loaded.manifest, variant)?;
            let samples = loaded.manifest.split(split);
            if samples.is_empty() {
                return Err(Error::InvalidInput(format!("the {} split is empty", split.as_str())));
            }
            let out = out_or_default(&a.out_dir, "eval");
            echo_run(&out, "eval", cli)?;
            let evaluation = evaluate_samples(&model, samples)?;
            render_reports(&evaluation.matrix, &[], &out)?;
            let summary = summary_text(
                &format!("evaluation of {}", a.model.display()),
                &evaluation.matrix,
                &[
                    ("manifest".into(), a.manifest.display().to_string()),
                    ("split".into(), split.as_str().to_string()),
                    ("argmax ties".into(), evaluation.ties.to_string()),
                ],
            )?;
            write_summary(&out.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
        Command::Experiment(a) => {
            let preset: ExperimentPreset = a.preset.parse()?;
            let config = train_config(cli, &a.config, &a.overrides)?;
            let out = out_or_default(&a.out_dir, &format!("experiment_{preset}"));
            echo_run(&out, "experiment", cli)?;
            let paths = ExperimentPaths {
                cfee_root: a.cfee_root.clone(),
                rafd_root: a.rafd_root.clone(),
                out_dir: out,
                detector: a.detector.clone(),
                cascade: a.cascade.clone(),
                on_no_face: a.on_no_face.parse()?,
                saliency_backend: a.saliency_backend.clone(),
                saliency_endpoint: a.saliency_endpoint.clone(),
            };
            let report = run_experiment(preset, &config, &paths)?;
            print!("{}", report.summary);
        }
        Command::Report(a) => {
            let text = fs::read_to_string(&a.confusion).map_err(|e| Error::io(&a.confusion, e))?;
            let cm = parse_confusion_csv(&text)?;
            let records = match &a.epochs {
                Some(p) => load_epoch_csv(p)?,
                None => Vec::new(),
            };
            let out = out_or_default(&a.out_dir, "report");
            echo_run(&out, "report", cli)?;
            let files = render_reports(&cm, &records, &out)?;
            println!(
                "overall accuracy {}%; reports in {}",
                overall_accuracy(&cm)?,
                files.confusion_csv.parent().unwrap_or(&out).display()
            );
        }
    }
    Ok(())
}

/// Parses `argv` and runs it. Returns the process exit code: 0 on success,
/// 1 on a runtime failure (after printing `error[<category>]: <message>`),
/// 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default())
        .filter_level(level)
        .parse_default_env()
        .try_init();
    let result = with_jobs(cli.jobs, || run_command(&cli)).and_then(|r| r);
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["fer"]), 2);
        assert_eq!(dispatch(["fer", "bogus"]), 2);
        assert_eq!(dispatch(["fer", "split", "--nope"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        assert_eq!(dispatch(["fer", "scan", "--root", "/definitely/not/here"]), 1);
        assert_eq!(dispatch(["fer", "experiment", "--preset", "E7"]), 1);
    }

    #[test]
    fn config_overrides() {
        let cli = Cli::try_parse_from(["fer", "--seed", "9", "train", "--manifest", "m.csv"]).unwrap();
        let c = train_config(&cli, &None, &["epochs=3".into(), "lr_decay=none".into()]).unwrap();
        assert_eq!((c.epochs, c.seed), (3, 9));
        assert!(train_config(&cli, &None, &["epochs".into()]).is_err());
    }
}
