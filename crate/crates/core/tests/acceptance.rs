//! Acceptance criteria 1-8. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line, in order.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fer_core::classifier::{softmax, ClassifierModel, Example, ForwardPass, Mode, Signature};
use fer_core::dataset::{make_split, scan_dataset, DatasetLayout, ImageSample, SplitPolicy};
use fer_core::evaluation::{
    evaluate, overall_accuracy, per_class_accuracy, ConfusionMatrix, ExperimentPreset, Percent, CONFUSION_CSV,
    EPOCHS_CSV,
};
use fer_core::image::GrayImage;
use fer_core::product::scaled_product;
use fer_core::saliency::SaliencyMap;
use fer_core::synthetic::{generate_dataset, labeled_faces, FixtureLayout, FixtureSpec};
use fer_core::trainer::{cross_entropy_loss, lr_schedule, train, LabeledImage, LrDecay, TrainConfig};
use fer_core::Emotion;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// Published confusion matrices, rows true class, columns predicted.
const TABLE_1: [[u64; 7]; 7] = [
    [114, 0, 0, 0, 3, 84, 0],
    [8, 166, 0, 2, 20, 1, 4],
    [0, 0, 95, 0, 58, 16, 32],
    [2, 0, 2, 187, 7, 3, 0],
    [5, 0, 0, 0, 135, 59, 2],
    [3, 0, 0, 0, 10, 188, 0],
    [0, 0, 0, 0, 0, 0, 201],
];
const TABLE_1_PER_CLASS: [&str; 7] = ["56.72", "82.59", "47.26", "93.03", "67.16", "93.53", "100.0"];
const TABLE_2: [[u64; 7]; 7] = [
    [93, 78, 0, 0, 8, 22, 0],
    [16, 181, 0, 2, 2, 0, 0],
    [8, 17, 131, 2, 12, 11, 20],
    [2, 29, 2, 160, 0, 3, 5],
    [17, 41, 4, 1, 103, 31, 4],
    [22, 50, 2, 1, 29, 93, 4],
    [0, 2, 38, 0, 0, 2, 159],
];
const TABLE_2_PER_CLASS: [&str; 7] = ["46.27", "90.05", "65.17", "79.6", "51.24", "46.27", "79.1"];

fn criterion_1() -> Outcome {
    for (name, counts, published, overall) in [
        ("table 1", TABLE_1, TABLE_1_PER_CLASS, "77.19"),
        ("table 2", TABLE_2, TABLE_2_PER_CLASS, "65.39"),
    ] {
        let cm = ConfusionMatrix::from_rows(counts);
        let got = per_class_accuracy(&cm);
        for (i, text) in published.iter().enumerate() {
            let want = Percent::parse(text).unwrap();
            check(got[i] == Some(want), format!("{name} row {i}: got {:?}, published {text}", got[i]))?;
        }
        let acc = overall_accuracy(&cm).map_err(|e| e.to_string())?;
        check(acc == Percent::parse(overall).unwrap(), format!("{name} overall {acc} vs {overall}"))?;
    }
    Ok("14 per-class values and 77.19% / 65.39% reproduced exactly".into())
}

fn partition_ok(all: &[ImageSample], parts: [&[ImageSample]; 3], by_subject: bool) -> Result<(), String> {
    let mut seen: HashSet<&Path> = HashSet::new();
    for part in parts {
        for s in part {
            check(seen.insert(&s.image_path), format!("{} assigned twice", s.image_path.display()))?;
        }
    }
    let input: HashSet<&Path> = all.iter().map(|s| s.image_path.as_path()).collect();
    check(seen == input, "split is not a partition of the input")?;
    if by_subject {
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (k, part) in parts.iter().enumerate() {
            for s in *part {
                let prev = *owner.entry(&s.subject_id).or_insert(k);
                check(prev == k, format!("subject {} in two splits", s.subject_id))?;
            }
        }
    }
    Ok(())
}

fn criterion_2(work: &Path) -> Outcome {
    let mut lines = Vec::new();
    for (preset, spec, layout, want) in [
        (ExperimentPreset::E1, FixtureSpec::cfee_full(11), DatasetLayout::Cfee, [1127, 245, 238]),
        (ExperimentPreset::E2, FixtureSpec::rafd_full(12), DatasetLayout::Rafd, [987, 210, 210]),
    ] {
        let root = work.join(format!("split_{preset}"));
        generate_dataset(&root, &spec).map_err(|e| e.to_string())?;
        let samples = scan_dataset(&root, layout).map_err(|e| e.to_string())?.samples;
        let n = samples.len();
        let sizes = preset.split_sizes(n).ok_or("preset has no split")?;
        let policy = if preset == ExperimentPreset::E2 {
            SplitPolicy::BySubject
        } else {
            SplitPolicy::ByImage
        };
        for seed in 0..100 {
            let m = make_split(&samples, sizes, policy, seed).map_err(|e| e.to_string())?;
            let got = [m.train.len(), m.val.len(), m.test.len()];
            check(got == want, format!("{preset} seed {seed}: sizes {got:?}, want {want:?}"))?;
            partition_ok(&samples, [&m.train, &m.val, &m.test], policy == SplitPolicy::BySubject)
                .map_err(|e| format!("{preset} seed {seed}: {e}"))?;
        }
        lines.push(format!("{preset} {n} images -> {want:?}"));
    }
    Ok(format!("{} over 100 seeds each", lines.join(", ")))
}

fn criterion_3() -> Outcome {
    let config = TrainConfig {
        base_lr: 0.01,
        epochs: 100,
        lr_decay: LrDecay::Linear,
        ..TrainConfig::default()
    };
    for (epoch, want) in [(0, 0.01), (50, 0.005), (99, 0.0001)] {
        let lr = lr_schedule(&config, epoch).map_err(|e| e.to_string())?;
        check((lr - want).abs() <= 1e-12, format!("lr({epoch}) = {lr:e}, want {want:e}"))?;
    }
    Ok("lr(0)=0.01, lr(50)=0.005, lr(99)=0.0001 within 1e-12".into())
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pixels = 0usize;
    for pair in 0..50 {
        let (w, h) = (rng.random_range(8..80), rng.random_range(8..80));
        let face = GrayImage::from_fn(w, h, |_, _| rng.random());
        let s1: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        let s2: Vec<f64> = s1.iter().map(|v| (v + rng.random::<f64>() * (1.0 - v)).min(1.0)).collect();
        let map = |v: Vec<f64>| SaliencyMap::from_unit_values(w, h, v).map_err(|e| e.to_string());
        let ones = scaled_product(&face, &map(vec![1.0; w * h])?).map_err(|e| e.to_string())?;
        let zeros = scaled_product(&face, &map(vec![0.0; w * h])?).map_err(|e| e.to_string())?;
        let p1 = scaled_product(&face, &map(s1.clone())?).map_err(|e| e.to_string())?;
        let p2 = scaled_product(&face, &map(s2.clone())?).map_err(|e| e.to_string())?;
        check(ones == face, format!("pair {pair}: saliency 1 changed the image"))?;
        check(zeros.pixels().iter().all(|&p| p == 0), format!("pair {pair}: saliency 0 left light"))?;
        for (i, &s) in s1.iter().enumerate() {
            let f = face.pixels()[i];
            let (a, b) = (p1.pixels()[i], p2.pixels()[i]);
            check(a <= f && b <= f, format!("pair {pair} pixel {i}: brightened"))?;
            check(a <= b, format!("pair {pair} pixel {i}: not monotone in saliency"))?;
            let exact = (f as f64 * s + 0.5).floor() as u8;
            check(a == exact, format!("pair {pair} pixel {i}: {a} vs {exact}"))?;
        }
        pixels += w * h;
    }
    Ok(format!("identity, annihilator, attenuation, monotonicity on 50 pairs ({pixels} pixels)"))
}

fn mean_loss(logits: &[[f64; 7]], batch: &[LabeledImage]) -> f64 {
    logits
        .iter()
        .zip(batch)
        .map(|(l, item)| cross_entropy_loss(&softmax(l).unwrap(), item.label))
        .sum::<f64>()
        / batch.len() as f64
}

fn batch_loss(model: &ClassifierModel, batch: &[LabeledImage], seed: u64) -> (f64, ForwardKey) {
    let examples: Vec<Example> = batch.iter().map(LabeledImage::example).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pass = model.forward(&examples, Mode::Train(&mut rng)).unwrap();
    (mean_loss(&pass.logits, batch), pass.signatures())
}

fn piece_loss(model: &ClassifierModel, batch: &[LabeledImage], around: &ForwardPass) -> f64 {
    let examples: Vec<Example> = batch.iter().map(LabeledImage::example).collect();
    mean_loss(&model.forward_on_piece(&examples, around).unwrap(), batch)
}

type ForwardKey = Vec<Option<Signature>>;

fn criterion_5() -> Outcome {
    const EPS: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    const PER_TENSOR: usize = 40;
    let mut worst: HashMap<String, f64> = HashMap::new();
    let (mut checked, mut kinks) = (0, 0);
    for seed in [1u64, 2, 3] {
        let faces = labeled_faces(1, 7, 100 + seed).map_err(|e| e.to_string())?;
        let batch: Vec<LabeledImage> = faces.into_iter().skip(seed as usize).take(4).collect();
        let mut model = ClassifierModel::reference(seed, 0.5).map_err(|e| e.to_string())?;
        model.input_mean = 0.4;
        let examples: Vec<Example> = batch.iter().map(LabeledImage::example).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pass = model.forward(&examples, Mode::Train(&mut rng)).map_err(|e| e.to_string())?;
        let labels: Vec<Emotion> = batch.iter().map(|b| b.label).collect();
        let analytic = model.backward(&pass, &labels).map_err(|e| e.to_string())?.grads;
        let base_key = pass.signatures();

        let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
        let names: Vec<String> = model.params.iter().map(|t| t.name.clone()).collect();
        for name in &names {
            let grad = &analytic.get(name).unwrap().data;
            let n = grad.len();
            let mut indices: Vec<usize> = if n <= PER_TENSOR {
                (0..n).collect()
            } else {
                // half at random, half where the gradient is largest
                let mut by_size: Vec<usize> = (0..n).collect();
                by_size.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
                let mut v: Vec<usize> = sample(&mut pick, n, PER_TENSOR / 2).into_vec();
                v.extend(by_size.into_iter().take(PER_TENSOR / 2));
                v
            };
            indices.sort_unstable();
            indices.dedup();
            for i in indices {
                let original = model.params.get(name).unwrap().data[i];
                model.params.get_mut(name).unwrap().data[i] = original + EPS;
                let (mut up, key_up) = batch_loss(&model, &batch, seed);
                model.params.get_mut(name).unwrap().data[i] = original - EPS;
                let (mut down, key_down) = batch_loss(&model, &batch, seed);
                if key_up != base_key || key_down != base_key {
                    // a gate flipped inside the stencil: difference on the base piece
                    down = piece_loss(&model, &batch, &pass);
                    model.params.get_mut(name).unwrap().data[i] = original + EPS;
                    up = piece_loss(&model, &batch, &pass);
                    kinks += 1;
                }
                model.params.get_mut(name).unwrap().data[i] = original;
                let numeric = (up - down) / (2.0 * EPS);
                let a = grad[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                check(
                    rel <= TOL,
                    format!("seed {seed} {name}[{i}]: analytic {a:e}, numeric {numeric:e}, rel {rel:e}"),
                )?;
                let w = worst.entry(name.clone()).or_insert(0.0);
                *w = w.max(rel);
                checked += 1;
            }
        }
    }
    check(worst.len() == 8, format!("only {} tensors checked", worst.len()))?;
    let max = worst.values().copied().fold(0.0, f64::max);
    Ok(format!(
        "8 tensors x 3 seeds, {checked} entries, max rel err {max:.2e} ({kinks} differenced on the base linear piece)"
    ))
}

fn criterion_6() -> Outcome {
    let pool = labeled_faces(5, 12, 1).map_err(|e| e.to_string())?;
    // round-robin over classes: 5,5,5,5,4,4,4
    let set: Vec<LabeledImage> = (0..5)
        .flat_map(|k| (0..7).map(move |c| c * 5 + k))
        .map(|i| pool[i].clone())
        .take(32)
        .collect();
    let config = TrainConfig {
        base_lr: 0.01,
        epochs: 200,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = ClassifierModel::reference(3, config.dropout_p).map_err(|e| e.to_string())?;
    let outcome = train(model, &set, &[], &config).map_err(|e| e.to_string())?;
    let cm = evaluate(&outcome.final_model, &set).map_err(|e| e.to_string())?.matrix;
    let acc = overall_accuracy(&cm).map_err(|e| e.to_string())?;
    let last = outcome.records.last().unwrap().train_loss;
    check(acc >= Percent(9500), format!("training accuracy {acc}% after 200 epochs"))?;
    Ok(format!("training accuracy {acc}% on 32 images after 200 epochs (final loss {last:.4})"))
}

fn criterion_7() -> Outcome {
    let set = labeled_faces(100, 50, 7).map_err(|e| e.to_string())?;
    let mut model = ClassifierModel::reference(7, 0.5).map_err(|e| e.to_string())?;
    model.input_mean = set.iter().map(|s| s.image.mean() / 255.0).sum::<f64>() / set.len() as f64;
    let cm = evaluate(&model, &set).map_err(|e| e.to_string())?.matrix;
    let acc = cm.trace() as f64 / cm.total() as f64;
    let used = (0..7).filter(|&j| (0..7).any(|i| cm.counts[i][j] > 0)).count();
    check(cm.total() == 700, "expected 700 predictions")?;
    check((acc - 1.0 / 7.0).abs() <= 0.05, format!("accuracy {acc:.4} outside 1/7 +- 0.05"))?;
    Ok(format!("accuracy {acc:.4} on 700 images ({used} classes predicted)"))
}

fn strip_seconds(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap_or("").split(',').collect();
    let col = header.iter().position(|h| *h == "seconds");
    csv.lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| Some(*i) != col)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_8(work: &Path) -> Outcome {
    let root = work.join("det_cfee");
    let spec = FixtureSpec {
        layout: FixtureLayout::Cfee,
        subjects: 12,
        per_expression: 1,
        image_size: (96, 96),
        distractors: true,
        seed: 8,
    };
    generate_dataset(&root, &spec).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<PathBuf, String> {
        let out = work.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_fer"))
            .args(["--seed", "21", "experiment", "--preset", "E1", "--cfee-root"])
            .arg(&root)
            .arg("--out-dir")
            .arg(&out)
            .args(["--set", "epochs=3", "--set", "batch_size=8"])
            .output()
            .map_err(|e| e.to_string())?;
        check(
            status.status.success(),
            format!("{name} failed: {}", String::from_utf8_lossy(&status.stderr)),
        )?;
        Ok(out)
    };
    let (a, b) = (run("det_run_a")?, run("det_run_b")?);
    let read = |dir: &Path, f: &str| fs::read_to_string(dir.join(f)).map_err(|e| format!("{f}: {e}"));
    check(read(&a, CONFUSION_CSV)? == read(&b, CONFUSION_CSV)?, "confusion CSVs differ")?;
    let (ea, eb) = (read(&a, EPOCHS_CSV)?, read(&b, EPOCHS_CSV)?);
    check(strip_seconds(&ea) == strip_seconds(&eb), "epoch CSVs differ outside the seconds column")?;
    check(ea.lines().count() == 4, "expected 3 epoch rows")?;
    Ok("two seeded E1 runs: identical confusion.csv and epochs.csv (seconds excluded)".into())
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let work = tempfile::tempdir().expect("temp dir");
    type Criterion<'a> = (usize, &'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "table arithmetic", Box::new(criterion_1)),
        (2, "split sizes", Box::new(|| criterion_2(work.path()))),
        (3, "lr schedule", Box::new(criterion_3)),
        (4, "product algebra", Box::new(criterion_4)),
        (5, "gradient check", Box::new(criterion_5)),
        (6, "overfit sanity", Box::new(criterion_6)),
        (7, "chance baseline", Box::new(criterion_7)),
        (8, "determinism", Box::new(|| criterion_8(work.path()))),
    ];
    let mut failed = 0;
    for (n, name, f) in &criteria {
        let label = format!("criterion {n} ({name})");
        if !filter.is_empty() && !filter.iter().any(|x| label.contains(x.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("{label}: PASS [{secs:.1}s] {msg}"),
            Err(msg) => {
                failed += 1;
                println!("{label}: FAIL [{secs:.1}s] {msg}");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
