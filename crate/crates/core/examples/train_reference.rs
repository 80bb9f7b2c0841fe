//! Trains the reference network on drawn faces and scores a held-out set.
//!
//! cargo run --release --example train_reference -- [epochs]

use fer_core::classifier::ClassifierModel;
use fer_core::evaluation::{evaluate, overall_accuracy};
use fer_core::synthetic::labeled_faces;
use fer_core::trainer::{loss_and_accuracy, train, TrainConfig};

fn main() -> fer_core::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let train_set = labeled_faces(12, 12, 1)?;
    let test_set = labeled_faces(4, 6, 2)?;
    let config = TrainConfig {
        epochs,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = ClassifierModel::reference(config.seed, config.dropout_p)?;
    println!("{} parameters, {} training images", model.parameter_count(), train_set.len());
    let outcome = train(model, &train_set, &[], &config)?;
    for r in &outcome.records {
        println!("epoch {:>3}  lr {:.5}  loss {:.4}", r.epoch, r.lr, r.train_loss);
    }
    let (loss, acc) = loss_and_accuracy(&outcome.final_model, &train_set)?;
    println!("training set: loss {loss:.4}, accuracy {acc:.3}");
    let eval = evaluate(&outcome.final_model, &test_set)?;
    println!("held-out accuracy {}", overall_accuracy(&eval.matrix)?);
    Ok(())
}
