//! Trains the aligned and the regular slot decoder on the same synthetic
//! splits and prints a comparison row.

use ctran::config::{DecoderAlignment, GroupValues, ModelConfig, TrainConfig};
use ctran::data::synthetic;
use ctran::evaluation::evaluate;
use ctran::training::train_run;

fn main() -> ctran::Result<()> {
    let splits = synthetic::splits(3);
    let config = TrainConfig {
        learning_rate: GroupValues::splat(2e-3),
        epochs: 40,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut scores = Vec::new();
    for alignment in [DecoderAlignment::Regular, DecoderAlignment::Aligned] {
        let mut model = ModelConfig::tiny();
        model.slot.alignment = alignment;
        let out = train_run(&splits, &model, &config, 1, |_| {})?;
        let test = evaluate(&out.best.model, &splits.test, &out.best.labels, false, 16)?;
        println!("{alignment}: best dev epoch {}, test {test:?}", out.best_epoch);
        scores.push(test.slot_f1);
    }
    println!("| Dataset | Regular decoder SF F1 | Aligned decoder SF F1 |");
    println!("|---|---|---|");
    println!("| synthetic | {:.2} | {:.2} |", 100.0 * scores[0], 100.0 * scores[1]);
    Ok(())
}
