//! Overfits the 32-example synthetic corpus and decodes a training sentence.
//!
//! cargo run --release --example train_toy

use ctran::config::{GroupValues, ModelConfig, TrainConfig};
use ctran::data::{synthetic, LabelMaps, Splits};
use ctran::evaluation::{evaluate, predict_examples};
use ctran::training::train_run;

fn main() -> ctran::Result<()> {
    let train = synthetic::corpus(32, 7);
    let splits = Splits { dev: train.clone(), test: train.clone(), train };
    let config = TrainConfig {
        learning_rate: GroupValues::splat(3e-3),
        decay: GroupValues::splat(1.0),
        dropout: GroupValues::splat(0.0),
        epochs: 200,
        batch_size: 8,
        seeds: vec![1],
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let mut done = None;
    let outcome = train_run(&splits, &ModelConfig::tiny(), &config, 1, |r| {
        if r.epoch % 10 == 0 || (done.is_none() && r.dev.slot_f1 == 1.0 && r.dev.intent_accuracy == 1.0) {
            println!(
                "epoch {:3}  loss {:.4}  slot F1 {:.3}  intent acc {:.3}",
                r.epoch, r.train_loss.total, r.dev.slot_f1, r.dev.intent_accuracy
            );
        }
        if done.is_none() && r.dev.slot_f1 == 1.0 && r.dev.intent_accuracy == 1.0 {
            done = Some(r.epoch);
        }
    })?;
    println!("perfect fit first reached at epoch {done:?} in {:.1?}", started.elapsed());

    let maps: &LabelMaps = &outcome.best.labels;
    let model = &outcome.best.model;
    let m = evaluate(model, &splits.train, maps, false, 16)?;
    println!("best epoch {}: {m:?}", outcome.best_epoch);
    let ex = &splits.train[0];
    let p = &predict_examples(model, std::slice::from_ref(ex), maps, 1)?[0];
    println!("{}", ex.tokens.join(" "));
    println!("gold {:?} / {}", ex.slots, ex.intent);
    let tags: Vec<&str> = p.slots.iter().map(|&t| maps.slot(t)).collect();
    println!("pred {tags:?} / {}", maps.intent(p.intent));
    Ok(())
}
