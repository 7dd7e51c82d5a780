//! Times joint training steps and greedy decoding at the default model size
//! on synthetic batches.
//!
//! cargo run --release --example step_timing -- [steps]

use std::time::Instant;

use ctran::config::{ModelConfig, TrainConfig};
use ctran::data::{encode_batch, synthetic, LabelMaps};
use ctran::model::Ctran;
use ctran::training::Trainer;

fn main() -> ctran::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let corpus = synthetic::corpus(16 * steps, 1);
    let maps = LabelMaps::build(&corpus)?;
    let config = ModelConfig::default();
    let model = Ctran::new(&config, &maps, 1)?;
    println!("default model: d_model {}, {} parameters", config.d_model(), model.params.num_values());
    let mut trainer = Trainer::new(model, TrainConfig::default(), 1)?;

    let batches: Vec<_> = corpus
        .chunks(16)
        .map(|c| encode_batch(c, &maps, false))
        .collect::<ctran::Result<_>>()?;
    let started = Instant::now();
    for b in &batches {
        trainer.joint_step(b)?;
    }
    let per_step = started.elapsed().as_secs_f64() / batches.len() as f64;
    let tokens = batches.iter().map(|b| b.lengths.iter().sum::<usize>()).sum::<usize>() as f64 / batches.len() as f64;
    println!("train step: {:.3}s per batch of 16 ({tokens:.1} tokens)", per_step);

    let started = Instant::now();
    trainer.model.predict(&batches[0])?;
    println!("greedy decode: {:.3}s per batch of 16", started.elapsed().as_secs_f64());
    Ok(())
}
