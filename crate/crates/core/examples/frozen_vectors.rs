//! Trains on precomputed per-utterance vectors read from disk instead of a
//! learned embedding table.

use ctran::config::{EmbeddingKind, GroupValues, ModelConfig, TrainConfig};
use ctran::data::synthetic;
use ctran::embeddings::VectorStore;
use ctran::substrate::Tensor;
use ctran::training::train_run;

fn vector(token: &str, dim: usize) -> Vec<f32> {
    let h = token.bytes().fold(17u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32));
    (0..dim).map(|i| ((h.wrapping_mul(i as u32 + 7) % 1000) as f32 / 500.0) - 1.0).collect()
}

fn main() -> ctran::Result<()> {
    let mut splits = synthetic::splits(4);
    // vectors are keyed by example id, which must be unique across splits
    for (name, split) in [("train", &mut splits.train), ("dev", &mut splits.dev), ("test", &mut splits.test)] {
        for (i, ex) in split.iter_mut().enumerate() {
            ex.id = Some(format!("{name}-{i}"));
        }
    }
    let dim = 16;
    let mut store = VectorStore::new();
    for ex in splits.train.iter().chain(&splits.dev).chain(&splits.test) {
        let data: Vec<f32> = ex.tokens.iter().flat_map(|t| vector(t, dim)).collect();
        store.insert(ex.id.as_deref().unwrap(), &Tensor::new(vec![ex.len(), dim], data)?)?;
    }
    let dir = std::env::temp_dir().join("ctran-vectors-example");
    store.save(&dir)?;
    println!("wrote {} vector matrices to {}", store.len(), dir.display());

    let mut model = ModelConfig::tiny();
    model.embedding.kind = EmbeddingKind::FrozenFile;
    model.embedding.dim = dim;
    model.embedding.file = Some(dir);
    let config = TrainConfig {
        learning_rate: GroupValues::splat(3e-3),
        epochs: 20,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = train_run(&splits, &model, &config, 1, |r| {
        if r.epoch % 5 == 0 {
            println!("epoch {:2}: dev slot F1 {:.3} intent acc {:.3}", r.epoch, r.dev.slot_f1, r.dev.intent_accuracy);
        }
    })?;
    println!("best dev epoch {}: {:?}", out.best_epoch, out.best_dev);
    Ok(())
}
