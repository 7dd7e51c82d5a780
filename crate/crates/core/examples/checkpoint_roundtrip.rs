//! Saves a freshly initialized model, reloads it and compares every bit.

use ctran::config::{ModelConfig, TrainConfig};
use ctran::data::{synthetic, LabelMaps};
use ctran::evaluation::predict_examples;
use ctran::model::Ctran;
use ctran::training::{Checkpoint, ParamManifest};

fn main() -> ctran::Result<()> {
    let train = synthetic::corpus(16, 1);
    let labels = LabelMaps::build(&train)?;
    let ck = Checkpoint { model: Ctran::new(&ModelConfig::tiny(), &labels, 9)?, train: TrainConfig::default(), labels };

    let dir = std::env::temp_dir().join("ctran-checkpoint-example");
    ck.save(&dir)?;
    let manifest = ParamManifest::describe(&ck.model.params);
    println!("{} tensors, {} bytes in {}", manifest.params.len(), manifest.total_bytes, dir.display());
    for e in manifest.params.iter().take(4) {
        println!("  {:40} {:?} @ {} ({})", e.name, e.shape, e.offset, e.group);
    }

    let back = Checkpoint::load(&dir)?;
    let identical = ck
        .model
        .params
        .slots()
        .iter()
        .zip(back.model.params.slots())
        .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("bit-exact: {identical}");
    let same = predict_examples(&ck.model, &train, &ck.labels, 8)? == predict_examples(&back.model, &train, &back.labels, 8)?;
    println!("identical predictions: {same}");
    Ok(())
}
