//! Trains briefly on the synthetic corpus, then tags new sentences.

use ctran::config::{GroupValues, ModelConfig, TrainConfig};
use ctran::data::{encode_batch, synthetic, Example};
use ctran::training::train_run;

fn main() -> ctran::Result<()> {
    let splits = synthetic::splits(5);
    let config = TrainConfig {
        learning_rate: GroupValues::splat(3e-3),
        dropout: GroupValues::splat(0.0),
        epochs: 40,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = train_run(&splits, &ModelConfig::tiny(), &config, 2, |_| {})?;
    let (model, labels) = (&out.best.model, &out.best.labels);

    let sentences = [
        "show flights to boston on monday",
        "what will the weather be in denver tomorrow",
        "how much is a ticket to atlanta",
    ];
    let examples: Vec<Example> = sentences
        .iter()
        .map(|s| {
            let tokens: Vec<&str> = s.split(' ').collect();
            Example::new(&tokens, &vec!["O"; tokens.len()], "<none>")
        })
        .collect();
    let batch = encode_batch(&examples, labels, false)?;
    for (ex, p) in examples.iter().zip(model.predict(&batch)?) {
        let tagged: Vec<String> = ex
            .tokens
            .iter()
            .zip(&p.slots)
            .map(|(t, &s)| match labels.slot(s) {
                "O" => t.clone(),
                tag => format!("{t}/{tag}"),
            })
            .collect();
        println!("[{}] {}", labels.intent(p.intent), tagged.join(" "));
    }
    Ok(())
}
