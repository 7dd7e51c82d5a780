//! The convolution bank turns token embeddings into a window feature
//! sequence: one row per token holding every filter's output at that token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctran::config::ModelConfig;
use ctran::encoder::Encoder;
use ctran::substrate::{Graph, ParamStore, Tensor};

fn main() -> ctran::Result<()> {
    let mut cfg = ModelConfig::tiny();
    cfg.embedding.dim = 4;
    cfg.encoder.kernel_sizes = vec![1, 3];
    cfg.encoder.total_filters = 4;
    cfg.encoder.heads = 2;
    cfg.intent.heads = 2;
    cfg.slot.heads = 2;

    let mut store = ParamStore::<f64>::new();
    let encoder = Encoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &cfg)?;
    for c in &encoder.bank.convs {
        println!("kernel {} -> filter {:?}", c.kernel, store.get(c.filter).value.shape());
    }

    // one sentence of 3 tokens padded to 4; token 3 only sees its left
    // neighbour and the bias
    let x = Tensor::from_fn(&[1, 4, 4], |i| (i as f64 * 0.37).sin());
    let mut g = Graph::new();
    let xv = g.constant(x);
    let wfs = encoder.conv_bank_wfs(&mut g, &store, xv, &[3])?;
    let w = g.value(wfs);
    println!("window feature sequence {:?}: [k=1 filters | k=3 filters]", w.shape());
    for t in 0..4 {
        let row: Vec<String> = w.row(t).iter().map(|v| format!("{v:6.3}")).collect();
        println!("token {t}: {}", row.join(" "));
    }
    Ok(())
}
