//! Prints the decoder masks and the key-padding mask for a short sentence.

use ctran::cli::render_mask;
use ctran::decoders::{build_causal_mask, build_zero_diag_mask, MaskMatrix};

fn main() -> ctran::Result<()> {
    let n = 5;
    println!("causal self-attention mask, n = {n}\n{}", render_mask(&build_causal_mask(n)?));
    println!("alignment (zero-diagonal) memory mask, n = {n}\n{}", render_mask(&build_zero_diag_mask(n)?));

    // two sentences of lengths 5 and 3 in one batch
    let padded = MaskMatrix::<f64>::open(n, n)?.with_padding(&[5, 3])?;
    println!("encoder key-padding mask for the length-3 row (pad queries keep the base row):");
    for t in 0..n {
        let row = &padded.data()[(n + t) * n..(n + t + 1) * n];
        let cells: Vec<&str> = row.iter().map(|&v| if v == 0.0 { "   0" } else { "-inf" }).collect();
        println!("{}", cells.join(" "));
    }
    Ok(())
}
