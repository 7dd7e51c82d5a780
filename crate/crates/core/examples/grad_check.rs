//! Central finite differences against reverse-mode gradients for the full
//! joint loss of a micro model, in 64-bit.

use ctran::config::DecoderAlignment;
use ctran::verify::{joint_loss_grad_check, GRAD_TOLERANCE};

fn main() -> ctran::Result<()> {
    for alignment in [DecoderAlignment::Aligned, DecoderAlignment::Regular] {
        let r = joint_loss_grad_check(alignment)?;
        println!(
            "{alignment:>7} decoder: {} entries, max relative error {:.2e} (tolerance {GRAD_TOLERANCE:e}), worst at {:?}",
            r.checked, r.max_rel_error, r.worst
        );
    }
    Ok(())
}
