//! Span extraction and micro span F1 on hand-made tag sequences.

use ctran::evaluation::{extract_spans, intent_accuracy, median, slot_f1};

fn tags(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> ctran::Result<()> {
    for seq in ["O B-fromloc I-fromloc O B-toloc", "O I-date I-date", "B-a B-a I-b"] {
        println!("{seq:32} -> {:?}", extract_spans(&tags(seq)));
    }

    let gold = vec![tags("O B-fromloc I-fromloc O B-toloc"), tags("B-date O")];
    let pred = vec![tags("O B-fromloc I-fromloc O B-fromloc"), tags("B-date O")];
    let s = slot_f1(&gold, &pred)?;
    println!("P {:.3} R {:.3} F1 {:.3} ({} of {} gold spans)", s.precision, s.recall, s.f1, s.correct, s.gold);
    println!("intent accuracy {:.2}", intent_accuracy(&[0, 1, 2, 1], &[0, 1, 2, 0])?);
    println!("median of 0.90, 0.96 = {:.2}", median(&[0.90, 0.96])?);
    Ok(())
}
