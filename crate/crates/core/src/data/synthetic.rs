//! Small generated flight-domain corpus with five slot tags and three intents.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Example, Splits};

const CITIES: &[&[&str]] = &[
    &["boston"],
    &["denver"],
    &["new", "york"],
    &["san", "francisco"],
    &["los", "angeles"],
    &["dallas"],
];

const DATES: &[&[&str]] = &[
    &["monday"],
    &["tomorrow"],
    &["next", "friday"],
    &["june", "first"],
];

fn push_span(tokens: &mut Vec<String>, slots: &mut Vec<String>, words: &[&str], label: &str) {
    for (i, w) in words.iter().enumerate() {
        tokens.push(w.to_string());
        slots.push(if i == 0 { format!("B-{label}") } else { format!("I-{label}") });
    }
}

fn push_words(tokens: &mut Vec<String>, slots: &mut Vec<String>, words: &[&str]) {
    for w in words {
        tokens.push(w.to_string());
        slots.push("O".to_string());
    }
}

fn one(rng: &mut ChaCha8Rng, index: usize) -> Example {
    let (mut tokens, mut slots) = (Vec::new(), Vec::new());
    let city = *CITIES.choose(rng).unwrap();
    let date = *DATES.choose(rng).unwrap();
    let with_date = rng.gen_bool(0.6);
    let intent = match index % 3 {
        0 => {
            push_words(&mut tokens, &mut slots, &["show", "flights", "to"]);
            push_span(&mut tokens, &mut slots, city, "loc");
            if with_date {
                push_words(&mut tokens, &mut slots, &["on"]);
                push_span(&mut tokens, &mut slots, date, "date");
            }
            "flight"
        }
        1 => {
            push_words(&mut tokens, &mut slots, &["how", "much", "is", "a", "ticket", "to"]);
            push_span(&mut tokens, &mut slots, city, "loc");
            "airfare"
        }
        _ => {
            push_words(&mut tokens, &mut slots, &["what", "is", "the", "weather", "in"]);
            push_span(&mut tokens, &mut slots, city, "loc");
            if with_date {
                push_span(&mut tokens, &mut slots, date, "date");
            }
            "weather"
        }
    };
    Example {
        id: Some(index.to_string()),
        tokens,
        slots,
        intent: intent.to_string(),
    }
}

/// `n` examples drawn deterministically from `seed`.
pub fn corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| one(&mut rng, i)).collect()
}

/// 32 train, 12 dev and 12 test examples.
pub fn splits(seed: u64) -> Splits {
    Splits {
        train: corpus(32, seed),
        dev: corpus(12, seed.wrapping_add(1)),
        test: corpus(12, seed.wrapping_add(2)),
    }
}
