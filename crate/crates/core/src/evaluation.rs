//! Exact-match span F1 for slots, intent accuracy and multi-run medians.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{encode_batch, strip_punctuation, Example, LabelMaps};
use crate::error::{Error, Result};
use crate::model::{Ctran, Prediction};
use crate::substrate::Scalar;

/// A labeled chunk covering tokens `start..=end`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn classify(tag: &str) -> Tag<'_> {
    if tag == "O" {
        Tag::Outside
    } else if let Some(l) = tag.strip_prefix("B-") {
        Tag::Begin(l)
    } else if let Some(l) = tag.strip_prefix("I-") {
        Tag::Inside(l)
    } else {
        // bare labels such as "<unk>" open a chunk of their own type
        Tag::Begin(tag)
    }
}

/// Chunks a BIO sequence. An `I-x` that does not continue an `x` chunk starts
/// a new one.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> BTreeSet<SlotSpan> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let next = match classify(tag.as_ref()) {
            Tag::Outside => None,
            Tag::Begin(l) => Some((i, l)),
            Tag::Inside(l) => match open {
                Some((s, cur)) if cur == l => Some((s, cur)),
                _ => Some((i, l)),
            },
        };
        if let Some((s, l)) = open {
            if next.map_or(true, |(ns, _)| ns != s) {
                spans.insert(SlotSpan { start: s, end: i - 1, label: l.to_string() });
            }
        }
        open = next;
    }
    if let Some((s, l)) = open {
        spans.insert(SlotSpan { start: s, end: tags.len() - 1, label: l.to_string() });
    }
    spans
}

/// Renders spans of a length-`len` sequence back to BIO tags.
pub fn spans_to_tags(spans: &BTreeSet<SlotSpan>, len: usize) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for s in spans {
        tags[s.start] = format!("B-{}", s.label);
        for t in tags.iter_mut().take(s.end + 1).skip(s.start + 1) {
            *t = format!("I-{}", s.label);
        }
    }
    tags
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub gold: usize,
    pub predicted: usize,
}

impl SpanScores {
    fn from_counts(correct: usize, gold: usize, predicted: usize) -> Self {
        if gold == 0 && predicted == 0 {
            return SpanScores { precision: 1.0, recall: 1.0, f1: 1.0, correct, gold, predicted };
        }
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SpanScores { precision, recall, f1, correct, gold, predicted }
    }
}

/// Micro-averaged precision, recall and F1 over exact `(start, end, label)` matches.
pub fn slot_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<SpanScores> {
    if gold.len() != pred.len() {
        return Err(Error::Metric(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let (mut correct, mut n_gold, mut n_pred) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Metric(format!(
                "example {i}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        correct += gs.intersection(&ps).count();
        n_gold += gs.len();
        n_pred += ps.len();
    }
    Ok(SpanScores::from_counts(correct, n_gold, n_pred))
}

pub fn intent_accuracy(gold: &[usize], pred: &[usize]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::Metric(format!("{} gold intents but {} predicted", gold.len(), pred.len())));
    }
    if gold.is_empty() {
        return Err(Error::Metric("no intents to score".into()));
    }
    let hits = gold.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Median; the mean of the two central values for an even count.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Metric("median of no runs".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub slot_f1: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub intent_accuracy: f64,
}

/// Per-metric median across runs.
pub fn aggregate_runs(runs: &[EvalMetrics]) -> Result<EvalMetrics> {
    let pick = |f: fn(&EvalMetrics) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(EvalMetrics {
        slot_f1: pick(|m| m.slot_f1)?,
        slot_precision: pick(|m| m.slot_precision)?,
        slot_recall: pick(|m| m.slot_recall)?,
        intent_accuracy: pick(|m| m.intent_accuracy)?,
    })
}

/// Metrics report written after a multi-seed run. Top-level values are the medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub slot_f1: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub intent_accuracy: f64,
    pub per_seed: Vec<SeedMetrics>,
    pub median: EvalMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev: EvalMetrics,
    pub test: EvalMetrics,
}

impl MetricsReport {
    pub fn from_runs(per_seed: Vec<SeedMetrics>) -> Result<Self> {
        let tests: Vec<EvalMetrics> = per_seed.iter().map(|s| s.test).collect();
        let median = aggregate_runs(&tests)?;
        Ok(MetricsReport {
            slot_f1: median.slot_f1,
            slot_precision: median.slot_precision,
            slot_recall: median.slot_recall,
            intent_accuracy: median.intent_accuracy,
            per_seed,
            median,
        })
    }
}

/// Model predictions over `examples` in their original order, decoded in
/// batches of `batch_size`.
pub fn predict_examples<T: Scalar>(
    model: &Ctran<T>,
    examples: &[Example],
    maps: &LabelMaps,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = encode_batch(chunk, maps, false)?;
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

/// Span F1 and intent accuracy of `model` on `examples`. With `strip_punct`
/// the gold sequences are stripped the same way as the model inputs.
pub fn evaluate<T: Scalar>(
    model: &Ctran<T>,
    examples: &[Example],
    maps: &LabelMaps,
    strip_punct: bool,
    batch_size: usize,
) -> Result<EvalMetrics> {
    let stripped: Vec<Example>;
    let examples = if strip_punct {
        stripped = examples.iter().map(strip_punctuation).collect();
        &stripped[..]
    } else {
        examples
    };
    let preds = predict_examples(model, examples, maps, batch_size)?;
    let gold_tags: Vec<&[String]> = examples.iter().map(|e| &e.slots[..]).collect();
    let pred_tags: Vec<Vec<&str>> = preds
        .iter()
        .map(|p| p.slots.iter().map(|&t| maps.slot(t)).collect())
        .collect();
    let gold_tags: Vec<Vec<&str>> = gold_tags.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
    let spans = slot_f1(&gold_tags, &pred_tags)?;
    let gold_intents: Vec<usize> = examples.iter().map(|e| maps.intent_id(&e.intent)).collect();
    let pred_intents: Vec<usize> = preds.iter().map(|p| p.intent).collect();
    Ok(EvalMetrics {
        slot_f1: spans.f1,
        slot_precision: spans.precision,
        slot_recall: spans.recall,
        intent_accuracy: intent_accuracy(&gold_intents, &pred_intents)?,
    })
}
