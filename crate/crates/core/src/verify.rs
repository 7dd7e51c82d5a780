//! Self-checks run by `ctran verify`: finite-difference gradients, mask
//! definitions and the span-F1 scorer against a brute-force oracle.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DecoderAlignment, ModelConfig};
use crate::data::{encode_batch, synthetic, Batch, Example, LabelMaps, BOS_TAG, UNK_TAG};
use crate::decoders::{build_causal_mask, build_zero_diag_mask};
use crate::error::{Error, Result};
use crate::evaluation::slot_f1;
use crate::layers::Mode;
use crate::model::{Ctran, LossWeights};
use crate::substrate::{grad_check, GradCheckOptions, Graph, Tensor};

pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Grad,
    Masks,
    Metrics,
    All,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Scope::Grad),
            "masks" => Ok(Scope::Masks),
            "metrics" => Ok(Scope::Metrics),
            "all" => Ok(Scope::All),
            _ => Err(Error::config(format!("unknown scope {s:?}; expected grad, masks, metrics or all"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs `f`, turning errors and panics into a failed check.
fn check(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    CheckResult { name: name.to_string(), passed, detail }
}

pub fn run(scope: Scope) -> VerifyReport {
    let mut checks = Vec::new();
    if matches!(scope, Scope::Masks | Scope::All) {
        checks.extend(mask_suite(16));
        checks.push(alignment_check(20));
        checks.push(causality_check(20));
    }
    if matches!(scope, Scope::Metrics | Scope::All) {
        checks.extend(metric_suite(100, 0));
    }
    if matches!(scope, Scope::Grad | Scope::All) {
        checks.extend(grad_suite());
    }
    VerifyReport { checks }
}

/// A model small enough for exhaustive finite differences.
pub fn micro_config() -> ModelConfig {
    let mut cfg = ModelConfig::tiny();
    cfg.embedding.dim = 5;
    cfg.encoder.total_filters = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.ffn_dim = 6;
    cfg.intent.heads = 2;
    cfg.slot.heads = 2;
    cfg.slot.ffn_dim = 6;
    cfg
}

/// Two synthetic examples of different lengths, so the batch carries padding.
pub fn toy_pair() -> (LabelMaps, Vec<Example>) {
    let all = synthetic::corpus(6, 11);
    let second = all
        .iter()
        .find(|e| e.len() != all[0].len())
        .expect("synthetic corpus mixes lengths")
        .clone();
    let train = vec![all[0].clone(), second];
    let maps = LabelMaps::build(&train).expect("non-empty");
    (maps, train)
}

/// Exhaustive gradient check of the summed joint loss in 64-bit.
pub fn joint_loss_grad_check(alignment: DecoderAlignment) -> Result<crate::substrate::GradCheckReport> {
    let (maps, train) = toy_pair();
    let batch = encode_batch(&train, &maps, false)?;
    let mut cfg = micro_config();
    cfg.slot.alignment = alignment;
    let model = Ctran::<f64>::new(&cfg, &maps, 5)?;
    let mut store = model.params.clone();
    grad_check(&mut store, GradCheckOptions::default(), |p, g| {
        let mut m = model.clone();
        m.params = p.clone();
        Ok(m.joint_loss(g, &batch, &mut Mode::Eval, LossWeights::default())?.total)
    })
}

pub fn grad_suite() -> Vec<CheckResult> {
    [DecoderAlignment::Aligned, DecoderAlignment::Regular]
        .into_iter()
        .map(|a| {
            check(&format!("grad: joint loss, {a} decoder"), || {
                let r = joint_loss_grad_check(a)?;
                Ok((
                    r.max_rel_error < GRAD_TOLERANCE,
                    format!("max rel err {:.3e} over {} entries (threshold {GRAD_TOLERANCE:e})", r.max_rel_error, r.checked),
                ))
            })
        })
        .collect()
}

/// Compares both mask builders with their closed forms for sizes `1..=max_n`.
pub fn mask_suite(max_n: usize) -> Vec<CheckResult> {
    let sweep = |name: &str, build: fn(usize) -> Result<crate::decoders::MaskMatrix<f64>>, open: fn(usize, usize) -> bool| {
        check(name, || {
            for n in 1..=max_n {
                let m = build(n)?;
                if m.entries().shape() != [n, n] {
                    return Ok((false, format!("n={n}: shape {:?}", m.entries().shape())));
                }
                for i in 0..n {
                    for j in 0..n {
                        let v = m.entries().row(i)[j];
                        let want = if open(i, j) { 0.0 } else { f64::NEG_INFINITY };
                        if v != want {
                            return Ok((false, format!("n={n}: entry ({i},{j}) = {v}, want {want}")));
                        }
                    }
                }
            }
            Ok((true, format!("n in 1..={max_n}")))
        })
    };
    vec![
        sweep("masks: causal", build_causal_mask, |i, j| j <= i),
        sweep("masks: zero diagonal", build_zero_diag_mask, |i, j| i == j),
        check("masks: size 0 rejected", || {
            Ok((build_causal_mask::<f64>(0).is_err() && build_zero_diag_mask::<f64>(0).is_err(), String::new()))
        }),
    ]
}

fn random_micro_config(rng: &mut ChaCha8Rng, alignment: DecoderAlignment) -> ModelConfig {
    let mut cfg = micro_config();
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    cfg.encoder.total_filters = 8;
    cfg.encoder.kernel_sizes = vec![1, 3];
    cfg.encoder.encoder_layers = rng.gen_range(0..3);
    cfg.encoder.heads = heads;
    cfg.intent.heads = heads;
    cfg.slot.heads = heads;
    cfg.slot.decoder_layers = rng.gen_range(1..3);
    cfg.slot.alignment = alignment;
    cfg
}

/// Largest absolute change of row `i` between two `[.. x d]` tensors.
fn row_change(a: &Tensor<f64>, b: &Tensor<f64>, i: usize) -> f64 {
    a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Perturbs memory row `j` and measures, for every other position `i`, the
/// change of the first decoder layer's cross-attention output and of the
/// logits of a one-layer decoder. Returns `(max aligned change, min regular change)`.
pub fn alignment_probe(seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = random_micro_config(&mut rng, DecoderAlignment::Aligned);
    cfg.slot.decoder_layers = 1;
    let l = rng.gen_range(2..7);
    let d = cfg.d_model();
    let aligned = Ctran::<f64>::with_sizes(&cfg, 10, 3, 6, seed)?;
    let mut regular = aligned.clone();
    regular.slot.alignment = DecoderAlignment::Regular;
    let input = Tensor::from_fn(&[1, l, d], |_| rng.gen_range(-1.0..1.0));
    let memory = Tensor::from_fn(&[1, l, d], |_| rng.gen_range(-1.0..1.0));
    let tags: Vec<usize> = (0..l).map(|t| if t == 0 { BOS_TAG } else { rng.gen_range(UNK_TAG..6) }).collect();
    let j = rng.gen_range(0..l);
    let mut moved = memory.clone();
    for v in &mut moved.data_mut()[j * d..(j + 1) * d] {
        *v += rng.gen_range(0.5..2.0);
    }
    let run = |m: &Ctran<f64>, mem: &Tensor<f64>| -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut g = Graph::new();
        let dv = g.constant(input.clone());
        let mv = g.constant(mem.clone());
        let trace = m.slot.layer_forward(&mut g, &m.params, 0, dv, mv, &[l], &mut Mode::Eval)?;
        let logits = m.slot.forward(&mut g, &m.params, &tags, mv, &[l], &mut Mode::Eval)?;
        Ok((g.value(trace.cross).clone(), g.value(logits).clone()))
    };
    let (a1, z1) = run(&aligned, &memory)?;
    let (a2, z2) = run(&aligned, &moved)?;
    let (r1, _) = run(&regular, &memory)?;
    let (r2, _) = run(&regular, &moved)?;
    let others = (0..l).filter(|&i| i != j);
    let aligned_change = others
        .clone()
        .map(|i| row_change(&a1, &a2, i).max(row_change(&z1, &z2, i)))
        .fold(0.0, f64::max);
    let regular_change = others.map(|i| row_change(&r1, &r2, i)).fold(f64::INFINITY, f64::min);
    Ok((aligned_change, regular_change))
}

pub fn alignment_check(seeds: u64) -> CheckResult {
    check("masks: aligned cross-attention locality", || {
        let (mut worst_aligned, mut least_regular) = (0.0f64, f64::INFINITY);
        for seed in 0..seeds {
            let (a, r) = alignment_probe(seed)?;
            worst_aligned = worst_aligned.max(a);
            least_regular = least_regular.min(r);
        }
        Ok((
            worst_aligned == 0.0 && least_regular > 0.0,
            format!("{seeds} seeds: aligned max change {worst_aligned:e}, regular min change {least_regular:.3e}"),
        ))
    })
}

fn teacher_forced(model: &Ctran<f64>, batch: &Batch) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let mem = model.encode(&mut g, batch, &mut Mode::Eval)?;
    let z = model.teacher_forced_slots(&mut g, mem, batch, &mut Mode::Eval)?;
    Ok(g.value(z).clone())
}

/// Rewrites every gold tag after position `t` and returns the largest change
/// of teacher-forced logits at positions `<= t`, over all `t`.
pub fn causality_probe(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let alignment = if seed % 2 == 0 { DecoderAlignment::Aligned } else { DecoderAlignment::Regular };
    let cfg = random_micro_config(&mut rng, alignment);
    let ex = synthetic::corpus(3, seed);
    let maps = LabelMaps::build(&ex)?;
    let batch = encode_batch(&ex, &maps, false)?;
    let model = Ctran::<f64>::new(&cfg, &maps, seed)?;
    let base = teacher_forced(&model, &batch)?;
    let l = batch.max_len;
    let mut worst = 0.0f64;
    for t in 0..l {
        let mut changed = batch.clone();
        for r in 0..batch.batch_size() {
            for s in t + 1..batch.lengths[r] {
                changed.slot_ids[r * l + s] = rng.gen_range(UNK_TAG..maps.num_tag_ids());
            }
        }
        let out = teacher_forced(&model, &changed)?;
        for r in 0..batch.batch_size() {
            for s in 0..=t.min(batch.lengths[r] - 1) {
                worst = worst.max(row_change(&base, &out, r * l + s));
            }
        }
    }
    Ok(worst)
}

pub fn causality_check(seeds: u64) -> CheckResult {
    check("masks: teacher-forced causality", || {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            worst = worst.max(causality_probe(seed)?);
        }
        Ok((worst == 0.0, format!("{seeds} seeds: max change at earlier positions {worst:e}")))
    })
}

/// Counts `(correct, gold, predicted)` spans by testing every interval and
/// label against the chunk definition directly.
pub fn brute_force_span_counts(gold: &[Vec<String>], pred: &[Vec<String>]) -> (usize, usize, usize) {
    fn parts(tag: &str) -> (Option<char>, &str) {
        match tag {
            "O" => (None, ""),
            t if t.starts_with("B-") => (Some('B'), &t[2..]),
            t if t.starts_with("I-") => (Some('I'), &t[2..]),
            t => (Some('B'), t),
        }
    }
    fn is_chunk(tags: &[String], i: usize, j: usize, label: &str) -> bool {
        let (kind, l) = parts(&tags[i]);
        if kind.is_none() || l != label {
            return false;
        }
        let continues_previous = kind == Some('I') && i > 0 && parts(&tags[i - 1]).0.is_some() && parts(&tags[i - 1]).1 == label;
        if continues_previous {
            return false;
        }
        if !(i + 1..=j).all(|k| parts(&tags[k]) == (Some('I'), label)) {
            return false;
        }
        j + 1 == tags.len() || parts(&tags[j + 1]) != (Some('I'), label)
    }
    fn chunks(tags: &[String]) -> Vec<(usize, usize, String)> {
        let labels: std::collections::BTreeSet<&str> =
            tags.iter().map(|t| parts(t).1).filter(|l| !l.is_empty()).collect();
        let mut out = Vec::new();
        for i in 0..tags.len() {
            for j in i..tags.len() {
                for &l in &labels {
                    if is_chunk(tags, i, j, l) {
                        out.push((i, j, l.to_string()));
                    }
                }
            }
        }
        out
    }
    let (mut correct, mut n_gold, mut n_pred) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gc = chunks(g);
        let pc = chunks(p);
        correct += pc.iter().filter(|c| gc.contains(c)).count();
        n_gold += gc.len();
        n_pred += pc.len();
    }
    (correct, n_gold, n_pred)
}

fn random_tags(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    const TAGS: [&str; 6] = ["O", "B-a", "I-a", "B-b", "I-b", "<unk>"];
    (0..n).map(|_| TAGS[rng.gen_range(0..TAGS.len())].to_string()).collect()
}

/// Scores `cases` random corpora with `slot_f1` and with the oracle.
pub fn metric_suite(cases: usize, seed: u64) -> Vec<CheckResult> {
    vec![check("metrics: span F1 vs brute-force oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..cases {
            let m = rng.gen_range(1..4);
            let (mut gold, mut pred) = (Vec::new(), Vec::new());
            for _ in 0..m {
                let n = rng.gen_range(1..8);
                gold.push(random_tags(&mut rng, n));
                pred.push(random_tags(&mut rng, n));
            }
            let s = slot_f1(&gold, &pred)?;
            let (c, g, p) = brute_force_span_counts(&gold, &pred);
            let f1 = if g == 0 && p == 0 {
                1.0
            } else if c == 0 {
                0.0
            } else {
                let (pr, rc) = (c as f64 / p as f64, c as f64 / g as f64);
                2.0 * pr * rc / (pr + rc)
            };
            if (s.correct, s.gold, s.predicted) != (c, g, p) || s.f1 != f1 {
                return Ok((false, format!("case {case}: scorer {s:?}, oracle ({c}, {g}, {p}) f1 {f1}")));
            }
        }
        Ok((true, format!("{cases} random cases agree exactly")))
    })]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_and_metric_suites_pass() {
        let r = VerifyReport { checks: mask_suite(16).into_iter().chain(metric_suite(100, 3)).collect() };
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn locality_checks_pass() {
        assert!(alignment_check(4).passed);
        assert!(causality_check(4).passed);
    }

    #[test]
    fn oracle_counts_hand_example() {
        let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        assert_eq!(brute_force_span_counts(&[t("B-a O B-b")], &[t("B-a O B-c")]), (1, 2, 2));
        assert_eq!(brute_force_span_counts(&[t("O I-x I-x")], &[t("B-x I-x I-x")]), (0, 1, 1));
    }

    #[test]
    fn failures_are_reported_not_raised() {
        let c = check("boom", || panic!("inner"));
        assert!(!c.passed && c.detail.contains("inner"));
    }
}
