use ctran::config::{DecoderAlignment, ModelConfig};
use ctran::data::{encode_batch, synthetic, Batch, LabelMaps, BOS_TAG, UNK_TAG};
use ctran::layers::Mode;
use ctran::model::Ctran;
use ctran::substrate::ops::{conv1d_same, same_padding, Activation};
use ctran::substrate::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(rng: &mut ChaCha8Rng, alignment: DecoderAlignment) -> ModelConfig {
    let mut cfg = ModelConfig::tiny();
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    cfg.embedding.dim = rng.gen_range(3..9);
    cfg.encoder.kernel_sizes = vec![1, 3];
    cfg.encoder.total_filters = 8;
    cfg.encoder.heads = heads;
    cfg.encoder.encoder_layers = rng.gen_range(0..3);
    cfg.encoder.ffn_dim = 10;
    cfg.intent.heads = heads;
    cfg.slot.heads = heads;
    cfg.slot.ffn_dim = 10;
    cfg.slot.decoder_layers = rng.gen_range(1..3);
    cfg.slot.alignment = alignment;
    cfg
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Cross-attention output of decoder layer 0 and depth-1 logits for memory `m`.
fn cross_and_logits(model: &Ctran<f64>, d: &Tensor<f64>, m: &Tensor<f64>, tags: &[usize], lengths: &[usize]) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let dv = g.constant(d.clone());
    let mv = g.constant(m.clone());
    let trace = model.slot.layer_forward(&mut g, &model.params, 0, dv, mv, lengths, &mut Mode::Eval).unwrap();
    let logits = model.slot.forward(&mut g, &model.params, tags, mv, lengths, &mut Mode::Eval).unwrap();
    (g.value(trace.cross).clone(), g.value(logits).clone())
}

#[test]
fn aligned_cross_attention_ignores_other_memory_rows() {
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = random_config(&mut rng, DecoderAlignment::Aligned);
        cfg.slot.decoder_layers = 1;
        let l = rng.gen_range(2..7);
        let dm = cfg.d_model();
        let aligned = Ctran::<f64>::with_sizes(&cfg, 10, 3, 6, seed).unwrap();
        let mut regular = aligned.clone();
        regular.slot.alignment = DecoderAlignment::Regular;

        let lengths = vec![l];
        let d = random_tensor(&mut rng, &[1, l, dm]);
        let m = random_tensor(&mut rng, &[1, l, dm]);
        let tags: Vec<usize> = (0..l).map(|t| if t == 0 { BOS_TAG } else { rng.gen_range(UNK_TAG..6) }).collect();
        let j = rng.gen_range(0..l);
        let mut m2 = m.clone();
        for v in &mut m2.data_mut()[j * dm..(j + 1) * dm] {
            *v += rng.gen_range(0.5..2.0);
        }

        let (c1, z1) = cross_and_logits(&aligned, &d, &m, &tags, &lengths);
        let (c2, z2) = cross_and_logits(&aligned, &d, &m2, &tags, &lengths);
        for i in (0..l).filter(|&i| i != j) {
            assert_eq!(c1.row(i), c2.row(i), "seed {seed}: cross row {i} moved when memory row {j} changed");
            assert_eq!(z1.row(i), z2.row(i), "seed {seed}: logits row {i} moved");
        }
        assert_ne!(c1.row(j), c2.row(j), "seed {seed}: own row must react");

        let (r1, _) = cross_and_logits(&regular, &d, &m, &tags, &lengths);
        let (r2, _) = cross_and_logits(&regular, &d, &m2, &tags, &lengths);
        let i = (j + 1) % l;
        let moved = r1.row(i).iter().zip(r2.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved > 1e-9, "seed {seed}: regular decoder row {i} unchanged ({moved})");
    }
}

fn batch_for(seed: u64, n: usize) -> (LabelMaps, Batch) {
    let ex = synthetic::corpus(n, seed);
    let maps = LabelMaps::build(&ex).unwrap();
    let b = encode_batch(&ex, &maps, false).unwrap();
    (maps, b)
}

fn teacher_forced(model: &Ctran<f64>, batch: &Batch) -> Tensor<f64> {
    let mut g = Graph::new();
    let mem = model.encode(&mut g, batch, &mut Mode::Eval).unwrap();
    let z = model.teacher_forced_slots(&mut g, mem, batch, &mut Mode::Eval).unwrap();
    g.value(z).clone()
}

#[test]
fn teacher_forced_logits_are_causal() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let alignment = if seed % 2 == 0 { DecoderAlignment::Aligned } else { DecoderAlignment::Regular };
        let cfg = random_config(&mut rng, alignment);
        let (maps, batch) = batch_for(seed, 3);
        let model = Ctran::<f64>::new(&cfg, &maps, seed).unwrap();
        let base = teacher_forced(&model, &batch);
        let l = batch.max_len;
        for t in 0..l {
            let mut changed = batch.clone();
            for r in 0..batch.batch_size() {
                for s in t + 1..batch.lengths[r] {
                    changed.slot_ids[r * l + s] = rng.gen_range(UNK_TAG..maps.num_tag_ids());
                }
            }
            let out = teacher_forced(&model, &changed);
            for r in 0..batch.batch_size() {
                for s in 0..=t.min(batch.lengths[r] - 1) {
                    assert_eq!(base.row(r * l + s), out.row(r * l + s), "seed {seed}: row {r} pos {s} saw tags after {t}");
                }
            }
        }
    }
}

#[test]
fn padding_partner_does_not_change_real_positions() {
    let ex = synthetic::corpus(8, 4);
    let maps = LabelMaps::build(&ex).unwrap();
    let short = ex.iter().min_by_key(|e| e.len()).unwrap().clone();
    let long = ex.iter().max_by_key(|e| e.len()).unwrap().clone();
    assert!(long.len() > short.len());
    let model = Ctran::<f64>::new(&ModelConfig::tiny(), &maps, 2).unwrap();
    let alone = encode_batch(std::slice::from_ref(&short), &maps, false).unwrap();
    let paired = encode_batch(&[short.clone(), long], &maps, false).unwrap();
    let run = |b: &Batch| {
        let mut g = Graph::new();
        let f = model.forward(&mut g, b, &mut Mode::Eval).unwrap();
        (g.value(f.memory).clone(), g.value(f.intent_logits).clone(), g.value(f.slot_logits).clone())
    };
    let (m1, i1, s1) = run(&alone);
    let (m2, i2, s2) = run(&paired);
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10);
    for t in 0..short.len() {
        assert!(close(m1.row(t), m2.row(t)), "memory row {t}");
        assert!(close(s1.row(t), s2.row(t)), "slot logits row {t}");
    }
    assert!(close(i1.row(0), i2.row(0)));
    assert_eq!(model.predict(&alone).unwrap()[0], model.predict(&paired).unwrap()[0]);
}

fn conv_oracle(x: &Tensor<f64>, f: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (l, din) = (x.shape()[0], x.shape()[1]);
    let (k, dout) = (f.shape()[0], f.shape()[2]);
    let (left, _) = same_padding(k);
    let mut out = vec![0.0; l * dout];
    for i in 0..l {
        for o in 0..dout {
            let mut acc = b.data()[o];
            for w in 0..k {
                let src = i as isize + w as isize - left as isize;
                if src < 0 || src >= l as isize {
                    continue;
                }
                for c in 0..din {
                    acc += x.data()[src as usize * din + c] * f.data()[(w * din + c) * dout + o];
                }
            }
            out[i * dout + o] = acc;
        }
    }
    out
}

#[test]
fn conv_preserves_length_and_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for l in 1..12 {
        for k in 1..7 {
            let x = random_tensor(&mut rng, &[l, 3]);
            let f = random_tensor(&mut rng, &[k, 3, 2]);
            let b = random_tensor(&mut rng, &[2]);
            let y = conv1d_same(&x, &f, &b, Activation::Identity).unwrap();
            assert_eq!(y.shape(), [l, 2]);
            let want = conv_oracle(&x, &f, &b);
            for (a, w) in y.data().iter().zip(&want) {
                assert!((a - w).abs() < 1e-12, "L={l} k={k}");
            }
        }
    }
}

#[test]
fn conv_perturbation_stays_inside_the_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 1..7 {
        let l = 10;
        let (left, right) = same_padding(k);
        let x = random_tensor(&mut rng, &[l, 2]);
        let f = random_tensor(&mut rng, &[k, 2, 3]);
        let b = random_tensor(&mut rng, &[3]);
        let y = conv1d_same(&x, &f, &b, Activation::Identity).unwrap();
        for j in 0..l {
            let mut x2 = x.clone();
            x2.data_mut()[j * 2] += 1.0;
            let y2 = conv1d_same(&x2, &f, &b, Activation::Identity).unwrap();
            for i in 0..l {
                let inside = i + right >= j && i <= j + left;
                let same = y.row(i) == y2.row(i);
                assert_eq!(!same, inside, "k={k} j={j} i={i}");
            }
        }
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (m, k, n) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..9));
        let a = random_tensor(&mut rng, &[m, k]);
        let b = random_tensor(&mut rng, &[k, n]);
        let c = a.matmul(&b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum();
                assert!((c.data()[i * n + j] - want).abs() < 1e-12);
            }
        }
    }
}
