use matformer_nn::gradcheck::check_gradients;
use matformer_nn::{
    pointer_distribution, pointer_logits, softmax, Adam, AdamConfig, Checkpoint, Linear, ParamStore, Tape, Transformer,
    TransformerConfig, Var,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro(causal: bool, conditional: bool) -> TransformerConfig {
    TransformerConfig { layers: 1, heads: 2, dim: 8, stream_vocab: vec![7, 5], causal, conditional }
}

/// Replaces every parameter with N(0, 0.4²)-ish noise so no gradient is trivially zero.
fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store.get_mut(id).mapv_inplace(|_| rng.random_range(-0.7..0.7));
    }
}

struct Micro {
    store: ParamStore,
    decoder: Transformer,
    encoder: Transformer,
    cond_proj: Linear,
    readout: Linear,
    query: Linear,
}

fn build(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let decoder = Transformer::new(&mut store, "dec", micro(true, true), &mut rng).unwrap();
    let encoder = Transformer::new(&mut store, "enc", micro(false, false), &mut rng).unwrap();
    let cond_proj = Linear::new(&mut store, "cond", 8, 8, &mut rng);
    let readout = Linear::new(&mut store, "readout", 8, 7, &mut rng);
    let query = Linear::new(&mut store, "query", 8, 8, &mut rng);
    randomize(&mut store, seed + 1);
    Micro { store, decoder, encoder, cond_proj, readout, query }
}

const DEC_A: [u32; 4] = [1, 4, 2, 6];
const DEC_B: [u32; 4] = [0, 1, 2, 3];
const ENC_A: [u32; 3] = [3, 0, 5];
const ENC_B: [u32; 3] = [0, 1, 2];

/// Token loss plus pointer loss over two decoder segments, conditioned on
/// the first encoder row.
fn micro_loss(m: &Micro, tape: &mut Tape, store: &ParamStore) -> Var {
    let enc = m.encoder.forward(tape, store, &[&ENC_A, &ENC_B], &[(0, 3)], None).unwrap();
    let first = tape.gather_rows(enc, &[0, 0, 0, 0]);
    let cond = m.cond_proj.forward(tape, store, first);
    let dec = m.decoder.forward(tape, store, &[&DEC_A, &DEC_B], &[(0, 2), (2, 2)], Some(cond)).unwrap();
    let logits = m.readout.forward(tape, store, dec);
    let tok = tape.cross_entropy_sum(logits, &[Some(4), Some(2), None, Some(0)]);
    let q = m.query.forward(tape, store, dec);
    let ptr = pointer_logits(tape, q, enc);
    let pl = tape.cross_entropy_sum(ptr, &[Some(1), Some(2), Some(0), None]);
    let total = tape.add(tok, pl);
    tape.scale(total, 1.0 / 6.0)
}

#[test]
fn gradients_match_finite_differences_on_every_tensor() {
    let m = build(3);
    let checks = check_gradients(&m.store, |t, s| micro_loss(&m, t, s), 1e-5, 64);
    assert_eq!(checks.len(), m.store.len());
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    assert!(names.iter().any(|n| n.contains("cond_mlp")));
    assert!(names.contains(&"query.weight"));
    for c in &checks {
        assert!(c.relative_error <= 1e-3, "{}: relative error {}", c.name, c.relative_error);
        // A key bias shifts every score of a row equally, so softmax cancels it.
        if !c.name.ends_with("key.bias") {
            assert!(c.analytic_norm > 1e-4, "{} has no gradient", c.name);
        }
    }
}

fn decoder_rows(t: &Transformer, store: &ParamStore, a: &[u32], b: &[u32]) -> Array2<f64> {
    let mut tape = Tape::new();
    let y = t.forward(&mut tape, store, &[a, b], &[(0, a.len())], None).unwrap();
    tape.value(y).clone()
}

#[test]
fn causal_rows_ignore_later_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let t = Transformer::new(&mut store, "dec", micro(true, false), &mut rng).unwrap();
    randomize(&mut store, 10);
    let a = [1u32, 2, 3, 4, 5, 6];
    let b = [0u32, 1, 2, 3, 4, 0];
    let base = decoder_rows(&t, &store, &a, &b);
    for pos in 1..a.len() {
        let mut a2 = a;
        a2[pos] = (a2[pos] + 3) % 7;
        let other = decoder_rows(&t, &store, &a2, &b);
        for r in 0..pos {
            assert_eq!(base.row(r), other.row(r), "row {r} changed when token {pos} did");
        }
        assert_ne!(base.row(pos), other.row(pos));
    }
}

#[test]
fn encoder_rows_see_the_whole_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let t = Transformer::new(&mut store, "enc", micro(false, false), &mut rng).unwrap();
    randomize(&mut store, 12);
    let a = [1u32, 2, 3, 4];
    let b = [0u32, 1, 2, 3];
    let base = decoder_rows(&t, &store, &a, &b);
    let mut a2 = a;
    a2[3] = 6;
    let other = decoder_rows(&t, &store, &a2, &b);
    for r in 0..4 {
        assert_ne!(base.row(r), other.row(r));
    }
}

#[test]
fn segments_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let t = Transformer::new(&mut store, "enc", micro(false, false), &mut rng).unwrap();
    randomize(&mut store, 14);
    let single = decoder_rows(&t, &store, &[1, 2, 3], &[0, 1, 2]);
    let mut tape = Tape::new();
    let y = t.forward(&mut tape, &store, &[&[1, 2, 3, 4, 4], &[0, 1, 2, 0, 1]], &[(0, 3), (3, 2)], None).unwrap();
    let joint = tape.value(y);
    for r in 0..3 {
        for c in 0..8 {
            assert!((joint[[r, c]] - single[[r, c]]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_weights_give_uniform_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let t = Transformer::new(&mut store, "dec", micro(true, true), &mut rng).unwrap();
    let head = Linear::new(&mut store, "head", 8, 7, &mut rng);
    let ids: Vec<usize> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store.get_mut(id).fill(0.0);
    }
    let mut tape = Tape::new();
    let cond = tape.constant(Array2::from_elem((3, 8), 0.3));
    let y = t.forward(&mut tape, &store, &[&[1, 2, 3], &[0, 1, 2]], &[(0, 3)], Some(cond)).unwrap();
    let logits = head.forward(&mut tape, &store, y);
    for row in tape.value(logits).rows() {
        let p = softmax(&row.to_vec());
        for x in p {
            assert!((x - 1.0 / 7.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_condition_matches_unconditional_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cs = ParamStore::new();
    let cond_model = Transformer::new(&mut cs, "m", micro(true, true), &mut rng).unwrap();
    randomize(&mut cs, 22);
    let ids: Vec<(usize, String)> = cs.iter().map(|(id, n, _)| (id, n.to_string())).collect();
    for (id, name) in &ids {
        if name.contains("cond_") && name.ends_with("bias") {
            cs.get_mut(*id).fill(0.0);
        }
        if name.contains("cond_ln.beta") {
            cs.get_mut(*id).fill(0.0);
        }
    }
    let mut us = ParamStore::new();
    let plain = Transformer::new(&mut us, "m", micro(true, false), &mut rng).unwrap();
    let plain_ids: Vec<(usize, String)> = us.iter().map(|(id, n, _)| (id, n.to_string())).collect();
    for (id, name) in plain_ids {
        let src = cs.id(&name).unwrap();
        us.set(id, cs.get(src).clone()).unwrap();
    }
    let (a, b) = ([1u32, 5, 2, 0], [0u32, 1, 2, 3]);
    let mut tape = Tape::new();
    let zero = tape.constant(Array2::zeros((4, 8)));
    let with = cond_model.forward(&mut tape, &cs, &[&a, &b], &[(0, 4)], Some(zero)).unwrap();
    let without = decoder_rows(&plain, &us, &a, &b);
    assert_eq!(tape.value(with), &without);
}

#[test]
fn forward_is_pure() {
    let m = build(5);
    let run = || {
        let mut t = Tape::new();
        let l = micro_loss(&m, &mut t, &m.store);
        t.scalar(l)
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn training_is_deterministic_and_resumable() {
    let train = |steps: usize, resume: Option<(ParamStore, Adam)>| {
        let m = build(7);
        let (mut store, mut adam) = resume.unwrap_or_else(|| (m.store.clone(), Adam::new(&m.store, AdamConfig { lr: 1e-2, ..Default::default() })));
        let mut losses = Vec::new();
        for _ in 0..steps {
            let mut t = Tape::new();
            let l = micro_loss(&m, &mut t, &store);
            losses.push(t.scalar(l));
            let g = t.backward(l, store.len());
            adam.update(&mut store, &g).unwrap();
        }
        (store, adam, losses)
    };
    let (s_full, _, l_full) = train(6, None);
    let (s_again, _, l_again) = train(6, None);
    assert_eq!(l_full, l_again);
    assert_eq!(s_full, s_again);
    assert!(l_full[5] < l_full[0]);

    let (s_half, a_half, _) = train(3, None);
    let ck = Checkpoint::from_store("{}".into(), "{}".into(), &s_half, Some(&a_half));
    let mut buf = Vec::new();
    ck.write(&mut buf).unwrap();
    let back = Checkpoint::read(&mut buf.as_slice()).unwrap();
    let mut store = build(7).store;
    back.restore(&mut store).unwrap();
    let mut adam = Adam::new(&store, AdamConfig { lr: 1e-2, ..Default::default() });
    assert!(back.restore_adam(&store, &mut adam).unwrap());
    adam.step = a_half.step;
    let (s_resumed, _, _) = train(3, Some((store, adam)));
    assert_eq!(s_resumed, s_full);
}

#[test]
fn pointer_distribution_prefers_aligned_keys() {
    let keys = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
    let p = pointer_distribution(&[2.0, 0.0], &keys).unwrap();
    assert!(p[0] > p[1] && p[1] > p[2]);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted: Vec<f64> = logits.iter().map(|x| x + 7.5).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn causal_prefix_property(seed in 0u64..1000, pos in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let t = Transformer::new(&mut store, "dec", micro(true, false), &mut rng).unwrap();
        randomize(&mut store, seed);
        let a: Vec<u32> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let b: Vec<u32> = (0..6).map(|_| rng.random_range(0..5)).collect();
        let base = decoder_rows(&t, &store, &a, &b);
        let mut a2 = a.clone();
        a2[pos] = (a2[pos] + 1) % 7;
        let other = decoder_rows(&t, &store, &a2, &b);
        for r in 0..pos {
            prop_assert_eq!(base.row(r), other.row(r));
        }
    }
}
