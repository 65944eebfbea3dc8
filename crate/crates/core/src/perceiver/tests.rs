use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const D: usize = 8;
const N: usize = 6;

fn encoder(seed: u64, self_layers: usize) -> (ParamStore<f64>, PerceiverEncoder) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = PerceiverEncoder::new(
        &mut Initializer {
            store: &mut store,
            rng: &mut rng,
        },
        N,
        D,
        2,
        16,
        self_layers,
        0.1,
    )
    .unwrap();
    (store, enc)
}

fn frames(seed: u64, m: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[m, D], (0..m * D).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn subset_cross_attention_restricts_the_full_one() {
    let (store, enc) = encoder(1, 2);
    let mut s = Session::new(&store, None);
    let x = s.graph.constant(frames(2, 9));
    let all: Vec<usize> = (0..N).collect();
    let full = enc.cross_attend(&mut s, x, None, &all).unwrap();
    let subset = [4, 1, 3];
    let part = enc.cross_attend(&mut s, x, None, &subset).unwrap();
    for (r, &i) in subset.iter().enumerate() {
        for c in 0..D {
            let (a, b) = (s.graph.value(part.z).at(r, c), s.graph.value(full.z).at(i, c));
            assert!((a - b).abs() < 1e-12, "row {i} col {c}: {a} vs {b}");
        }
        for f in 0..9 {
            assert_eq!(s.graph.value(part.weights).at(r, f), s.graph.value(full.weights).at(i, f));
        }
    }
}

#[test]
fn cross_weights_are_distributions_ignoring_padding() {
    let (store, enc) = encoder(3, 1);
    let mut s = Session::new(&store, None);
    let x = s.graph.constant(frames(4, 7));
    let mask = [true, true, true, true, true, false, false];
    let out = enc.encode(&mut s, x, Some(&mask), &[0, 2, 5]).unwrap();
    let a = s.graph.value(out.weights);
    assert_eq!(a.shape(), &[3, 7]);
    for r in 0..3 {
        let row = a.row(r);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(&row[5..], &[0.0, 0.0]);
    }
    assert_eq!(s.graph.value(out.z).shape(), &[3, D]);
}

#[test]
fn padding_does_not_change_the_encoding() {
    let (store, enc) = encoder(5, 2);
    let short = frames(6, 5);
    let mut padded_rows: Vec<Vec<f64>> = (0..5).map(|r| short.row(r).to_vec()).collect();
    padded_rows.push(vec![9.0; D]);
    padded_rows.push(vec![-4.0; D]);
    let padded = Tensor::from_rows(&padded_rows).unwrap();
    let mut s = Session::new(&store, None);
    let (xs, xp) = (s.graph.constant(short), s.graph.constant(padded));
    let ids: Vec<usize> = (0..N).collect();
    let a = enc.encode(&mut s, xs, None, &ids).unwrap();
    let mask = [true, true, true, true, true, false, false];
    let b = enc.encode(&mut s, xp, Some(&mask), &ids).unwrap();
    assert!(s.graph.value(a.z).max_abs_diff(s.graph.value(b.z)) < 1e-12);
}

#[test]
fn reordering_latents_reorders_the_output() {
    // Self-attention without positions is permutation-equivariant; float
    // summation order differs, so compare at a tolerance.
    let (store, enc) = encoder(7, 3);
    let mut s = Session::new(&store, None);
    let x = s.graph.constant(frames(8, 10));
    let ids = [0, 1, 2, 3, 4, 5];
    let perm = [3, 5, 0, 4, 1, 2];
    let a = enc.encode(&mut s, x, None, &ids).unwrap();
    let b = enc.encode(&mut s, x, None, &perm).unwrap();
    for (r, &i) in perm.iter().enumerate() {
        for c in 0..D {
            let diff = s.graph.value(b.z).at(r, c) - s.graph.value(a.z).at(i, c);
            assert!(diff.abs() < 1e-10);
        }
    }
}

#[test]
fn bad_latent_ids_are_rejected() {
    let (store, enc) = encoder(9, 1);
    let mut s = Session::new(&store, None);
    let x = s.graph.constant(frames(10, 4));
    for ids in [vec![], vec![1, 1], vec![N]] {
        assert!(matches!(enc.encode(&mut s, x, None, &ids), Err(Error::Index(_))));
    }
}

#[test]
fn latents_are_truncated_normal() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let enc = PerceiverEncoder::new(
        &mut Initializer {
            store: &mut store,
            rng: &mut rng,
        },
        256,
        64,
        4,
        32,
        0,
        0.0,
    )
    .unwrap();
    let l = store.get(enc.latents);
    assert!(l.data().iter().all(|v| v.abs() <= 2.0 * LATENT_INIT_STD));
    let n = l.numel() as f64;
    let mean = l.data().iter().sum::<f64>() / n;
    let var = l.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // variance of a normal truncated at two sigma is about 0.774 sigma^2
    let expected = 0.7737 * LATENT_INIT_STD * LATENT_INIT_STD;
    assert!(mean.abs() < 1e-3);
    assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
}

#[test]
fn cross_and_self_macs_land_in_their_scopes() {
    let (store, enc) = encoder(12, 2);
    let mut s = Session::new(&store, None);
    let x = s.graph.constant(frames(13, 11));
    enc.encode(&mut s, x, None, &[0, 1, 2]).unwrap();
    let macs = s.graph.macs();
    assert!(macs[Component::EncoderCrossAttention.label()] > 0);
    assert!(macs[Component::EncoderSelfAttention.label()] > 0);
}

#[test]
fn complexity_examples() {
    let t = complexity(2048, 3000, 12);
    assert_eq!(t.cross, 6_144_000);
    assert_eq!(t.self_attention, 50_331_648);
    let t = complexity(1, 1, 0);
    assert_eq!((t.cross, t.self_attention), (1, 0));
}

#[test]
fn transformer_encoder_keeps_shape() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let enc = TransformerEncoder::new(
        &mut Initializer {
            store: &mut store,
            rng: &mut rng,
        },
        D,
        2,
        16,
        2,
        0.0,
    )
    .unwrap();
    let mut s = Session::new(&store, None);
    let x = s.graph.constant(frames(15, 5));
    let z = enc.encode(&mut s, x, Some(&[true, true, true, false, false])).unwrap();
    assert_eq!(s.graph.value(z).shape(), &[5, D]);
}
