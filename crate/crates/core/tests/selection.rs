mod common;

use common::*;
use perceiver_dla::dla::{select_diverse, select_diverse_ids, similarity};
use perceiver_dla::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(inst: &Instance, k: usize) -> Vec<usize> {
    let sim = similarity(&inst.tensor(), Some(&inst.mask)).unwrap();
    select_diverse_ids(&sim, k).unwrap()
}

#[test]
fn matches_the_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let inst = mixed_instance(&mut rng, 20, 12);
        for k in 1..=inst.n() {
            assert_eq!(ids(&inst, k), brute_force_select(&inst.a, &inst.mask, k), "case {case} k' {k}");
        }
    }
}

#[test]
fn similarity_matches_the_oracle_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let inst = continuous_instance(&mut rng, 12, 10);
        let sim = similarity(&inst.tensor(), Some(&inst.mask)).unwrap();
        for i in 0..inst.n() {
            for j in 0..inst.n() {
                if i != j {
                    assert!((sim.at(i, j) - abs_cos(&inst.a, &inst.mask, i, j)).abs() < 1e-12);
                    assert_eq!(sim.at(i, j), sim.at(j, i));
                }
            }
        }
    }
}

#[test]
fn gathered_rows_follow_the_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inst = continuous_instance(&mut rng, 16, 8);
    let n = inst.n();
    let z = Tensor::new(&[n, 3], (0..n * 3).map(|v| v as f64).collect()).unwrap();
    let r = select_diverse(&z, &inst.tensor(), n, Some(&inst.mask)).unwrap();
    let mut sorted = r.ids.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    for (row, &id) in r.ids.iter().enumerate() {
        assert_eq!(r.z.row(row), z.row(id));
    }
    assert!(matches!(select_diverse(&z, &inst.tensor(), n + 1, Some(&inst.mask)), Err(Error::KPrime { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_is_prefix_stable_and_scale_invariant(seed in any::<u64>(), scales in proptest::collection::vec(-6i32..6, 32)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = mixed_instance(&mut rng, 24, 12);
        let n = inst.n();
        let full = ids(&inst, n);
        for k in 1..n {
            prop_assert_eq!(&ids(&inst, k)[..], &full[..k]);
        }
        // power-of-two row scaling leaves the normalized rows bit-identical
        let scaled = Instance {
            a: inst.a.iter().zip(&scales).map(|(row, &e)| row.iter().map(|v| v * 2f64.powi(e)).collect()).collect(),
            mask: inst.mask.clone(),
        };
        let s0 = similarity(&inst.tensor(), Some(&inst.mask)).unwrap();
        let s1 = similarity(&scaled.tensor(), Some(&scaled.mask)).unwrap();
        prop_assert_eq!(s0, s1);
        prop_assert_eq!(ids(&scaled, n), full);
    }
}

#[test]
fn identical_rows_select_in_index_order() {
    for n in 1..10 {
        let inst = Instance {
            a: vec![vec![0.2, 0.5, 0.3]; n],
            mask: vec![true; 3],
        };
        assert_eq!(ids(&inst, n), (0..n).collect::<Vec<_>>());
    }
}
