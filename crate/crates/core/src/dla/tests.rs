use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn hand_similarity() {
    let a = t(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]]);
    let s = similarity(&a, None).unwrap();
    assert!((s.at(0, 1) - 0.6).abs() < 1e-15);
    assert_eq!(s.at(0, 2), 0.0);
    assert!((s.at(1, 2) - 0.8).abs() < 1e-15);
    for i in 0..3 {
        assert_eq!(s.at(i, i), 0.0);
    }
}

#[test]
fn orthogonal_and_duplicated_rows() {
    let s = similarity(&Tensor::<f64>::identity(4), None).unwrap();
    assert!(s.s.iter().all(|&v| v == 0.0));
    let s = similarity(&t(&[&[0.3, 0.2, 0.5], &[0.3, 0.2, 0.5]]), None).unwrap();
    assert_eq!(s.at(0, 1), 1.0);
}

#[test]
fn hand_selection() {
    let a = t(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]]);
    let z = t(&[&[10.0], &[11.0], &[12.0]]);
    let r = select_diverse(&z, &a, 2, None).unwrap();
    assert_eq!(r.ids, vec![0, 2]);
    assert_eq!(r.z.data(), &[10.0, 12.0]);
}

#[test]
fn total_tie_takes_lowest_indices() {
    let a = t(&[&[0.2, 0.8], &[0.2, 0.8], &[0.2, 0.8], &[0.2, 0.8]]);
    let z = Tensor::<f64>::zeros(&[4, 3]);
    assert_eq!(select_diverse(&z, &a, 2, None).unwrap().ids, vec![0, 1]);
    assert_eq!(select_diverse(&z, &a, 4, None).unwrap().ids, vec![0, 1, 2, 3]);
}

#[test]
fn masked_frames_are_never_read() {
    let a = t(&[&[0.5, 0.5, 0.0], &[0.9, 0.1, 0.0], &[0.1, 0.9, 0.0]]);
    let b = t(&[&[0.5, 0.5, 7.0], &[0.9, 0.1, -3.0], &[0.1, 0.9, 1e9]]);
    let mask = [true, true, false];
    assert_eq!(similarity(&a, Some(&mask)).unwrap(), similarity(&b, Some(&mask)).unwrap());
}

#[test]
fn zero_rows_are_degenerate() {
    let a = t(&[&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]]);
    assert!(matches!(
        similarity(&a, Some(&[true, true, false])),
        Err(Error::DegenerateAttention { row: 1 })
    ));
}

#[test]
fn k_prime_contracts() {
    let a = Tensor::<f64>::identity(3);
    assert!(matches!(select_diverse(&a, &a, 4, None), Err(Error::KPrime { k_prime: 4, n: 3 })));
    assert!(select_diverse(&a, &a, 0, None).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(select_random(&a, 5, &mut rng), Err(Error::KPrime { .. })));
    assert!(sample_train_latents(3, 4, &mut rng).is_err());
}

#[test]
fn single_latent() {
    let a = t(&[&[1.0, 2.0]]);
    assert_eq!(select_diverse(&a, &a, 1, None).unwrap().ids, vec![0]);
}

#[test]
fn full_subset_needs_no_randomness() {
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let b = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(sample_train_latents(5, 5, &mut a).unwrap(), vec![0, 1, 2, 3, 4]);
    assert_eq!(a, b);
}

#[test]
fn random_selection_is_reproducible() {
    let z = Tensor::<f64>::identity(10);
    let r1 = select_random(&z, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let r2 = select_random(&z, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(r1, r2);
    let all = select_random(&z, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(all.ids, (0..10).collect::<Vec<_>>());
}

/// Counts of each drawn subset over `draws` samples, checked against a
/// uniform expectation at three binomial standard deviations.
fn assert_uniform_subsets(n: usize, k: usize, subsets: usize, draws: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = std::collections::BTreeMap::<Vec<usize>, usize>::new();
    for _ in 0..draws {
        *counts.entry(sample_train_latents(n, k, &mut rng).unwrap()).or_default() += 1;
    }
    assert_eq!(counts.len(), subsets);
    let p = 1.0 / subsets as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (subset, &c) in &counts {
        assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{subset:?}: {c}");
    }
}

#[test]
fn sampling_is_uniform_over_subsets() {
    assert_uniform_subsets(2, 1, 2, 10_000, 4);
    assert_uniform_subsets(4, 3, 4, 10_000, 5);
}

#[test]
fn batch_matches_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let items: Vec<(Tensor<f64>, Tensor<f64>)> = (0..7)
        .map(|_| {
            let a = Tensor::new(&[8, 5], (0..40).map(|_| rng.gen_range(0.01..1.0)).collect()).unwrap();
            let z = Tensor::new(&[8, 3], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            (z, a)
        })
        .collect();
    let batch: Vec<_> = items
        .iter()
        .map(|(z, a)| SelectionInput { z, a, frame_mask: None })
        .collect();
    let got = select_diverse_batch(&batch, 3).unwrap();
    for ((z, a), r) in items.iter().zip(got) {
        assert_eq!(select_diverse(z, a, 3, None).unwrap(), r);
    }
}
