//! Shared test support: an independent brute-force implementation of the
//! diversity selector and random instance generators.
#![allow(dead_code)]

use perceiver_dla::Tensor;
use rand::Rng;

/// |cos| between rows `i` and `j` of `a`, over unmasked columns, as
/// `|<a_i, a_j>| / (|a_i| |a_j|)`.
pub fn abs_cos(a: &[Vec<f64>], mask: &[bool], i: usize, j: usize) -> f64 {
    let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
    for c in 0..mask.len() {
        if mask[c] {
            dot += a[i][c] * a[j][c];
            ni += a[i][c] * a[i][c];
            nj += a[j][c] * a[j][c];
        }
    }
    (dot / (ni.sqrt() * nj.sqrt())).abs()
}

/// Greedy selection recomputing every score from scratch at each step:
/// the first id minimizes its largest similarity to any other latent, each
/// later id minimizes its largest similarity to the ids already chosen;
/// the lowest index wins ties.
pub fn brute_force_select(a: &[Vec<f64>], mask: &[bool], k_prime: usize) -> Vec<usize> {
    let n = a.len();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k_prime {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let reference: Vec<usize> = if chosen.is_empty() {
                (0..n).filter(|&j| j != i).collect()
            } else {
                chosen.clone()
            };
            let score = reference
                .iter()
                .map(|&j| abs_cos(a, mask, i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            match best {
                Some((_, b)) if score >= b => {}
                _ => best = Some((i, score)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

pub struct Instance {
    pub a: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl Instance {
    pub fn tensor(&self) -> Tensor<f64> {
        Tensor::from_rows(&self.a).unwrap()
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }
}

fn random_mask<R: Rng>(rng: &mut R, m: usize) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.8)).collect();
    let keep = rng.gen_range(0..m);
    mask[keep] = true;
    mask
}

/// Positive attention-like rows; masked columns hold arbitrary values that
/// must be ignored.
pub fn continuous_instance<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> Instance {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let mask = random_mask(rng, m);
    let a = (0..n)
        .map(|_| {
            (0..m)
                .map(|c| if mask[c] { rng.gen_range(1e-3..1.0) } else { rng.gen_range(0.0..5.0) })
                .collect()
        })
        .collect();
    Instance { a, mask }
}

/// Scaled one-hot rows over a few unmasked columns: every similarity is
/// exactly 0 or 1 in any arithmetic, so ties are exact and frequent.
pub fn tie_instance<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> Instance {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let mask = random_mask(rng, m);
    let valid: Vec<usize> = (0..m).filter(|&c| mask[c]).collect();
    let a = (0..n)
        .map(|_| {
            let hot = valid[rng.gen_range(0..valid.len())];
            let scale = f64::from(rng.gen_range(1..8u32)) / 4.0;
            (0..m).map(|c| if c == hot { scale } else if mask[c] { 0.0 } else { 1.0 }).collect()
        })
        .collect();
    Instance { a, mask }
}

/// Three continuous instances for every tie-heavy one.
pub fn mixed_instance<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> Instance {
    if rng.gen_ratio(1, 4) {
        tie_instance(rng, max_n, max_m)
    } else {
        continuous_instance(rng, max_n, max_m)
    }
}
