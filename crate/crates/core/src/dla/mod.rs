//! Dynamic latent access: random latent subsets while training, and
//! diversity-driven selection of latent representations at inference.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Selected latent ids (in selection order) and the matching rows of `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult<T = f32> {
    pub ids: Vec<usize>,
    pub z: Tensor<T>,
}

/// `k` distinct latent ids drawn uniformly among the `k`-subsets of
/// `0..n`, returned in increasing order. `k == n` draws nothing.
pub fn sample_train_latents<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::contract(format!("cannot sample {k} of {n} latents")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut ids = index::sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Absolute cosine similarity between cross-attention rows, restricted to
/// valid frames. Row-major `n x n`; the diagonal is stored as 0 and never
/// read by the selectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub n: usize,
    pub s: Vec<f64>,
}

impl Similarity {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }
}

pub fn similarity<T: Element>(a: &Tensor<T>, frame_mask: Option<&[bool]>) -> Result<Similarity> {
    let (n, m) = a.expect_matrix("similarity")?;
    if let Some(mask) = frame_mask {
        if mask.len() != m {
            return Err(Error::shape("similarity", format!("frame mask of {} for {m} frames", mask.len())));
        }
    }
    let cols: Vec<usize> = (0..m).filter(|&c| frame_mask.is_none_or(|f| f[c])).collect();
    let mut unit = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        let row = a.row(i);
        let norm = cols.iter().map(|&c| row[c].to_f64().powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateAttention { row: i });
        }
        unit.extend(cols.iter().map(|&c| row[c].to_f64() / norm));
    }
    let w = cols.len();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = unit[i * w..(i + 1) * w].iter().zip(&unit[j * w..(j + 1) * w]).map(|(x, y)| x * y).sum();
            let v = dot.abs().min(1.0);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    Ok(Similarity { n, s })
}

/// Greedy max-min diverse ordering of `k_prime` ids under `sim`.
///
/// Starts from the latent whose most similar peer is least similar, then
/// repeatedly adds the latent whose highest similarity to the chosen set is
/// lowest. Ties go to the lowest index.
pub fn select_diverse_ids(sim: &Similarity, k_prime: usize) -> Result<Vec<usize>> {
    let n = sim.n;
    check_k_prime(k_prime, n)?;
    // closest[i]: max similarity of i to the reference set (all others for
    // the first pick, the chosen ids afterwards)
    let mut closest: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| sim.at(i, j)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut chosen = vec![false; n];
    let mut ids = Vec::with_capacity(k_prime);
    let first = argmin(&closest, &chosen);
    ids.push(first);
    chosen[first] = true;
    closest.fill(f64::NEG_INFINITY);
    let mut last = first;
    while ids.len() < k_prime {
        for i in 0..n {
            if !chosen[i] {
                closest[i] = closest[i].max(sim.at(i, last));
            }
        }
        last = argmin(&closest, &chosen);
        ids.push(last);
        chosen[last] = true;
    }
    Ok(ids)
}

fn argmin(scores: &[f64], skip: &[bool]) -> usize {
    let mut best = None;
    for (i, &v) in scores.iter().enumerate() {
        if skip[i] {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.expect("at least one candidate").0
}

pub fn check_k_prime(k_prime: usize, n: usize) -> Result<()> {
    if k_prime > n {
        return Err(Error::KPrime { k_prime, n });
    }
    if k_prime == 0 {
        return Err(Error::contract("k' must be at least 1"));
    }
    Ok(())
}

/// Diversity-based selection over one example's latent representation `z`
/// (`n x d`) and cross-attention weights `a` (`n x m`).
pub fn select_diverse<T: Element>(
    z: &Tensor<T>,
    a: &Tensor<T>,
    k_prime: usize,
    frame_mask: Option<&[bool]>,
) -> Result<SelectionResult<T>> {
    let (n, _) = z.expect_matrix("select_diverse")?;
    if a.rows() != n {
        return Err(Error::shape("select_diverse", format!("{n} latent rows but {} attention rows", a.rows())));
    }
    check_k_prime(k_prime, n)?;
    let ids = select_diverse_ids(&similarity(a, frame_mask)?, k_prime)?;
    let z = z.gather_rows(&ids)?;
    Ok(SelectionResult { ids, z })
}

/// Uniformly random `k_prime`-subset baseline, ids in increasing order.
pub fn select_random<T: Element, R: Rng + ?Sized>(z: &Tensor<T>, k_prime: usize, rng: &mut R) -> Result<SelectionResult<T>> {
    let (n, _) = z.expect_matrix("select_random")?;
    check_k_prime(k_prime, n)?;
    let ids = sample_train_latents(n, k_prime, rng)?;
    let z = z.gather_rows(&ids)?;
    Ok(SelectionResult { ids, z })
}

/// One example for [`select_diverse_batch`].
pub struct SelectionInput<'a, T> {
    pub z: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
    pub frame_mask: Option<&'a [bool]>,
}

/// Per-example diverse selection over a batch, spread across threads.
pub fn select_diverse_batch<T: Element + Send + Sync>(
    batch: &[SelectionInput<'_, T>],
    k_prime: usize,
) -> Result<Vec<SelectionResult<T>>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(batch.len().max(1));
    let chunk = batch.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|x| select_diverse(x.z, x.a, k_prime, x.frame_mask))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for h in handles {
            out.extend(h.join().expect("selection worker panicked")?);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests;
