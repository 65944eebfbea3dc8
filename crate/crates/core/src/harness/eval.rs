use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Example;
use crate::decoder::GenerationConfig;
use crate::error::{Error, Result};
use crate::flops;
use crate::model::{DlaMode, Model};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Random-selection stream, independent of every training stream.
pub const RANDOM_SELECTION_STREAM: u64 = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    /// Position-wise matches over `max(|hyp|, |ref|)` positions, pooled
    /// across the set.
    pub token_accuracy: f64,
    pub exact_match: f64,
    /// Analytic inference FLOPs per example, averaged.
    pub flops_per_example: f64,
    pub truncated: usize,
    pub examples: usize,
}

/// Decodes every example with latent selection `mode` and beam width
/// `beam`, scoring against the references.
pub fn evaluate(model: &Model<f32>, examples: &[Example], mode: DlaMode, beam: usize, seed: u64) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(Error::contract("nothing to evaluate"));
    }
    let n = model.n_latents();
    let k_prime = mode.k_prime(n);
    if n > 0 && k_prime > n {
        return Err(Error::KPrime { k_prime, n });
    }
    let spec = model.config.spec(k_prime);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RANDOM_SELECTION_STREAM);
    let (mut matched, mut positions, mut exact, mut truncated) = (0usize, 0usize, 0usize, 0usize);
    let mut flops_total = 0u64;
    for ex in examples {
        let reference = ex.content();
        let generation = GenerationConfig {
            beam,
            max_len: reference.len() + 2 + 2,
        };
        let hyp = model.transcribe(&ex.spectrogram, mode, &generation, &mut rng)?;
        matched += hyp.tokens.iter().zip(reference).filter(|(a, b)| a == b).count();
        positions += hyp.tokens.len().max(reference.len());
        exact += usize::from(hyp.tokens == reference);
        truncated += usize::from(hyp.truncated);
        flops_total += flops::cost(&spec, ex.spectrogram.rows(), ex.target.len() - 1)?.total();
    }
    Ok(EvalMetrics {
        token_accuracy: matched as f64 / positions.max(1) as f64,
        exact_match: exact as f64 / examples.len() as f64,
        flops_per_example: flops_total as f64 / examples.len() as f64,
        truncated,
        examples: examples.len(),
    })
}

/// Elementwise mean of parameter sets sharing names and shapes.
pub fn average_checkpoints(stores: &[ParamStore<f32>]) -> Result<ParamStore<f32>> {
    let first = stores.first().ok_or_else(|| Error::contract("no checkpoints to average"))?;
    for other in &stores[1..] {
        if other.len() != first.len() {
            return Err(Error::Incompatible(format!(
                "checkpoints hold {} and {} tensors",
                first.len(),
                other.len()
            )));
        }
        for ((na, a), (nb, b)) in first.iter().zip(other.iter()) {
            if na != nb || a.shape() != b.shape() {
                return Err(Error::Incompatible(format!(
                    "`{na}` {:?} does not match `{nb}` {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
    }
    let mut out = first.clone();
    let count = stores.len() as f64;
    for (i, t) in out.tensors_mut().enumerate() {
        let mut acc = vec![0.0f64; t.numel()];
        for store in stores {
            let src = store.iter().nth(i).expect("checked length").1;
            for (a, &v) in acc.iter_mut().zip(src.data()) {
                *a += f64::from(v);
            }
        }
        *t = Tensor::new(t.shape(), acc.into_iter().map(|v| (v / count) as f32).collect())?;
    }
    Ok(out)
}
