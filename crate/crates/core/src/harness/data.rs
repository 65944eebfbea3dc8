//! Synthetic speech-like sequence task: each token owns a fixed random
//! feature pattern, held for a few frames and blurred with noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decoder::{BOS, EOS, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMode {
    Copy,
    Reverse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    /// Content tokens (excluding the reserved ids).
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Frames per token.
    pub frames_per_token: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub mode: TaskMode,
    pub seed: u64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            vocab: 16,
            min_len: 5,
            max_len: 20,
            frames_per_token: 8,
            feature_dim: 16,
            noise_std: 0.1,
            mode: TaskMode::Copy,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// `m x c` features, `m = frames_per_token * t`.
    pub spectrogram: Tensor<f32>,
    /// `BOS, tokens..., EOS` in model ids.
    pub target: Vec<usize>,
}

impl Example {
    /// Content tokens of the target.
    pub fn content(&self) -> &[usize] {
        &self.target[1..self.target.len() - 1]
    }
}

/// Which split a generated set belongs to; splits draw from disjoint
/// random streams of the same task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train = 1,
    Valid = 2,
    Test = 3,
}

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.vocab == 0 {
            return bad("task_vocab", "must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("min_len", "must satisfy 1 <= min_len <= max_len");
        }
        if self.frames_per_token == 0 {
            return bad("frames_per_token", "must be positive");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", "must be finite and nonnegative");
        }
        Ok(())
    }

    /// Model vocabulary: content tokens plus PAD/BOS/EOS.
    pub fn model_vocab(&self) -> usize {
        self.vocab + RESERVED_TOKENS
    }

    /// Per-token feature patterns (`vocab x c`), fixed by the task seed.
    pub fn patterns(&self) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
        let n = self.vocab * self.feature_dim;
        Tensor::new(&[self.vocab, self.feature_dim], (0..n).map(|_| normal.sample(&mut rng)).collect())
            .expect("sized by construction")
    }

    pub fn generate(&self, split: Split, count: usize) -> Result<Vec<Example>> {
        self.validate()?;
        let patterns = self.patterns();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split as u64);
        let noise = Normal::new(0.0f32, self.noise_std as f32).expect("validated std");
        let c = self.feature_dim;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let t = rng.gen_range(self.min_len..=self.max_len);
            let tokens: Vec<usize> = (0..t).map(|_| rng.gen_range(0..self.vocab)).collect();
            let mut frames = Vec::with_capacity(t * self.frames_per_token * c);
            for &tok in &tokens {
                for _ in 0..self.frames_per_token {
                    for &p in patterns.row(tok) {
                        let eps = if self.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        frames.push(p + eps);
                    }
                }
            }
            let ordered: Vec<usize> = match self.mode {
                TaskMode::Copy => tokens,
                TaskMode::Reverse => tokens.into_iter().rev().collect(),
            };
            let mut target = Vec::with_capacity(t + 2);
            target.push(BOS);
            target.extend(ordered.iter().map(|&tok| tok + RESERVED_TOKENS));
            target.push(EOS);
            out.push(Example {
                spectrogram: Tensor::new(&[t * self.frames_per_token, c], frames)?,
                target,
            });
        }
        Ok(out)
    }
}
