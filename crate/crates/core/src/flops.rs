//! Analytic FLOP model for the Transformer baseline and the Perceiver under
//! any inference latent count.
//!
//! Conventions: two FLOPs per multiply-add in every matrix product and
//! convolution; softmax, normalization, activations, bias and residual
//! additions, and latent selection cost nothing. The decoder is charged
//! one teacher-forced pass over `t` positions (no beam, no batching).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Cost buckets. The labels double as scope names on the runtime
/// multiply-add counter of [`crate::tensor::Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    InputProcessor,
    EncoderCrossAttention,
    EncoderSelfAttention,
    Decoder,
    OutputProjection,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::InputProcessor,
        Component::EncoderCrossAttention,
        Component::EncoderSelfAttention,
        Component::Decoder,
        Component::OutputProjection,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Component::InputProcessor => "input_processor",
            Component::EncoderCrossAttention => "encoder_cross_attention",
            Component::EncoderSelfAttention => "encoder_self_attention",
            Component::Decoder => "decoder",
            Component::OutputProjection => "output_projection",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Transformer,
    Perceiver,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_dim: usize,
    /// Channels emitted by each inner convolution before GLU gating
    /// (the gate halves them).
    pub inner: usize,
    pub kernel: usize,
    pub strides: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSpec {
    Conv(ConvSpec),
    /// Single linear projection from `in_dim` bins (processor ablated).
    Linear { in_dim: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub family: Family,
    pub d: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Self-attention layers of the encoder (`mu` for the Perceiver).
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub input: InputSpec,
    /// Latent count `n` (Perceiver only).
    pub n_latents: usize,
    /// Inference latent count `k'` (Perceiver only).
    pub k_prime: usize,
    pub vocab: usize,
}

impl ModelSpec {
    /// Perceiver at the published scale with `k'` inference latents.
    pub fn paper_perceiver(k_prime: usize) -> Self {
        Self {
            family: Family::Perceiver,
            d: 256,
            heads: 4,
            ffn: 2048,
            encoder_layers: 12,
            decoder_layers: 6,
            input: InputSpec::Conv(ConvSpec {
                in_dim: 80,
                inner: 1024,
                kernel: 5,
                strides: vec![1, 1],
            }),
            n_latents: 2048,
            k_prime,
            vocab: 8000,
        }
    }

    /// Transformer baseline at the published scale (13 encoder layers,
    /// stride-4 convolutional front end).
    pub fn paper_transformer() -> Self {
        Self {
            family: Family::Transformer,
            d: 256,
            heads: 4,
            ffn: 2048,
            encoder_layers: 13,
            decoder_layers: 6,
            input: InputSpec::Conv(ConvSpec {
                in_dim: 80,
                inner: 1024,
                kernel: 5,
                strides: vec![2, 2],
            }),
            n_latents: 0,
            k_prime: 0,
            vocab: 8000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.ffn == 0 || self.vocab == 0 {
            return Err(Error::contract("model sizes must be positive"));
        }
        if self.family == Family::Perceiver {
            if self.n_latents == 0 || self.k_prime == 0 {
                return Err(Error::contract("latent counts must be positive"));
            }
            if self.k_prime > self.n_latents {
                return Err(Error::KPrime {
                    k_prime: self.k_prime,
                    n: self.n_latents,
                });
            }
        }
        Ok(())
    }

    /// Frames leaving the input processor for `m` input frames.
    pub fn processed_len(&self, m: usize) -> usize {
        match &self.input {
            InputSpec::Conv(c) => c
                .strides
                .iter()
                .fold(m, |len, &s| (len + 2 * ((c.kernel - 1) / 2) - c.kernel) / s + 1),
            InputSpec::Linear { .. } => m,
        }
    }
}

/// FLOPs of one attention layer with `q` queries over `v` keys.
pub fn attention_flops(q: usize, v: usize, d: usize) -> u64 {
    let (q, v, d) = (q as u64, v as u64, d as u64);
    // Q, O on queries; K, V on keys; scores and weighted sum
    4 * q * d * d + 4 * v * d * d + 2 * q * v * d + 2 * q * v * d
}

pub fn ffn_flops(rows: usize, d: usize, hidden: usize) -> u64 {
    4 * rows as u64 * d as u64 * hidden as u64
}

/// Per-component FLOP totals for one example.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub components: BTreeMap<Component, u64>,
}

impl CostReport {
    pub fn total(&self) -> u64 {
        self.components.values().sum()
    }

    pub fn get(&self, c: Component) -> u64 {
        self.components.get(&c).copied().unwrap_or(0)
    }

    fn add(&mut self, c: Component, flops: u64) {
        *self.components.entry(c).or_insert(0) += flops;
    }

    pub fn accumulate(&mut self, other: &CostReport) {
        for (&c, &v) in &other.components {
            self.add(c, v);
        }
    }

    fn checked_accumulate(&mut self, other: &CostReport) -> Option<()> {
        for (&c, &v) in &other.components {
            let slot = self.components.entry(c).or_insert(0);
            *slot = slot.checked_add(v)?;
        }
        self.components.values().try_fold(0u64, |a, &b| a.checked_add(b)).map(|_| ())
    }
}

fn input_cost(spec: &ModelSpec, m: usize) -> u64 {
    match &spec.input {
        InputSpec::Conv(c) => {
            let mut len = m;
            let mut c_in = c.in_dim;
            let mut total = 0;
            for (i, &s) in c.strides.iter().enumerate() {
                let emitted = if i + 1 == c.strides.len() { 2 * spec.d } else { c.inner };
                len = (len + 2 * ((c.kernel - 1) / 2) - c.kernel) / s + 1;
                total += 2 * (len * c.kernel * c_in * emitted) as u64;
                c_in = emitted / 2;
            }
            total
        }
        InputSpec::Linear { in_dim } => 2 * (m * in_dim * spec.d) as u64,
    }
}

/// Perceiver encoder cost with `cross_latents` queries in the
/// cross-attention block and `self_latents` rows through the `mu`
/// self-attention layers, over `frames` processed frames.
pub fn perceiver_encoder_cost(spec: &ModelSpec, cross_latents: usize, self_latents: usize, frames: usize) -> (u64, u64) {
    let cross = attention_flops(cross_latents, frames, spec.d) + ffn_flops(cross_latents, spec.d, spec.ffn);
    let per_layer = attention_flops(self_latents, self_latents, spec.d) + ffn_flops(self_latents, spec.d, spec.ffn);
    (cross, spec.encoder_layers as u64 * per_layer)
}

/// Decoder cost over `t` positions attending to `memory` rows.
pub fn decoder_cost(spec: &ModelSpec, t: usize, memory: usize) -> u64 {
    let per_layer = attention_flops(t, t, spec.d) + attention_flops(t, memory, spec.d) + ffn_flops(t, spec.d, spec.ffn);
    spec.decoder_layers as u64 * per_layer
}

/// Inference cost of one example with `m` source frames and `t` decoder
/// positions. The Perceiver cross-attention always runs with all `n`
/// latents; its self-attention layers and the decoder see `k'` rows.
pub fn cost(spec: &ModelSpec, m: usize, t: usize) -> Result<CostReport> {
    spec.validate()?;
    if m == 0 || t == 0 {
        return Err(Error::contract("source and target lengths must be positive"));
    }
    let frames = spec.processed_len(m);
    let mut report = CostReport::default();
    report.add(Component::InputProcessor, input_cost(spec, m));
    let memory = match spec.family {
        Family::Perceiver => {
            let (cross, self_) = perceiver_encoder_cost(spec, spec.n_latents, spec.k_prime, frames);
            report.add(Component::EncoderCrossAttention, cross);
            report.add(Component::EncoderSelfAttention, self_);
            spec.k_prime
        }
        Family::Transformer => {
            let per_layer = attention_flops(frames, frames, spec.d) + ffn_flops(frames, spec.d, spec.ffn);
            report.add(Component::EncoderCrossAttention, 0);
            report.add(Component::EncoderSelfAttention, spec.encoder_layers as u64 * per_layer);
            frames
        }
    };
    report.add(Component::Decoder, decoder_cost(spec, t, memory));
    report.add(Component::OutputProjection, 2 * (t * spec.d * spec.vocab) as u64);
    Ok(report)
}

/// Summed cost over a corpus of `(m, t)` pairs.
pub fn corpus_cost(spec: &ModelSpec, lengths: &[(usize, usize)]) -> Result<CostReport> {
    let mut total = CostReport::default();
    for &(m, t) in lengths {
        total
            .checked_accumulate(&cost(spec, m, t)?)
            .ok_or_else(|| Error::contract("corpus FLOPs overflow 64 bits"))?;
    }
    Ok(total)
}

/// Corpus FLOPs of `spec` relative to `baseline`.
pub fn corpus_ratio(spec: &ModelSpec, baseline: &ModelSpec, lengths: &[(usize, usize)]) -> Result<f64> {
    if lengths.is_empty() {
        return Err(Error::contract("empty length corpus"));
    }
    let num = corpus_cost(spec, lengths)?.total();
    let den = corpus_cost(baseline, lengths)?.total();
    Ok(num as f64 / den as f64)
}

/// Synthetic speech-like lengths: `m` uniform in `[200, 3000]` frames,
/// `t = round(m / 30)`.
pub fn default_lengths(count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m: usize = rng.gen_range(200..=3000);
            (m, ((m as f64) / 30.0).round() as usize)
        })
        .collect()
}

/// Largest `m` or `t` accepted from a lengths file.
pub const MAX_LENGTH: usize = 1 << 20;

/// Parses a lengths file: one `m t` pair per line, `#` starts a comment.
pub fn parse_lengths(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("lengths line {}: expected `m t`, got `{raw}`", lineno + 1));
        let mut fields = line.split_whitespace();
        let m: usize = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let t: usize = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if fields.next().is_some() || m == 0 || t == 0 || m > MAX_LENGTH || t > MAX_LENGTH {
            return Err(bad());
        }
        out.push((m, t));
    }
    Ok(out)
}

/// Tab-separated component table comparing `spec` with `baseline` over a
/// corpus, ending with the total ratio.
pub fn format_report(spec: &ModelSpec, baseline: &ModelSpec, lengths: &[(usize, usize)]) -> Result<String> {
    let ratio = corpus_ratio(spec, baseline, lengths)?;
    let ours = corpus_cost(spec, lengths)?;
    let base = corpus_cost(baseline, lengths)?;
    let mut out = String::from("component\tflops\tbaseline_flops\n");
    for c in Component::ALL {
        let _ = writeln!(out, "{}\t{}\t{}", c.label(), ours.get(c), base.get(c));
    }
    let _ = writeln!(out, "total\t{}\t{}", ours.total(), base.total());
    let _ = writeln!(out, "ratio\t{ratio:.4}");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(family: Family) -> ModelSpec {
        ModelSpec {
            family,
            d: 8,
            heads: 2,
            ffn: 16,
            encoder_layers: 3,
            decoder_layers: 2,
            input: InputSpec::Linear { in_dim: 4 },
            n_latents: 16,
            k_prime: 16,
            vocab: 10,
        }
    }

    #[test]
    fn linear_layer_hand_count() {
        // 2 positions, 3 -> 4: 24 multiply-adds
        let spec = ModelSpec {
            input: InputSpec::Linear { in_dim: 3 },
            d: 4,
            ..tiny(Family::Perceiver)
        };
        assert_eq!(input_cost(&spec, 2), 48);
    }

    #[test]
    fn self_attention_scores_quadruple_when_k_doubles() {
        let d = 8u64;
        let scores = |k: usize| attention_flops(k, k, 8) - 8 * k as u64 * d * d;
        assert_eq!(scores(10), 4 * 10 * 10 * 8);
        assert_eq!(scores(20), 4 * scores(10));
    }

    #[test]
    fn full_k_prime_equals_full_inference() {
        let spec = tiny(Family::Perceiver);
        let full = cost(&spec, 50, 7).unwrap();
        let (cross, self_) = perceiver_encoder_cost(&spec, 16, 16, 50);
        assert_eq!(full.get(Component::EncoderCrossAttention), cross);
        assert_eq!(full.get(Component::EncoderSelfAttention), self_);
    }

    #[test]
    fn ratio_identity_and_duplication() {
        let spec = tiny(Family::Perceiver);
        let base = tiny(Family::Transformer);
        let lengths = default_lengths(20, 3);
        assert_eq!(corpus_ratio(&spec, &spec, &lengths).unwrap(), 1.0);
        let doubled: Vec<_> = lengths.iter().chain(&lengths).copied().collect();
        let a = corpus_ratio(&spec, &base, &lengths).unwrap();
        let b = corpus_ratio(&spec, &base, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(corpus_ratio(&spec, &base, &[]).is_err());
    }

    #[test]
    fn cost_is_monotone_in_each_size() {
        let base = tiny(Family::Perceiver);
        let c0 = cost(&base, 40, 5).unwrap().total();
        assert!(cost(&base, 41, 5).unwrap().total() >= c0);
        assert!(cost(&base, 40, 6).unwrap().total() >= c0);
        let smaller_k = ModelSpec { k_prime: 15, ..base.clone() };
        assert!(cost(&smaller_k, 40, 5).unwrap().total() <= c0);
        let wider = ModelSpec { d: 10, ..base.clone() };
        assert!(cost(&wider, 40, 5).unwrap().total() >= c0);
        let deeper = ModelSpec { encoder_layers: 4, ..base.clone() };
        assert!(cost(&deeper, 40, 5).unwrap().total() >= c0);
    }

    #[test]
    fn encoder_cost_is_exact_quadratic_in_k_prime() {
        let spec = tiny(Family::Perceiver);
        let enc = |k: usize| {
            let s = ModelSpec { k_prime: k, ..spec.clone() };
            let r = cost(&s, 40, 5).unwrap();
            (r.get(Component::EncoderSelfAttention)) as i128
        };
        // second difference of a quadratic a k^2 + b k + c is 2a
        let second = enc(6) - 2 * enc(5) + enc(4);
        let a = (spec.encoder_layers * 4 * spec.d) as i128;
        assert_eq!(second, 2 * a);
        assert_eq!(enc(9) - 2 * enc(8) + enc(7), 2 * a);
    }

    #[test]
    fn k_prime_above_n_rejected() {
        let spec = ModelSpec { k_prime: 17, ..tiny(Family::Perceiver) };
        assert!(matches!(cost(&spec, 10, 2), Err(Error::KPrime { k_prime: 17, n: 16 })));
    }

    #[test]
    fn lengths_file_parsing() {
        let text = "# corpus\n100 4\n\n  250\t9  # trailing\n";
        assert_eq!(parse_lengths(text).unwrap(), vec![(100, 4), (250, 9)]);
        assert!(parse_lengths("100\n").is_err());
        assert!(parse_lengths("1 2 3\n").is_err());
        assert!(parse_lengths("0 2\n").is_err());
        assert!(parse_lengths("x 2\n").is_err());
        assert!(parse_lengths(&format!("{} 2\n", MAX_LENGTH + 1)).is_err());
        assert!(parse_lengths(&format!("{MAX_LENGTH} {MAX_LENGTH}\n")).is_ok());
    }

    #[test]
    fn corpus_overflow_is_an_error() {
        let spec = ModelSpec::paper_transformer();
        let lengths = vec![(MAX_LENGTH, MAX_LENGTH); 1 << 16];
        assert!(matches!(corpus_cost(&spec, &lengths), Err(Error::Contract(_))));
        assert!(corpus_ratio(&spec, &spec, &lengths).is_err());
    }

    #[test]
    fn processed_length_follows_strides() {
        assert_eq!(ModelSpec::paper_transformer().processed_len(17), 5);
        assert_eq!(ModelSpec::paper_perceiver(64).processed_len(17), 17);
    }
}
