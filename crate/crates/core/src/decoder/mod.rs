//! Transformer decoder over the encoder's latent rows: teacher-forced loss
//! and greedy or beam generation.

use crate::error::{Error, Result};
use crate::flops::Component;
use crate::nn::{attention_mask, sinusoidal_positions, FeedForward, Initializer, LayerNorm, Linear, MultiHeadAttention, ParamId, Session};
use crate::tensor::{Element, Tensor, Var};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// Number of reserved ids ahead of the content tokens.
pub const RESERVED_TOKENS: usize = 3;

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub vocab: usize,
    pub d: usize,
    embedding: ParamId,
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    output: Linear,
    dropout: f64,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        init: &mut Initializer<'_, T>,
        vocab: usize,
        d: usize,
        heads: usize,
        ffn: usize,
        layers: usize,
        dropout: f64,
    ) -> Result<Self> {
        let embedding = init.normal("decoder.embedding".into(), &[vocab, d], 1.0 / (d as f64).sqrt());
        let layers = (0..layers)
            .map(|i| {
                let name = format!("decoder.layer{i}");
                Ok(DecoderLayer {
                    self_norm: LayerNorm::new(init, &format!("{name}.self_norm"), d),
                    self_attn: MultiHeadAttention::new(init, &format!("{name}.self_attn"), d, heads)?,
                    cross_norm: LayerNorm::new(init, &format!("{name}.cross_norm"), d),
                    cross_attn: MultiHeadAttention::new(init, &format!("{name}.cross_attn"), d, heads)?,
                    ffn_norm: LayerNorm::new(init, &format!("{name}.ffn_norm"), d),
                    ffn: FeedForward::new(init, &format!("{name}.ffn"), d, ffn),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            vocab,
            d,
            embedding,
            layers,
            final_norm: LayerNorm::new(init, "decoder.final_norm", d),
            output: Linear::new(init, "decoder.output", d, vocab),
            dropout,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    /// Next-token logits (`t x vocab`) for every prefix of `tokens`, attending
    /// to all rows of `z`.
    pub fn logits<T: Element>(&self, s: &mut Session<T>, z: Var, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::contract("decoder input is empty"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::Index(format!("token {bad} outside vocabulary {}", self.vocab)));
        }
        let t = tokens.len();
        let memory = s.graph.value(z).rows();
        let prev = s.graph.set_scope(Component::Decoder.label());
        let emb = s.graph.gather_rows(s.p(self.embedding), tokens)?;
        let emb = s.graph.scale(emb, T::from_f64((self.d as f64).sqrt()));
        let mut h = s.graph.add_const(emb, &sinusoidal_positions(t, self.d))?;
        h = s.dropout(h, self.dropout)?;
        let causal = attention_mask(t, t, None, true)?;
        for layer in &self.layers {
            let x = layer.self_norm.forward(s, h)?;
            let a = layer.self_attn.forward(s, x, x, causal.as_deref())?.output;
            let a = s.dropout(a, self.dropout)?;
            h = s.graph.add(h, a)?;
            let x = layer.cross_norm.forward(s, h)?;
            debug_assert_eq!(s.graph.value(z).rows(), memory);
            let c = layer.cross_attn.forward(s, x, z, None)?.output;
            let c = s.dropout(c, self.dropout)?;
            h = s.graph.add(h, c)?;
            let x = layer.ffn_norm.forward(s, h)?;
            let f = layer.ffn.forward(s, x)?;
            let f = s.dropout(f, self.dropout)?;
            h = s.graph.add(h, f)?;
        }
        h = self.final_norm.forward(s, h)?;
        s.graph.set_scope(Component::OutputProjection.label());
        let out = self.output.forward(s, h)?;
        s.graph.set_scope(prev);
        Ok(out)
    }

    /// Teacher-forced label-smoothed cross-entropy of `targets`
    /// (`BOS ... EOS`), averaged over predicted positions.
    pub fn decode_loss<T: Element>(&self, s: &mut Session<T>, z: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        if targets.len() < 2 {
            return Err(Error::contract("target needs at least BOS and EOS"));
        }
        if targets[0] != BOS || targets[targets.len() - 1] != EOS {
            return Err(Error::contract("target must start with BOS and end with EOS"));
        }
        let logits = self.logits(s, z, &targets[..targets.len() - 1])?;
        s.graph.smoothed_cross_entropy(logits, &targets[1..], smoothing)
    }

    /// Decodes from the latent rows `z` (inference mode).
    pub fn generate<T: Element>(&self, s: &mut Session<T>, z: &Tensor<T>, config: &GenerationConfig) -> Result<Hypothesis> {
        if config.beam == 0 {
            return Err(Error::contract("beam width must be at least 1"));
        }
        if config.max_len < 2 {
            return Err(Error::contract("max_len must leave room for BOS and EOS"));
        }
        let z = s.graph.constant(z.clone());
        if config.beam == 1 {
            self.greedy(s, z, config.max_len)
        } else {
            self.beam_search(s, z, config)
        }
    }

    fn next_log_probs<T: Element>(&self, s: &mut Session<T>, z: Var, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.logits(s, z, prefix)?;
        let row = s.graph.value(logits).row(prefix.len() - 1);
        Ok(log_softmax(row))
    }

    fn greedy<T: Element>(&self, s: &mut Session<T>, z: Var, max_len: usize) -> Result<Hypothesis> {
        let mut tokens = vec![BOS];
        let mut score = 0.0;
        while tokens.len() < max_len {
            let lp = self.next_log_probs(s, z, &tokens)?;
            let next = argmax(&lp);
            score += lp[next];
            tokens.push(next);
            if next == EOS {
                return Ok(Hypothesis::new(tokens, score, false));
            }
        }
        Ok(Hypothesis::new(tokens, score, true))
    }

    fn beam_search<T: Element>(&self, s: &mut Session<T>, z: Var, config: &GenerationConfig) -> Result<Hypothesis> {
        let beam = config.beam;
        let mut alive = vec![(vec![BOS], 0.0f64)];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        loop {
            let best_done = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            // without a length penalty scores only fall, so a finished
            // hypothesis at least as good as every live one is final
            if alive.is_empty() || alive.iter().all(|a| a.1 <= best_done) {
                break;
            }
            if alive[0].0.len() >= config.max_len {
                if !finished.is_empty() {
                    break;
                }
                let (tokens, score) = alive.swap_remove(0);
                return Ok(Hypothesis::new(tokens, score, true));
            }
            let mut candidates = Vec::new();
            for (h, (prefix, score)) in alive.iter().enumerate() {
                let lp = self.next_log_probs(s, z, prefix)?;
                for (tok, &l) in top_k(&lp, beam).iter().map(|&t| (t, &lp[t])) {
                    candidates.push((score + l, h, tok));
                }
            }
            // highest score first; ties by parent then token
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(beam);
            for (score, h, tok) in candidates.into_iter().take(beam) {
                let mut tokens = alive[h].0.clone();
                tokens.push(tok);
                if tok == EOS {
                    finished.push((tokens, score));
                } else {
                    next.push((tokens, score));
                }
            }
            alive = next;
        }
        let (tokens, score) = finished
            .into_iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(_, f)| f)
            .expect("search ends only with a finished hypothesis");
        Ok(Hypothesis::new(tokens, score, false))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerationConfig {
    pub beam: usize,
    /// Cap on the output length, counting BOS and EOS.
    pub max_len: usize,
}

/// A decoded sequence: content tokens only (BOS/EOS stripped).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Cumulative log-probability, including the EOS step when finished.
    pub score: f64,
    /// `true` when `max_len` was hit before EOS.
    pub truncated: bool,
}

impl Hypothesis {
    fn new(mut tokens: Vec<usize>, score: f64, truncated: bool) -> Self {
        tokens.remove(0);
        if tokens.last() == Some(&EOS) {
            tokens.pop();
        }
        Self {
            tokens,
            score,
            truncated,
        }
    }
}

fn log_softmax<T: Element>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v.to_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v.to_f64() - lse).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..v.len()).collect();
    ids.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}
