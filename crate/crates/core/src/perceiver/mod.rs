//! Perceiver encoder: a learned latent array cross-attends once to the
//! processed input, then `mu` pre-LN self-attention layers refine the
//! latents.

use crate::error::{Error, Result};
use crate::flops::Component;
use crate::nn::{attention_mask, FeedForward, Initializer, LayerNorm, MultiHeadAttention, ParamId, Session};
use crate::tensor::{Element, Var};

/// Pre-LN self-attention layer: `x + drop(attn(ln(x)))`, then
/// `x + drop(ffn(ln(x)))`.
#[derive(Clone, Debug)]
pub struct SelfAttentionLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl SelfAttentionLayer {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, name: &str, d: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            attn_norm: LayerNorm::new(init, &format!("{name}.attn_norm"), d),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads)?,
            ffn_norm: LayerNorm::new(init, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, ffn),
        })
    }

    pub fn forward<T: Element>(&self, s: &mut Session<T>, x: Var, mask: Option<&[bool]>, dropout: f64) -> Result<Var> {
        let h = self.attn_norm.forward(s, x)?;
        let a = self.attn.forward(s, h, h, mask)?.output;
        let a = s.dropout(a, dropout)?;
        let x = s.graph.add(x, a)?;
        let h = self.ffn_norm.forward(s, x)?;
        let f = self.ffn.forward(s, h)?;
        let f = s.dropout(f, dropout)?;
        s.graph.add(x, f)
    }
}

/// Result of the cross-attention block for the selected latents.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttended {
    /// Latent representation, `k x d`.
    pub z: Var,
    /// Single-head cross-attention weights, `k x m`.
    pub weights: Var,
}

/// Output of [`PerceiverEncoder::encode`].
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Final latent representation, `k x d`.
    pub z: Var,
    /// Cross-attention weights restricted to the selected latents, `k x m`.
    pub weights: Var,
    pub frame_mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct PerceiverEncoder {
    pub latents: ParamId,
    pub n_latents: usize,
    pub d: usize,
    latent_norm: LayerNorm,
    input_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    cross_ffn_norm: LayerNorm,
    cross_ffn: FeedForward,
    layers: Vec<SelfAttentionLayer>,
    final_norm: LayerNorm,
    dropout: f64,
}

/// Latent array initialization: normal(0, 0.05) truncated at two standard
/// deviations.
pub const LATENT_INIT_STD: f64 = 0.05;

impl PerceiverEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        init: &mut Initializer<'_, T>,
        n_latents: usize,
        d: usize,
        heads: usize,
        ffn: usize,
        self_layers: usize,
        dropout: f64,
    ) -> Result<Self> {
        let latents = init.truncated_normal("encoder.latents".into(), &[n_latents, d], LATENT_INIT_STD);
        let layers = (0..self_layers)
            .map(|i| SelfAttentionLayer::new(init, &format!("encoder.self{i}"), d, heads, ffn))
            .collect::<Result<_>>()?;
        Ok(Self {
            latents,
            n_latents,
            d,
            latent_norm: LayerNorm::new(init, "encoder.cross.latent_norm", d),
            input_norm: LayerNorm::new(init, "encoder.cross.input_norm", d),
            cross_attn: MultiHeadAttention::new(init, "encoder.cross.attn", d, 1)?,
            cross_ffn_norm: LayerNorm::new(init, "encoder.cross.ffn_norm", d),
            cross_ffn: FeedForward::new(init, "encoder.cross.ffn", d, ffn),
            layers,
            final_norm: LayerNorm::new(init, "encoder.final_norm", d),
            dropout,
        })
    }

    pub fn self_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn check_latent_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Index("no latents selected".into()));
        }
        let mut seen = vec![false; self.n_latents];
        for &i in ids {
            if i >= self.n_latents {
                return Err(Error::Index(format!("latent {i} out of range for n = {}", self.n_latents)));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Index(format!("latent {i} selected twice")));
            }
        }
        Ok(())
    }

    /// Cross-attention block for the latents `latent_ids` over the processed
    /// input `x` (`m x d`). `frame_mask` marks valid frames with `true`.
    pub fn cross_attend<T: Element>(
        &self,
        s: &mut Session<T>,
        x: Var,
        frame_mask: Option<&[bool]>,
        latent_ids: &[usize],
    ) -> Result<CrossAttended> {
        self.check_latent_ids(latent_ids)?;
        let prev = s.graph.set_scope(Component::EncoderCrossAttention.label());
        let frames = s.graph.value(x).rows();
        let mask = attention_mask(latent_ids.len(), frames, frame_mask, false)?;
        let l = s.graph.gather_rows(s.p(self.latents), latent_ids)?;
        let q = self.latent_norm.forward(s, l)?;
        let kv = self.input_norm.forward(s, x)?;
        let att = self.cross_attn.forward(s, q, kv, mask.as_deref())?;
        let z = s.graph.add(l, att.output)?;
        let h = self.cross_ffn_norm.forward(s, z)?;
        let f = self.cross_ffn.forward(s, h)?;
        let z = s.graph.add(z, f)?;
        s.graph.set_scope(prev);
        Ok(CrossAttended {
            z,
            weights: att.weights[0],
        })
    }

    /// The `mu` self-attention layers plus the final normalization over
    /// whichever latent rows `z` holds.
    pub fn self_attend<T: Element>(&self, s: &mut Session<T>, z: Var) -> Result<Var> {
        let prev = s.graph.set_scope(Component::EncoderSelfAttention.label());
        let mut h = z;
        for layer in &self.layers {
            h = layer.forward(s, h, None, self.dropout)?;
        }
        let out = self.final_norm.forward(s, h)?;
        s.graph.set_scope(prev);
        Ok(out)
    }

    /// Full encoder pass for the latents `latent_ids`.
    pub fn encode<T: Element>(
        &self,
        s: &mut Session<T>,
        x: Var,
        frame_mask: Option<&[bool]>,
        latent_ids: &[usize],
    ) -> Result<EncoderOutput> {
        let cross = self.cross_attend(s, x, frame_mask, latent_ids)?;
        let z = self.self_attend(s, cross.z)?;
        Ok(EncoderOutput {
            z,
            weights: cross.weights,
            frame_mask: frame_mask.map(<[bool]>::to_vec),
        })
    }
}

/// Baseline encoder: pre-LN self-attention over the processed frames.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    layers: Vec<SelfAttentionLayer>,
    final_norm: LayerNorm,
    dropout: f64,
}

impl TransformerEncoder {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, d: usize, heads: usize, ffn: usize, layers: usize, dropout: f64) -> Result<Self> {
        Ok(Self {
            layers: (0..layers)
                .map(|i| SelfAttentionLayer::new(init, &format!("encoder.layer{i}"), d, heads, ffn))
                .collect::<Result<_>>()?,
            final_norm: LayerNorm::new(init, "encoder.final_norm", d),
            dropout,
        })
    }

    pub fn encode<T: Element>(&self, s: &mut Session<T>, x: Var, frame_mask: Option<&[bool]>) -> Result<Var> {
        let prev = s.graph.set_scope(Component::EncoderSelfAttention.label());
        let frames = s.graph.value(x).rows();
        let mask = attention_mask(frames, frames, frame_mask, false)?;
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(s, h, mask.as_deref(), self.dropout)?;
        }
        let out = self.final_norm.forward(s, h)?;
        s.graph.set_scope(prev);
        Ok(out)
    }
}

/// Dominant asymptotic terms of the encoder cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityTerms {
    /// `n * m`, the cross-attention term.
    pub cross: u64,
    /// `mu * n^2`, the self-attention term.
    pub self_attention: u64,
}

pub fn complexity(latents: usize, frames: usize, self_layers: usize) -> ComplexityTerms {
    let (n, m, mu) = (latents as u64, frames as u64, self_layers as u64);
    ComplexityTerms {
        cross: n * m,
        self_attention: mu * n * n,
    }
}

#[cfg(test)]
mod tests;
