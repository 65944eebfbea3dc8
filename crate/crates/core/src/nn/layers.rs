use super::params::{Initializer, ParamId, Session};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = init.fan_in(format!("{name}.weight"), &[in_dim, out_dim], in_dim);
        let bias = Some(init.constant(format!("{name}.bias"), &[out_dim], 0.0));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn without_bias<T: Element>(init: &mut Initializer<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: init.fan_in(format!("{name}.weight"), &[in_dim, out_dim], in_dim),
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Element>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = s.graph.matmul(x, s.p(self.weight))?;
        match self.bias {
            Some(b) => s.graph.add_row(y, s.p(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, name: &str, dim: usize) -> Self {
        Self {
            gain: init.constant(format!("{name}.gain"), &[dim], 1.0),
            bias: init.constant(format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<T: Element>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        s.graph.layer_norm(x, g, b)
    }
}

/// Output of [`MultiHeadAttention::forward`].
pub struct AttentionOutput {
    pub output: Var,
    /// One `queries x keys` weight matrix per head.
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::contract(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            dim,
            query: Linear::new(init, &format!("{name}.q"), dim, dim),
            // a key bias shifts every score of a row equally and cannot
            // change the weights
            key: Linear::without_bias(init, &format!("{name}.k"), dim, dim),
            value: Linear::new(init, &format!("{name}.v"), dim, dim),
            out: Linear::new(init, &format!("{name}.o"), dim, dim),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Scaled dot-product attention of `queries` over `keys_values`.
    /// `mask`, when given, is `queries x keys` with `true` on allowed pairs.
    pub fn forward<T: Element>(
        &self,
        s: &mut Session<T>,
        queries: Var,
        keys_values: Var,
        mask: Option<&[bool]>,
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(s, queries)?;
        let k = self.key.forward(s, keys_values)?;
        let v = self.value.forward(s, keys_values)?;
        let dh = self.head_dim();
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    s.graph.slice_cols(q, h * dh, dh)?,
                    s.graph.slice_cols(k, h * dh, dh)?,
                    s.graph.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = s.graph.matmul_nt(qh, kh)?;
            let scores = s.graph.scale(scores, scale);
            let w = s.graph.softmax_rows(scores, mask)?;
            contexts.push(s.graph.matmul(w, vh)?);
            weights.push(w);
        }
        let merged = if self.heads == 1 {
            contexts[0]
        } else {
            s.graph.concat_cols(&contexts)?
        };
        let output = self.out.forward(s, merged)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Builds a `queries x keys` keep-mask from an optional key validity mask
/// and an optional causal constraint. `None` means nothing is masked.
pub fn attention_mask(queries: usize, keys: usize, key_mask: Option<&[bool]>, causal: bool) -> Result<Option<Vec<bool>>> {
    if let Some(km) = key_mask {
        if km.len() != keys {
            return Err(Error::shape(
                "attention_mask",
                format!("key mask of {} for {keys} keys", km.len()),
            ));
        }
    }
    if key_mask.is_none_or(|km| km.iter().all(|&v| v)) && !causal {
        return Ok(None);
    }
    let mut mask = Vec::with_capacity(queries * keys);
    for q in 0..queries {
        for k in 0..keys {
            let valid = key_mask.is_none_or(|km| km[k]);
            mask.push(valid && (!causal || k <= q));
        }
    }
    Ok(Some(mask))
}

/// Position-wise `linear -> GELU -> linear`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            inner: Linear::new(init, &format!("{name}.fc1"), dim, hidden),
            outer: Linear::new(init, &format!("{name}.fc2"), hidden, dim),
        }
    }

    pub fn forward<T: Element>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(s, x)?;
        let h = s.graph.gelu(h);
        self.outer.forward(s, h)
    }
}

/// 1-D convolution over the time axis, realized as unfold + matrix product.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new<T: Element>(
        init: &mut Initializer<'_, T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = kernel * in_channels;
        Self {
            weight: init.fan_in(format!("{name}.weight"), &[fan_in, out_channels], fan_in),
            bias: init.constant(format!("{name}.bias"), &[out_channels], 0.0),
            kernel,
            stride,
            in_channels,
            out_channels,
        }
    }

    /// Zero padding of `(kernel - 1) / 2` per side, so stride 1 preserves
    /// length and stride `s` yields `ceil(len / s)` frames.
    pub fn output_len(&self, len: usize) -> usize {
        let pad = (self.kernel - 1) / 2;
        (len + 2 * pad - self.kernel) / self.stride + 1
    }

    pub fn forward<T: Element>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let cols = s.graph.unfold(x, self.kernel, self.stride, (self.kernel - 1) / 2)?;
        let y = s.graph.matmul(cols, s.p(self.weight))?;
        s.graph.add_row(y, s.p(self.bias))
    }
}

/// Stack of GLU-gated convolutions mapping `c` frequency bins to width `d`.
///
/// Inner convolutions emit `inner` channels, halved by the gate; the last
/// one emits `2 * d`.
#[derive(Clone, Debug)]
pub struct ConvInputProcessor {
    pub layers: Vec<Conv1d>,
}

impl ConvInputProcessor {
    pub fn new<T: Element>(
        init: &mut Initializer<'_, T>,
        name: &str,
        in_dim: usize,
        inner: usize,
        out_dim: usize,
        kernel: usize,
        strides: &[usize],
    ) -> Self {
        debug_assert!(inner % 2 == 0 && kernel % 2 == 1);
        let mut layers = Vec::with_capacity(strides.len());
        let mut c_in = in_dim;
        for (i, &stride) in strides.iter().enumerate() {
            let emitted = if i + 1 == strides.len() { 2 * out_dim } else { inner };
            layers.push(Conv1d::new(init, &format!("{name}.conv{i}"), c_in, emitted, kernel, stride));
            c_in = emitted / 2;
        }
        Self { layers }
    }

    pub fn output_len(&self, len: usize) -> usize {
        self.layers.iter().fold(len, |l, c| c.output_len(l))
    }

    pub fn forward<T: Element>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for conv in &self.layers {
            let y = conv.forward(s, h)?;
            h = s.graph.glu(y)?;
        }
        Ok(h)
    }
}

/// Maps a spectrogram to model width: the convolution stack, or a single
/// linear projection when the processor is ablated.
#[derive(Clone, Debug)]
pub enum InputProcessor {
    Conv(ConvInputProcessor),
    Linear(Linear),
}

impl InputProcessor {
    pub fn in_dim(&self) -> usize {
        match self {
            InputProcessor::Conv(c) => c.layers[0].in_channels,
            InputProcessor::Linear(l) => l.in_dim,
        }
    }

    pub fn output_len(&self, len: usize) -> usize {
        match self {
            InputProcessor::Conv(c) => c.output_len(len),
            InputProcessor::Linear(_) => len,
        }
    }

    /// Spectrogram `[m x c]` to `[m' x d]`, followed by sinusoidal positions.
    /// The processed input is not rescaled by `sqrt(d)`.
    pub fn forward<T: Element>(&self, s: &mut Session<T>, spectrogram: &Tensor<T>) -> Result<Var> {
        let (m, c) = spectrogram.expect_matrix("process_input")?;
        if c != self.in_dim() {
            return Err(Error::shape(
                "process_input",
                format!("{c} frequency bins, processor expects {}", self.in_dim()),
            ));
        }
        let x = s.graph.constant(spectrogram.clone());
        let h = match self {
            InputProcessor::Conv(conv) => {
                let kernel = conv.layers[0].kernel;
                if m < kernel {
                    return Err(Error::SequenceTooShort { len: m, kernel });
                }
                conv.forward(s, x)?
            }
            InputProcessor::Linear(l) => {
                if m == 0 {
                    return Err(Error::SequenceTooShort { len: 0, kernel: 1 });
                }
                l.forward(s, x)?
            }
        };
        let (len, d) = s.graph.value(h).expect_matrix("process_input")?;
        s.graph.add_const(h, &sinusoidal_positions(len, d))
    }
}

/// Sinusoidal position table: even columns `sin(p / 10000^(2i/d))`, odd
/// columns the matching cosine.
pub fn sinusoidal_positions<T: Element>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * dim);
    for p in 0..len {
        for j in 0..dim {
            let i = (j / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / dim as f64);
            data.push(T::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(&[len, dim], data).expect("sized by construction")
}
