//! Full speech-to-text model: input processor, Perceiver (or baseline
//! Transformer) encoder, decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, GenerationConfig, Hypothesis};
use crate::dla;
use crate::error::{Error, Result};
use crate::flops::{Component, ConvSpec, Family, InputSpec, ModelSpec};
use crate::nn::{ConvInputProcessor, InputProcessor, Initializer, Linear, ParamStore, Session};
use crate::perceiver::{PerceiverEncoder, TransformerEncoder};
use crate::tensor::{Element, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// `mu` self-attention layers for the Perceiver; all layers for the
    /// baseline.
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub n_latents: usize,
    /// Frequency bins of the input spectrogram.
    pub input_dim: usize,
    pub use_input_processor: bool,
    /// Channels emitted by the inner convolution, before gating.
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_layers: usize,
    pub conv_stride: usize,
    /// Output vocabulary including the reserved ids.
    pub vocab: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Perceiver,
            d_model: 64,
            heads: 4,
            ffn_dim: 256,
            encoder_layers: 4,
            decoder_layers: 2,
            n_latents: 64,
            input_dim: 16,
            use_input_processor: true,
            conv_channels: 64,
            conv_kernel: 5,
            conv_layers: 2,
            conv_stride: 1,
            vocab: 19,
            dropout: 0.15,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("decoder_layers", self.decoder_layers),
            ("input_dim", self.input_dim),
            ("conv_kernel", self.conv_kernel),
            ("conv_layers", self.conv_layers),
            ("conv_stride", self.conv_stride),
            ("vocab", self.vocab),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(config_error(key, "must be positive"));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(config_error("heads", format!("must divide d_model = {}", self.d_model)));
        }
        if self.family == Family::Perceiver && self.n_latents == 0 {
            return Err(config_error("n_latents", "must be positive"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(config_error("conv_kernel", "must be odd"));
        }
        if self.conv_channels == 0 || self.conv_channels % 2 != 0 {
            return Err(config_error("conv_channels", "must be positive and even"));
        }
        if self.vocab <= crate::decoder::RESERVED_TOKENS {
            return Err(config_error("vocab", "must exceed the reserved ids"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_error("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Cost-model description of this architecture with `k_prime`
    /// inference latents.
    pub fn spec(&self, k_prime: usize) -> ModelSpec {
        ModelSpec {
            family: self.family,
            d: self.d_model,
            heads: self.heads,
            ffn: self.ffn_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            input: if self.use_input_processor {
                InputSpec::Conv(ConvSpec {
                    in_dim: self.input_dim,
                    inner: self.conv_channels,
                    kernel: self.conv_kernel,
                    strides: vec![self.conv_stride; self.conv_layers],
                })
            } else {
                InputSpec::Linear { in_dim: self.input_dim }
            },
            n_latents: if self.family == Family::Perceiver { self.n_latents } else { 0 },
            k_prime: if self.family == Family::Perceiver { k_prime } else { 0 },
            vocab: self.vocab,
        }
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Perceiver(PerceiverEncoder),
    Transformer(TransformerEncoder),
}

/// How the latent rows handed to the self-attention layers are chosen at
/// inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlaMode {
    Full,
    Diverse(usize),
    Random(usize),
}

impl DlaMode {
    pub fn k_prime(self, n: usize) -> usize {
        match self {
            DlaMode::Full => n,
            DlaMode::Diverse(k) | DlaMode::Random(k) => k,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub input: InputProcessor,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Encoder output at inference.
pub struct Encoded<T> {
    /// Rows fed to the decoder (`k' x d`).
    pub memory: Tensor<T>,
    /// Latent ids kept by the selector (`None` for the baseline).
    pub latent_ids: Option<Vec<usize>>,
}

impl<T: Element> Model<T> {
    /// Freshly initialized model; parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let input = if c.use_input_processor {
            InputProcessor::Conv(ConvInputProcessor::new(
                &mut init,
                "input",
                c.input_dim,
                c.conv_channels,
                c.d_model,
                c.conv_kernel,
                &vec![c.conv_stride; c.conv_layers],
            ))
        } else {
            InputProcessor::Linear(Linear::new(&mut init, "input.linear", c.input_dim, c.d_model))
        };
        let encoder = match c.family {
            Family::Perceiver => Encoder::Perceiver(PerceiverEncoder::new(
                &mut init,
                c.n_latents,
                c.d_model,
                c.heads,
                c.ffn_dim,
                c.encoder_layers,
                c.dropout,
            )?),
            Family::Transformer => Encoder::Transformer(TransformerEncoder::new(
                &mut init,
                c.d_model,
                c.heads,
                c.ffn_dim,
                c.encoder_layers,
                c.dropout,
            )?),
        };
        let decoder = Decoder::new(&mut init, c.vocab, c.d_model, c.heads, c.ffn_dim, c.decoder_layers, c.dropout)?;
        Ok(Self {
            config,
            params,
            input,
            encoder,
            decoder,
        })
    }

    /// Model with the given named parameters, which must match the
    /// architecture exactly.
    pub fn from_named(config: ModelConfig, named: &[(String, Tensor<T>)]) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_named(named)?;
        Ok(model)
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            input: self.input.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn n_latents(&self) -> usize {
        match &self.encoder {
            Encoder::Perceiver(p) => p.n_latents,
            Encoder::Transformer(_) => 0,
        }
    }

    pub fn process<'s>(&self, s: &'s mut Session<T>, spectrogram: &Tensor<T>) -> Result<Var> {
        let prev = s.graph.set_scope(Component::InputProcessor.label());
        let x = self.input.forward(s, spectrogram);
        s.graph.set_scope(prev);
        x
    }

    /// Teacher-forced loss of one example. For the Perceiver, `latent_ids`
    /// picks the latents used end to end (training-time subsampling); the
    /// baseline ignores it.
    pub fn loss(
        &self,
        s: &mut Session<T>,
        spectrogram: &Tensor<T>,
        targets: &[usize],
        latent_ids: &[usize],
        smoothing: f64,
    ) -> Result<Var> {
        let x = self.process(s, spectrogram)?;
        let memory = match &self.encoder {
            Encoder::Perceiver(p) => p.encode(s, x, None, latent_ids)?.z,
            Encoder::Transformer(t) => t.encode(s, x, None)?,
        };
        self.decoder.decode_loss(s, memory, targets, smoothing)
    }

    /// Inference-time encoding. The Perceiver's cross-attention always runs
    /// with all `n` latents; `mode` then picks the rows that go through the
    /// self-attention layers and on to the decoder.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        s: &mut Session<T>,
        spectrogram: &Tensor<T>,
        mode: DlaMode,
        rng: &mut R,
    ) -> Result<(Var, Option<Vec<usize>>)> {
        let x = self.process(s, spectrogram)?;
        match &self.encoder {
            Encoder::Perceiver(p) => {
                let all: Vec<usize> = (0..p.n_latents).collect();
                let cross = p.cross_attend(s, x, None, &all)?;
                let ids = match mode {
                    DlaMode::Full => all,
                    DlaMode::Diverse(k) => {
                        let sim = dla::similarity(s.graph.value(cross.weights), None)?;
                        dla::select_diverse_ids(&sim, k)?
                    }
                    DlaMode::Random(k) => dla::select_random(s.graph.value(cross.z), k, rng)?.ids,
                };
                let z = if ids.len() == p.n_latents && mode == DlaMode::Full {
                    cross.z
                } else {
                    s.graph.gather_rows(cross.z, &ids)?
                };
                Ok((p.self_attend(s, z)?, Some(ids)))
            }
            Encoder::Transformer(t) => {
                if mode != DlaMode::Full {
                    return Err(Error::contract("latent selection needs a Perceiver encoder"));
                }
                Ok((t.encode(s, x, None)?, None))
            }
        }
    }

    /// Encodes and decodes one spectrogram in inference mode.
    pub fn transcribe<R: Rng + ?Sized>(
        &self,
        spectrogram: &Tensor<T>,
        mode: DlaMode,
        generation: &GenerationConfig,
        rng: &mut R,
    ) -> Result<Hypothesis> {
        let mut s = Session::new(&self.params, None);
        let (z, _) = self.encode(&mut s, spectrogram, mode, rng)?;
        let memory = s.graph.value(z).clone();
        self.decoder.generate(&mut s, &memory, generation)
    }

    /// Cross-attention output and weights of all `n` latents for one input,
    /// as stored in an attention record.
    pub fn attention_record(&self, spectrogram: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let Encoder::Perceiver(p) = &self.encoder else {
            return Err(Error::contract("attention records need a Perceiver encoder"));
        };
        let mut s = Session::new(&self.params, None);
        let x = self.process(&mut s, spectrogram)?;
        let all: Vec<usize> = (0..p.n_latents).collect();
        let cross = p.cross_attend(&mut s, x, None, &all)?;
        Ok((s.graph.value(cross.z).clone(), s.graph.value(cross.weights).clone()))
    }
}
