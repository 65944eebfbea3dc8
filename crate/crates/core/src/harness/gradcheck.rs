//! Finite-difference checks over every layer type and the full model at
//! width 16.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, BOS, EOS};
use crate::error::Result;
use crate::flops::Family;
use crate::model::{Model, ModelConfig};
use crate::nn::{
    attention_mask, gradcheck_report, ConvInputProcessor, FeedForward, InputProcessor, Initializer, LayerNorm, Linear,
    MultiHeadAttention, ParamStore, Session,
};
use crate::perceiver::PerceiverEncoder;
use crate::tensor::{FiniteDiffReport, Tensor, Var};

pub const WIDTH: usize = 16;
pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradcheckEntry {
    pub name: &'static str,
    pub report: FiniteDiffReport,
    /// Name of the parameter holding the worst coordinate.
    pub param: String,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.report.worst_error < TOLERANCE
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// Weighted sum of the output so every coordinate carries a distinct
/// sensitivity.
fn probe(s: &mut Session<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let (r, c) = s.graph.value(y).expect_matrix("probe")?;
    let w = s.graph.constant(random(rng, r, c));
    let p = s.graph.mul(y, w)?;
    Ok(s.graph.sum(p))
}

struct Case {
    name: &'static str,
    store: ParamStore<f64>,
    loss: Box<dyn Fn(&mut Session<f64>) -> Result<Var>>,
}

fn case<L>(name: &'static str, seed: u64, build: impl FnOnce(&mut Initializer<'_, f64>) -> L, loss: impl Fn(&L, &mut Session<f64>, &mut ChaCha8Rng) -> Result<Var> + 'static) -> Case
where
    L: 'static,
{
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = build(&mut Initializer {
        store: &mut store,
        rng: &mut rng,
    });
    Case {
        name,
        store,
        loss: Box::new(move |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            loss(&layer, s, &mut rng)
        }),
    }
}

fn tiny_model(family: Family) -> ModelConfig {
    ModelConfig {
        family,
        d_model: WIDTH,
        heads: 2,
        ffn_dim: 24,
        encoder_layers: 2,
        decoder_layers: 1,
        n_latents: 6,
        input_dim: 4,
        use_input_processor: true,
        conv_channels: 6,
        conv_kernel: 3,
        conv_layers: 2,
        conv_stride: 1,
        vocab: 7,
        dropout: 0.0,
    }
}

fn cases(seed: u64) -> Result<Vec<Case>> {
    let d = WIDTH;
    let mut out = vec![
        case("linear", seed, |i| Linear::new(i, "l", d, 5), move |l, s, r| {
            let x = s.graph.constant(random(r, 3, d));
            let y = l.forward(s, x)?;
            probe(s, y, r)
        }),
        case("layer_norm", seed + 1, |i| LayerNorm::new(i, "n", d), move |l, s, r| {
            let x = s.graph.constant(random(r, 4, d));
            let y = l.forward(s, x)?;
            probe(s, y, r)
        }),
        case(
            "cross_attention_masked",
            seed + 2,
            |i| MultiHeadAttention::new(i, "a", d, 2).expect("divisible"),
            move |a, s, r| {
                let q = s.graph.constant(random(r, 3, d));
                let kv = s.graph.constant(random(r, 5, d));
                let mask = attention_mask(3, 5, Some(&[true, true, false, true, false]), false)?;
                let y = a.forward(s, q, kv, mask.as_deref())?.output;
                probe(s, y, r)
            },
        ),
        case(
            "causal_self_attention",
            seed + 3,
            |i| MultiHeadAttention::new(i, "a", d, 4).expect("divisible"),
            move |a, s, r| {
                let x = s.graph.constant(random(r, 4, d));
                let mask = attention_mask(4, 4, None, true)?;
                let y = a.forward(s, x, x, mask.as_deref())?.output;
                probe(s, y, r)
            },
        ),
        case(
            "single_head_attention",
            seed + 4,
            |i| MultiHeadAttention::new(i, "a", d, 1).expect("divisible"),
            move |a, s, r| {
                let q = s.graph.constant(random(r, 2, d));
                let kv = s.graph.constant(random(r, 6, d));
                let y = a.forward(s, q, kv, None)?.output;
                probe(s, y, r)
            },
        ),
        case("feed_forward", seed + 5, |i| FeedForward::new(i, "f", d, 24), move |f, s, r| {
            let x = s.graph.constant(random(r, 3, d));
            let y = f.forward(s, x)?;
            probe(s, y, r)
        }),
        case(
            "conv_processor_stride1",
            seed + 6,
            |i| InputProcessor::Conv(ConvInputProcessor::new(i, "c", 4, 6, d, 3, &[1, 1])),
            move |p, s, r| {
                let y = p.forward(s, &random(r, 7, 4))?;
                probe(s, y, r)
            },
        ),
        case(
            "conv_processor_stride2",
            seed + 7,
            |i| InputProcessor::Conv(ConvInputProcessor::new(i, "c", 4, 6, d, 3, &[2, 2])),
            move |p, s, r| {
                let y = p.forward(s, &random(r, 9, 4))?;
                probe(s, y, r)
            },
        ),
        case(
            "linear_processor",
            seed + 8,
            |i| InputProcessor::Linear(Linear::new(i, "p", 4, d)),
            move |p, s, r| {
                let y = p.forward(s, &random(r, 5, 4))?;
                probe(s, y, r)
            },
        ),
        case(
            "perceiver_encoder",
            seed + 9,
            |i| PerceiverEncoder::new(i, 5, d, 2, 24, 1, 0.0).expect("valid sizes"),
            move |e, s, r| {
                let x = s.graph.constant(random(r, 6, d));
                let out = e.encode(s, x, Some(&[true, true, true, true, false, true]), &[3, 0, 4])?;
                probe(s, out.z, r)
            },
        ),
        case(
            "decoder_loss",
            seed + 10,
            |i| Decoder::new(i, 7, d, 2, 24, 1, 0.0).expect("valid sizes"),
            move |dec, s, r| {
                let z = s.graph.constant(random(r, 3, d));
                dec.decode_loss(s, z, &[BOS, 3, 6, 4, EOS], 0.1)
            },
        ),
    ];
    for (name, family) in [("full_model_perceiver", Family::Perceiver), ("full_model_transformer", Family::Transformer)] {
        let model = Model::<f64>::new(tiny_model(family), seed + 11)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 12);
        let x = random(&mut rng, 7, 4);
        let store = model.params.clone();
        out.push(Case {
            name,
            store,
            loss: Box::new(move |s| model.loss(s, &x, &[BOS, 3, 5, 4, EOS], &[4, 0, 2], 0.1)),
        });
    }
    Ok(out)
}

/// Runs every check; the relative-error metric is the literal
/// `|a - n| / max(|a|, |n|, 1e-12)` over all coordinates.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckEntry>> {
    cases(seed)?
        .into_iter()
        .map(|c| {
            let report = gradcheck_report(&c.store, STEP, &c.loss)?;
            let param = c.store.iter().nth(report.param).map(|(n, _)| n.to_string()).unwrap_or_default();
            Ok(GradcheckEntry {
                name: c.name,
                report,
                param,
            })
        })
        .collect()
}
