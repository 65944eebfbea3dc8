//! Layers of the encoder-decoder model.

mod layers;
mod params;

pub use layers::{
    attention_mask, sinusoidal_positions, AttentionOutput, Conv1d, ConvInputProcessor, FeedForward,
    InputProcessor, LayerNorm, Linear, MultiHeadAttention,
};
pub use params::{Initializer, ParamId, ParamStore, Session};

use crate::error::Result;
use crate::tensor::{finite_diff_report, FiniteDiffReport, Var};

/// Finite-difference check over every tensor of `store` for the scalar
/// built by `f`; returns the worst relative error.
pub fn gradcheck_params<F>(store: &ParamStore<f64>, step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    Ok(gradcheck_report(store, step, f)?.worst_error)
}

/// [`gradcheck_params`] with the worst coordinate identified.
pub fn gradcheck_report<F>(store: &ParamStore<f64>, step: f64, f: F) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    let tensors: Vec<_> = store.iter().map(|(_, t)| t.clone()).collect();
    finite_diff_report(&tensors, step, |g, vars| {
        let mut s = Session::from_parts(std::mem::take(g), vars.to_vec());
        let out = f(&mut s);
        *g = s.graph;
        out
    })
}
