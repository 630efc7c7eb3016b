//! Reverse-mode differentiation, finite-difference certification and SGD.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_difference_check, GradientReport, ParamError};
pub use tape::{Gradients, Tape, TapeLayer, Var};

use crate::blender::MiniNetParams;
use crate::error::{Error, Result};
use crate::tensor::ConvLayer;

/// Puts every layer of `params` on the tape as leaves.
pub fn layer_leaves(tape: &mut Tape, params: &MiniNetParams<f64>) -> Vec<TapeLayer> {
    params.layers().iter().map(|l| tape.layer(l)).collect()
}

/// Collects the gradients of [`layer_leaves`] into a parameter-shaped set.
pub fn collect_gradients(grads: &Gradients, layers: &[TapeLayer]) -> Result<MiniNetParams<f64>> {
    let layers = layers
        .iter()
        .map(|l| {
            let w = grads.get(l.weight).ok_or_else(|| Error::Invalid("missing weight gradient".into()))?;
            let b = grads.get(l.bias).ok_or_else(|| Error::Invalid("missing bias gradient".into()))?;
            ConvLayer::from_tensors(w, b)
        })
        .collect::<Result<Vec<_>>>()?;
    MiniNetParams::new(layers)
}

/// `θ ← θ − lr·g` for every scalar.
pub fn sgd_step(
    params: &MiniNetParams<f64>,
    grads: &MiniNetParams<f64>,
    learning_rate: f64,
) -> Result<MiniNetParams<f64>> {
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::LearningRate(learning_rate));
    }
    if params.depth() != grads.depth() {
        return Err(Error::Invalid(format!(
            "{} gradient layers for {} parameter layers",
            grads.depth(),
            params.depth()
        )));
    }
    let mut out = params.clone();
    for (layer, g) in out.layers_mut().iter_mut().zip(grads.layers()) {
        if layer.weights().len() != g.weights().len() || layer.bias().len() != g.bias().len() {
            return Err(Error::ShapeMismatch {
                left: layer.weight_tensor().shape(),
                right: g.weight_tensor().shape(),
            });
        }
        for (w, &gw) in layer.weights_mut().iter_mut().zip(g.weights()) {
            *w -= learning_rate * gw;
        }
        for (b, &gb) in layer.bias_mut().iter_mut().zip(g.bias()) {
            *b -= learning_rate * gb;
        }
    }
    Ok(out)
}
