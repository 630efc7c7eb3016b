//! Finite-difference certification of the full blend + MSE composite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::tiny_case;
use super::train::record_loss;
use crate::autodiff::{finite_difference_check, layer_leaves, GradientReport, Tape, TapeLayer};
use crate::blender::{self, BlenderConfig, MiniNetParams, Neighborhood};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSpec {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Minimum distance of every ReLU input from 0 and of every gate cosine
    /// from δ; cases closer than this are redrawn.
    pub kink_margin: f64,
    pub max_draws: usize,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            epsilon: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            max_draws: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlendGradcheck {
    #[serde(flatten)]
    pub report: GradientReport,
    /// Case seed actually used after redraws.
    pub case_seed: u64,
    pub kink_margin: f64,
    pub passed: bool,
}

fn margins(
    nbhd: &Neighborhood<f64>,
    target: &Tensor3<f64>,
    params: &MiniNetParams<f64>,
    config: &BlenderConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let layers = layer_leaves(&mut tape, params);
    record_loss(&mut tape, &layers, nbhd, target, config)?;
    let relu = tape.kink_margin().unwrap_or(f64::INFINITY);
    let traced = blender::blend_traced(nbhd, params, config, false)?;
    let gate = traced
        .members
        .iter()
        .filter_map(|m| m.cosine)
        .map(|c| (c - config.delta).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(relu.min(gate))
}

/// Draws tiny cases from `seed` on until one clears the kink margin, then
/// checks every mini-network parameter of the blend + MSE loss.
pub fn blend_gradient_check(config: &BlenderConfig, seed: u64, spec: &GradcheckSpec) -> Result<BlendGradcheck> {
    config.validate()?;
    for draw in 0..spec.max_draws as u64 {
        let case_seed = seed.wrapping_add(draw);
        let (nbhd, params) = tiny_case(config, case_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        rng.set_stream(1);
        let target = Tensor3::from_fn(nbhd.shape(), |_, _, _| rng.random_range(0.0..1.0));
        let margin = margins(&nbhd, &target, &params, config)?;
        if margin < spec.kink_margin {
            continue;
        }
        let tensors: Vec<Tensor3<f64>> = params
            .layers()
            .iter()
            .flat_map(|l| [l.weight_tensor(), l.bias_tensor()])
            .collect();
        let kernels: Vec<usize> = params.layers().iter().map(|l| l.kernel()).collect();
        let forward = |tape: &mut Tape, vars: &[crate::autodiff::Var]| {
            let layers: Vec<TapeLayer> = kernels
                .iter()
                .enumerate()
                .map(|(k, &kernel)| TapeLayer {
                    weight: vars[2 * k],
                    bias: vars[2 * k + 1],
                    kernel,
                })
                .collect();
            record_loss(tape, &layers, &nbhd, &target, config)
        };
        let report = finite_difference_check("blend_mse", forward, &tensors, spec.epsilon)?;
        let passed = report.max_rel_err < spec.tolerance;
        return Ok(BlendGradcheck {
            report,
            case_seed,
            kink_margin: margin,
            passed,
        });
    }
    Err(Error::Invalid(format!(
        "no case within {} draws cleared the kink margin {}",
        spec.max_draws, spec.kink_margin
    )))
}
