//! Held-out reconstruction error per method and region weight statistics.

use serde::{Deserialize, Serialize};

use super::windows;
use crate::blender::{self, baseline_aggregate, BaselineScheme, BlenderConfig, MiniNetParams, Neighborhood};
use crate::error::{Error, Result};
use crate::synth::{generate_sequence, reconstruction_error, SceneLayout, SceneSpec, SequencePair};
use crate::tensor::{Precision, Real, Shape};

/// Pre-generated sequences and the neighbor count used to cut them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scene: SceneSpec,
    pub sequences: Vec<SequencePair<f64>>,
    pub neighbors: usize,
}

impl Dataset {
    /// `count` sequences with scene seeds `first_seed, first_seed + 1, …`.
    pub fn generate(
        scene: &SceneSpec,
        first_seed: u64,
        count: usize,
        length: usize,
        neighbors: usize,
    ) -> Result<Self> {
        let sequences = (0..count as u64)
            .map(|k| generate_sequence(&scene.with_seed(first_seed + k), length))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            scene: scene.clone(),
            sequences,
            neighbors,
        })
    }

    /// `(sequence, frame)` pairs with full neighborhoods.
    pub fn samples(&self) -> Vec<(usize, usize)> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| {
                windows::full_frames(seq.len(), self.neighbors)
                    .into_iter()
                    .map(move |t| (s, t))
            })
            .collect()
    }

    /// Observed-frame neighborhood of frame `t` in sequence `s`.
    pub fn neighborhood(&self, s: usize, t: usize, include_self: bool) -> Result<Neighborhood<f64>> {
        windows::neighborhood(&self.sequences[s].observed, t, self.neighbors, include_self)?
            .ok_or_else(|| Error::Neighborhood(format!("frame {t} has no neighbors")))
    }
}

/// Mean MSE against the clean frame, averaged over full-neighborhood frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub mse_passthrough: f64,
    pub mse_uniform: f64,
    pub mse_cosine: f64,
    pub mse_tfblender: f64,
    /// Zero-predictor error, `mean(clean²)`.
    pub mse_zero: f64,
    /// Mean blender weight on object and outlier pixels, when the scenes have outliers.
    pub regions: Option<RegionWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionWeights {
    pub object: f64,
    pub outlier: f64,
}

/// Pixels within `2σ` of a moving blob (`object`) and within `2σ` of the
/// static outlier but not of any blob (`outlier`), at frame `t`.
pub fn region_masks(layout: &SceneLayout, sigma: f64, shape: Shape, t: usize) -> (Vec<bool>, Vec<bool>) {
    let r2 = (2.0 * sigma).powi(2);
    let near = |c: (f64, f64), y: usize, x: usize| (y as f64 - c.0).powi(2) + (x as f64 - c.1).powi(2) <= r2;
    let mut object = vec![false; shape.plane()];
    let mut outlier = vec![false; shape.plane()];
    for y in 0..shape.height {
        for x in 0..shape.width {
            let p = y * shape.width + x;
            object[p] = (0..layout.blobs.len()).any(|b| near(layout.center(b, t), y, x));
            outlier[p] = !object[p] && layout.outlier.as_ref().is_some_and(|(c, _)| near(*c, y, x));
        }
    }
    (object, outlier)
}

fn masked_mean<T: Real>(w: &crate::tensor::Tensor3<T>, mask: &[bool]) -> Option<(f64, usize)> {
    let plane = w.shape().plane();
    let mut sum = 0.0;
    let mut n = 0;
    for c in 0..w.channels() {
        for (p, &m) in mask.iter().enumerate().take(plane) {
            if m {
                sum += w.channel(c)[p].to_f64();
                n += 1;
            }
        }
    }
    (n > 0).then_some((sum, n))
}

fn evaluate_in<T: Real>(
    params: &MiniNetParams<f64>,
    config: &BlenderConfig,
    set: &Dataset,
) -> Result<EvalSummary> {
    params.check_compatible(config.variant, set.scene.grid[0])?;
    let params_t: MiniNetParams<T> = params.cast();
    let samples = set.samples();
    if samples.is_empty() {
        return Err(Error::config("eval", "evaluation set has no full-neighborhood frames"));
    }
    let (mut pass, mut uni, mut cos, mut tf, mut zero) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut obj, mut obj_n, mut out, mut out_n) = (0.0, 0usize, 0.0, 0usize);
    let track = set.sequences.iter().any(|s| s.layout.outlier.is_some());
    for &(s, t) in &samples {
        let seq = &set.sequences[s];
        let nbhd: Neighborhood<T> = set.neighborhood(s, t, config.include_self)?.cast();
        let clean = seq.clean[t].feature.cast::<T>();
        let f_i = &nbhd.current().feature;
        pass += reconstruction_error(f_i, &clean)?;
        zero += reconstruction_error(&clean.map(|_| T::zero()), &clean)?;
        uni += reconstruction_error(
            &blender::aggregate(f_i, &baseline_aggregate(&nbhd, BaselineScheme::Uniform)?, config.aggregate_mode)?,
            &clean,
        )?;
        cos += reconstruction_error(
            &blender::aggregate(
                f_i,
                &baseline_aggregate(&nbhd, BaselineScheme::CosineSoftmax)?,
                config.aggregate_mode,
            )?,
            &clean,
        )?;
        let traced = blender::blend_traced(&nbhd, &params_t, config, track)?;
        tf += reconstruction_error(&blender::aggregate(f_i, &traced.delta, config.aggregate_mode)?, &clean)?;

        if track && seq.layout.outlier.is_some() {
            let (a, b) = region_masks(&seq.layout, set.scene.blob_sigma, nbhd.shape(), t);
            for m in &traced.members {
                let w = m.weight.as_ref().expect("weights kept");
                if let Some((sum, n)) = masked_mean(w, &a) {
                    obj += sum;
                    obj_n += n;
                }
                if let Some((sum, n)) = masked_mean(w, &b) {
                    out += sum;
                    out_n += n;
                }
            }
        }
    }
    let n = samples.len() as f64;
    let regions = (obj_n > 0 && out_n > 0).then(|| RegionWeights {
        object: obj / obj_n as f64,
        outlier: out / out_n as f64,
    });
    Ok(EvalSummary {
        frames: samples.len(),
        mse_passthrough: pass / n,
        mse_uniform: uni / n,
        mse_cosine: cos / n,
        mse_tfblender: tf / n,
        mse_zero: zero / n,
        regions,
    })
}

/// Scores passthrough, both baselines and the blender on `set`, in the
/// config's precision.
pub fn evaluate(params: &MiniNetParams<f64>, config: &BlenderConfig, set: &Dataset) -> Result<EvalSummary> {
    match config.precision {
        Precision::Double => evaluate_in::<f64>(params, config, set),
        Precision::Single => evaluate_in::<f32>(params, config, set),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blender::RelationVariant;

    fn set(scene: SceneSpec) -> Dataset {
        Dataset::generate(&scene, 3, 2, 6, 2).unwrap()
    }

    fn params(c: usize) -> MiniNetParams<f64> {
        MiniNetParams::init(BlenderConfig::default().mini_net(), RelationVariant::Concat4, c, 1).unwrap()
    }

    #[test]
    fn clean_scenes_pass_through_exactly() {
        let scene = SceneSpec {
            grid: [2, 8, 8],
            ..Default::default()
        };
        let s = evaluate(&params(2), &BlenderConfig::default(), &set(scene)).unwrap();
        assert_eq!(s.mse_passthrough, 0.0);
        assert_eq!(s.frames, 2 * 4);
        assert!(s.regions.is_none());
    }

    #[test]
    fn gate_everything_is_the_zero_predictor() {
        let scene = SceneSpec {
            grid: [2, 8, 8],
            noise_sigma: 0.1,
            outlier_probability: 1.0,
            ..Default::default()
        };
        let config = BlenderConfig {
            delta: -1.0,
            ..Default::default()
        };
        let s = evaluate(&params(2), &config, &set(scene)).unwrap();
        assert_eq!(s.mse_tfblender, s.mse_zero);
        let r = s.regions.unwrap();
        assert_eq!((r.object, r.outlier), (0.0, 0.0));
    }

    #[test]
    fn empty_set_rejected() {
        let scene = SceneSpec {
            grid: [2, 8, 8],
            ..Default::default()
        };
        let empty = Dataset {
            sequences: vec![],
            ..set(scene)
        };
        assert!(evaluate(&params(2), &BlenderConfig::default(), &empty).is_err());
    }

    #[test]
    fn single_precision_close_to_double() {
        let scene = SceneSpec {
            grid: [2, 8, 8],
            noise_sigma: 0.1,
            ..Default::default()
        };
        let d = evaluate(&params(2), &BlenderConfig::default(), &set(scene.clone())).unwrap();
        let config = BlenderConfig {
            precision: Precision::Single,
            ..Default::default()
        };
        let s = evaluate(&params(2), &config, &set(scene)).unwrap();
        assert!((d.mse_tfblender - s.mse_tfblender).abs() < 1e-5);
    }

    #[test]
    fn masks_are_disjoint() {
        let scene = SceneSpec {
            outlier_probability: 1.0,
            ..Default::default()
        };
        let layout = crate::synth::layout(&scene).unwrap();
        let (a, b) = region_masks(&layout, scene.blob_sigma, scene.shape(), 0);
        assert!(a.iter().any(|&x| x));
        assert!(a.iter().zip(&b).all(|(&x, &y)| !(x && y)));
    }
}
