//! Straight-line transcription of the blend equations on flat `f64` arrays.
//!
//! Deliberately shares no code with [`crate::tensor`] or [`crate::blender`]:
//! its own index arithmetic, convolution loops, softmax and cosine. Used as
//! the reference the modular pipeline is checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blender::{self, BlenderConfig, FrameFeature, MiniNetParams, Neighborhood, RelationVariant};
use crate::error::Result;
use crate::tensor::{Shape, Tensor3};

/// One convolution layer as raw numbers.
#[derive(Debug, Clone)]
pub struct NaiveLayer {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `[cout][cin][k][k]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl NaiveLayer {
    pub fn from_params(params: &MiniNetParams<f64>) -> Vec<NaiveLayer> {
        params
            .layers()
            .iter()
            .map(|l| NaiveLayer {
                cin: l.in_channels(),
                cout: l.out_channels(),
                k: l.kernel(),
                w: l.weights().to_vec(),
                b: l.bias().to_vec(),
            })
            .collect()
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
}

fn at(c: usize, y: usize, x: usize, h: usize, w: usize) -> usize {
    c * h * w + y * w + x
}

fn relation(a: &[f64], b: &[f64], variant: RelationVariant) -> Vec<f64> {
    let n = a.len();
    let mut out = Vec::new();
    let mut push = |f: &dyn Fn(usize) -> f64| {
        for e in 0..n {
            out.push(f(e));
        }
    };
    match variant {
        RelationVariant::Concat2 => {
            push(&|e| a[e]);
            push(&|e| b[e]);
        }
        RelationVariant::Diff => push(&|e| a[e] - b[e]),
        RelationVariant::Sum => push(&|e| a[e] + b[e]),
        RelationVariant::Concat2PlusSum => {
            push(&|e| a[e]);
            push(&|e| b[e]);
            push(&|e| a[e] + b[e]);
        }
        RelationVariant::DiffPlusSum => {
            push(&|e| a[e] - b[e]);
            push(&|e| a[e] + b[e]);
        }
        RelationVariant::Concat3 => {
            push(&|e| a[e]);
            push(&|e| b[e]);
            push(&|e| a[e] - b[e]);
        }
        RelationVariant::Concat4 => {
            push(&|e| a[e]);
            push(&|e| b[e]);
            push(&|e| a[e] - b[e]);
            push(&|e| b[e] - a[e]);
        }
    }
    out
}

fn conv(input: &[f64], layer: &NaiveLayer, d: &Dims) -> Vec<f64> {
    let r = (layer.k / 2) as isize;
    let mut out = vec![0.0; layer.cout * d.h * d.w];
    for o in 0..layer.cout {
        for y in 0..d.h {
            for x in 0..d.w {
                let mut acc = layer.b[o];
                for c in 0..layer.cin {
                    for ky in 0..layer.k {
                        for kx in 0..layer.k {
                            let sy = y as isize + ky as isize - r;
                            let sx = x as isize + kx as isize - r;
                            if sy < 0 || sx < 0 || sy >= d.h as isize || sx >= d.w as isize {
                                continue;
                            }
                            let wi = ((o * layer.cin + c) * layer.k + ky) * layer.k + kx;
                            acc += layer.w[wi] * input[at(c, sy as usize, sx as usize, d.h, d.w)];
                        }
                    }
                }
                out[at(o, y, x, d.h, d.w)] = acc;
            }
        }
    }
    out
}

fn mask_net(input: &[f64], layers: &[NaiveLayer], d: &Dims) -> Vec<f64> {
    let mut x = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        x = conv(&x, layer, d);
        if i + 1 < layers.len() {
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    x
}

fn weight(a: &[f64], b: &[f64], layers: &[NaiveLayer], cfg: &BlenderConfig, d: &Dims) -> Vec<f64> {
    let w = mask_net(&relation(a, b, cfg.variant), layers, d);
    if cfg.enable_tr {
        w
    } else {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        vec![mean; w.len()]
    }
}

/// `Δf_i` by direct transcription. `members` already includes `f_i` when the
/// current frame takes part in its own neighborhood.
pub fn naive_blend(
    current: &[f64],
    members: &[Vec<f64>],
    shape: Shape,
    layers: &[NaiveLayer],
    cfg: &BlenderConfig,
) -> Vec<f64> {
    let d = Dims {
        c: shape.channels,
        h: shape.height,
        w: shape.width,
    };
    let n = d.c * d.h * d.w;
    let mut delta = vec![0.0; n];
    for j in 0..members.len() {
        let f_j = &members[j];

        // adjusted neighbor
        let mut adjusted = f_j.clone();
        if cfg.enable_fa && members.len() > 1 {
            adjusted = vec![0.0; n];
            for m in 0..members.len() {
                if m == j {
                    continue;
                }
                let w_jm = weight(f_j, &members[m], layers, cfg, &d);
                for e in 0..n {
                    adjusted[e] += w_jm[e] * f_j[e];
                }
            }
        }

        let w_ij = weight(current, f_j, layers, cfg, &d);
        if !cfg.enable_fb {
            for e in 0..n {
                delta[e] += w_ij[e] * adjusted[e];
            }
            continue;
        }

        // softmax over channels at each location
        let mut f_hat = vec![0.0; n];
        for y in 0..d.h {
            for x in 0..d.w {
                let mut max = f64::NEG_INFINITY;
                for c in 0..d.c {
                    max = max.max(adjusted[at(c, y, x, d.h, d.w)]);
                }
                let mut total = 0.0;
                for c in 0..d.c {
                    let e = (adjusted[at(c, y, x, d.h, d.w)] - max).exp();
                    f_hat[at(c, y, x, d.h, d.w)] = e;
                    total += e;
                }
                for c in 0..d.c {
                    f_hat[at(c, y, x, d.h, d.w)] /= total;
                }
            }
        }

        let (mut dot, mut nf, mut ni) = (0.0, 0.0, 0.0);
        for e in 0..n {
            dot += f_hat[e] * current[e];
            nf += f_hat[e] * f_hat[e];
            ni += current[e] * current[e];
        }
        if ni > 0.0 && dot / (nf.sqrt() * ni.sqrt()) > cfg.delta {
            continue;
        }
        for e in 0..n {
            delta[e] += w_ij[e].max(0.0) * f_hat[e];
        }
    }
    delta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub variant: RelationVariant,
    pub seed: u64,
    pub max_abs_deviation: f64,
    pub gated: usize,
}

/// Random tiny neighborhood (`C=2, H=W=2`, 3 neighbors) for oracle runs.
pub fn tiny_case(config: &BlenderConfig, seed: u64) -> Result<(Neighborhood<f64>, MiniNetParams<f64>)> {
    let shape = Shape::new(2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feature = || Tensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0));
    let current = FrameFeature::new(0, feature());
    let neighbors = vec![
        FrameFeature::new(-1, feature()),
        FrameFeature::new(1, feature()),
        FrameFeature::new(2, feature()),
    ];
    let nbhd = Neighborhood::new(current, neighbors, config.include_self)?;
    // weights well away from the fan-in bound so the ReLUs see both signs
    let params = MiniNetParams::init(config.mini_net(), config.variant, shape.channels, seed ^ 0x5eed)?;
    let mut layers = params.layers().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for l in layers.iter_mut() {
        for b in l.bias_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    Ok((nbhd, MiniNetParams::new(layers)?))
}

/// Max `|Δ|` between the modular blend and [`naive_blend`].
pub fn oracle_deviation(
    nbhd: &Neighborhood<f64>,
    params: &MiniNetParams<f64>,
    config: &BlenderConfig,
) -> Result<(f64, usize)> {
    let out = blender::blend_traced(nbhd, params, config, false)?;
    let members: Vec<Vec<f64>> = nbhd.members().iter().map(|m| m.feature.data().to_vec()).collect();
    let naive = naive_blend(
        nbhd.current().feature.data(),
        &members,
        nbhd.shape(),
        &NaiveLayer::from_params(params),
        config,
    );
    let dev = out
        .delta
        .data()
        .iter()
        .zip(&naive)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((dev, out.gated_count()))
}

pub fn oracle_check(config: &BlenderConfig, seed: u64) -> Result<OracleReport> {
    let (nbhd, params) = tiny_case(config, seed)?;
    let (max_abs_deviation, gated) = oracle_deviation(&nbhd, &params, config)?;
    Ok(OracleReport {
        variant: config.variant,
        seed,
        max_abs_deviation,
        gated,
    })
}
