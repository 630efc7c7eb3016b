//! Synthetic feature-space video: moving Gaussian blobs with controllable
//! degradation and static outliers.
//!
//! Each blob is a spatial Gaussian scaled by a per-blob channel signature.
//! `clean` holds the moving blobs only; `observed` adds the degradations the
//! blender is meant to undo. Randomness is counter-based (one ChaCha stream
//! for the layout, one per frame for noise), so any frame can be regenerated
//! on its own.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blender::FrameFeature;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{ensure_same_shape, Real, Shape, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedClass {
    Slow,
    #[default]
    Medium,
    Fast,
}

impl SpeedClass {
    /// Displacement in pixels per frame.
    pub fn displacement(self) -> f64 {
        match self {
            SpeedClass::Slow => 0.5,
            SpeedClass::Medium => 1.0,
            SpeedClass::Fast => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// `[C, H, W]`
    pub grid: [usize; 3],
    pub blob_count: usize,
    pub blob_amplitude: f64,
    pub blob_sigma: f64,
    pub speed_class: SpeedClass,
    pub outlier_probability: f64,
    pub outlier_amplitude: f64,
    pub noise_sigma: f64,
    pub degrade_frames: Vec<usize>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            grid: [8, 16, 16],
            blob_count: 1,
            blob_amplitude: 1.0,
            blob_sigma: 1.5,
            speed_class: SpeedClass::Medium,
            outlier_probability: 0.0,
            outlier_amplitude: 1.0,
            noise_sigma: 0.0,
            degrade_frames: Vec::new(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn shape(&self) -> Shape {
        Shape::new(self.grid[0], self.grid[1], self.grid[2])
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.grid;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("grid", "every dimension must be positive"));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::config("blob_sigma", "must be positive"));
        }
        if (h as f64) < 4.0 * self.blob_sigma || (w as f64) < 4.0 * self.blob_sigma {
            return Err(Error::config(
                "grid",
                format!("{h}x{w} cannot hold a blob of sigma {}", self.blob_sigma),
            ));
        }
        if !(0.0..=1.0).contains(&self.outlier_probability) {
            return Err(Error::config("outlier_probability", "must be in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub start: (f64, f64),
    /// Pixels per frame, `(dy, dx)`.
    pub velocity: (f64, f64),
    pub signature: Vec<f64>,
}

/// Where everything is; lets callers build region masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub blobs: Vec<Blob>,
    /// Static outlier `(row, col)` and its channel signature.
    pub outlier: Option<((f64, f64), Vec<f64>)>,
    /// Reflection bounds per axis `[(lo_y, hi_y), (lo_x, hi_x)]`.
    pub bounds: [(f64, f64); 2],
}

impl SceneLayout {
    /// Centre of blob `b` at frame `t`.
    pub fn center(&self, b: usize, t: usize) -> (f64, f64) {
        let blob = &self.blobs[b];
        (
            reflect(blob.start.0 + blob.velocity.0 * t as f64, self.bounds[0]),
            reflect(blob.start.1 + blob.velocity.1 * t as f64, self.bounds[1]),
        )
    }
}

/// Bounces `x` between `lo` and `hi`.
fn reflect(x: f64, (lo, hi): (f64, f64)) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let y = (x - lo).rem_euclid(2.0 * span);
    lo + if y > span { 2.0 * span - y } else { y }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair<T> {
    pub clean: Vec<FrameFeature<T>>,
    pub observed: Vec<FrameFeature<T>>,
    pub layout: SceneLayout,
}

impl<T: Real> SequencePair<T> {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn cast<U: Real>(&self) -> SequencePair<U> {
        let cast = |frames: &[FrameFeature<T>]| {
            frames
                .iter()
                .map(|f| FrameFeature::new(f.t, f.feature.cast()))
                .collect()
        };
        SequencePair {
            clean: cast(&self.clean),
            observed: cast(&self.observed),
            layout: self.layout.clone(),
        }
    }
}

const LAYOUT_STREAM: u64 = 0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn signature(rng: &mut impl Rng, channels: usize) -> Vec<f64> {
    (0..channels).map(|_| rng.random_range(0.2..1.0)).collect()
}

fn axis_bounds(len: usize, sigma: f64) -> (f64, f64) {
    let mid = (len as f64 - 1.0) / 2.0;
    let lo = (2.0 * sigma).min(mid);
    let hi = (len as f64 - 1.0 - 2.0 * sigma).max(mid);
    (lo, hi)
}

pub fn layout(spec: &SceneSpec) -> Result<SceneLayout> {
    spec.validate()?;
    let [c, h, w] = spec.grid;
    let bounds = [axis_bounds(h, spec.blob_sigma), axis_bounds(w, spec.blob_sigma)];
    let mut rng = stream(spec.seed, LAYOUT_STREAM);
    let speed = spec.speed_class.displacement();
    let blobs = (0..spec.blob_count)
        .map(|_| {
            let start = (
                rng.random_range(bounds[0].0..=bounds[0].1),
                rng.random_range(bounds[1].0..=bounds[1].1),
            );
            let angle = rng.random_range(0.0..2.0 * PI);
            Blob {
                start,
                velocity: (speed * angle.sin(), speed * angle.cos()),
                signature: signature(&mut rng, c),
            }
        })
        .collect();
    let outlier = if rng.random_bool(spec.outlier_probability) {
        let pos = (
            rng.random_range(bounds[0].0..=bounds[0].1),
            rng.random_range(bounds[1].0..=bounds[1].1),
        );
        Some((pos, signature(&mut rng, c)))
    } else {
        None
    };
    Ok(SceneLayout {
        blobs,
        outlier,
        bounds,
    })
}

/// Adds `amplitude · signature[c] · G(center, sigma)` to `data`, with the
/// spatial profile rescaled so its total equals the continuous integral
/// `amplitude · 2πσ²` regardless of where the blob sits.
fn splat(
    data: &mut [f64],
    shape: Shape,
    center: (f64, f64),
    sigma: f64,
    amplitude: f64,
    signature: &[f64],
) {
    let plane = shape.plane();
    let mut profile = vec![0.0; plane];
    for y in 0..shape.height {
        for x in 0..shape.width {
            let d2 = (y as f64 - center.0).powi(2) + (x as f64 - center.1).powi(2);
            profile[y * shape.width + x] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = profile.iter().sum();
    let scale = amplitude * 2.0 * PI * sigma * sigma / total;
    for (c, &s) in signature.iter().enumerate() {
        for (d, &p) in data[c * plane..(c + 1) * plane].iter_mut().zip(&profile) {
            *d += s * scale * p;
        }
    }
}

/// Separable Gaussian blur per channel, renormalized at the borders.
fn blur(data: &[f64], shape: Shape, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let (h, w) = (shape.height as isize, shape.width as isize);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for c in 0..shape.channels {
            let base = c * shape.plane();
            for y in 0..h {
                for x in 0..w {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (i, &k) in kernel.iter().enumerate() {
                        let d = i as isize - radius;
                        let (sy, sx) = if horizontal { (y, x + d) } else { (y + d, x) };
                        if sy < 0 || sx < 0 || sy >= h || sx >= w {
                            continue;
                        }
                        acc += k * src[base + (sy * w + sx) as usize];
                        norm += k;
                    }
                    out[base + (y * w + x) as usize] = acc / norm;
                }
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

/// Generates `frames` clean and observed frames for `spec`.
pub fn generate_sequence(spec: &SceneSpec, frames: usize) -> Result<SequencePair<f64>> {
    if frames < 3 {
        return Err(Error::config("frames", format!("{frames} is fewer than 3")));
    }
    let layout = layout(spec)?;
    let shape = spec.shape();
    let mut clean = Vec::with_capacity(frames);
    let mut observed = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut data = vec![0.0; shape.len()];
        for (b, blob) in layout.blobs.iter().enumerate() {
            splat(
                &mut data,
                shape,
                layout.center(b, t),
                spec.blob_sigma,
                spec.blob_amplitude,
                &blob.signature,
            );
        }
        let clean_t = Tensor3::from_vec(shape, data.clone())?;

        if spec.degrade_frames.contains(&t) {
            let sigma = 0.5 * spec.speed_class.displacement();
            data = blur(&data, shape, sigma).into_iter().map(|v| 0.5 * v).collect();
        }
        if let Some((pos, sig)) = &layout.outlier {
            splat(&mut data, shape, *pos, spec.blob_sigma, spec.outlier_amplitude, sig);
        }
        if spec.noise_sigma > 0.0 {
            let mut rng = stream(spec.seed, t as u64 + 1);
            for v in data.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise_sigma * z;
            }
        }
        clean.push(FrameFeature::new(t as i64, clean_t));
        observed.push(FrameFeature::new(t as i64, Tensor3::from_vec(shape, data)?));
    }
    Ok(SequencePair {
        clean,
        observed,
        layout,
    })
}

pub fn reconstruction_error<T: Real>(predicted: &Tensor3<T>, clean: &Tensor3<T>) -> Result<f64> {
    ensure_same_shape(predicted.shape(), clean.shape())?;
    let total: f64 = predicted
        .data()
        .iter()
        .zip(clean.data())
        .map(|(&p, &c)| (p.to_f64() - c.to_f64()).powi(2))
        .sum();
    Ok(total / predicted.data().len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceManifest {
    format: String,
    spec: SceneSpec,
    frames: usize,
    shape: [usize; 3],
    layout: SceneLayout,
    clean: Vec<String>,
    observed: Vec<String>,
}

/// Writes `manifest.json` plus `clean_NNNN.tfb` / `observed_NNNN.tfb` per frame.
pub fn save_sequence<T: Real>(
    dir: impl AsRef<Path>,
    spec: &SceneSpec,
    seq: &SequencePair<T>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = SequenceManifest {
        format: io::FORMAT_VERSION.into(),
        spec: spec.clone(),
        frames: seq.len(),
        shape: spec.grid,
        layout: seq.layout.clone(),
        clean: Vec::new(),
        observed: Vec::new(),
    };
    for (t, (c, o)) in seq.clean.iter().zip(&seq.observed).enumerate() {
        let (cn, on) = (format!("clean_{t:04}.tfb"), format!("observed_{t:04}.tfb"));
        io::write_tensor(dir.join(&cn), &c.feature)?;
        io::write_tensor(dir.join(&on), &o.feature)?;
        manifest.clean.push(cn);
        manifest.observed.push(on);
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_sequence<T: Real>(dir: impl AsRef<Path>) -> Result<(SceneSpec, SequencePair<T>)> {
    let dir = dir.as_ref();
    let manifest: SequenceManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let read = |names: &[String]| -> Result<Vec<FrameFeature<T>>> {
        names
            .iter()
            .enumerate()
            .map(|(t, n)| Ok(FrameFeature::new(t as i64, io::read_tensor(dir.join(n))?)))
            .collect()
    };
    let seq = SequencePair {
        clean: read(&manifest.clean)?,
        observed: read(&manifest.observed)?,
        layout: manifest.layout,
    };
    Ok((manifest.spec, seq))
}
