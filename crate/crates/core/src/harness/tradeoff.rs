//! Wall-clock cost of blending versus plain per-frame inference.
//!
//! Each frame runs a stand-in extractor, optional aggregation over `i`
//! cached neighbor features and a task head. "With" aggregates using the
//! blender; "without" uses the uniform baseline. Both paths skip aggregation
//! at `i = 0`.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cost::{cost_ratio, polyfit, CostModel, Fit};
use super::evaluate::{evaluate, Dataset};
use super::windows;
use crate::blender::{self, baseline_aggregate, BaselineScheme, BlenderConfig, FrameFeature, MiniNetParams};
use crate::error::{Error, Result};
use crate::synth::{generate_sequence, reconstruction_error, SceneSpec};
use crate::tensor::{conv2d_same, relu, ConvLayer, Precision, Real, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffSpec {
    pub neighbor_counts: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    /// Each timed batch repeats the workload until it takes at least this long.
    pub min_batch_ms: f64,
    pub extractor_width: usize,
    pub extractor_layers: usize,
    pub eval_seed: u64,
    pub eval_sequences: usize,
}

impl Default for TradeoffSpec {
    fn default() -> Self {
        TradeoffSpec {
            neighbor_counts: vec![0, 2, 4, 6, 8],
            repetitions: 5,
            warmup: 2,
            min_batch_ms: 20.0,
            extractor_width: 32,
            extractor_layers: 4,
            eval_seed: 1000,
            eval_sequences: 2,
        }
    }
}

impl TradeoffSpec {
    pub fn validate(&self) -> Result<()> {
        if self.neighbor_counts.is_empty() {
            return Err(Error::config("neighbor_counts", "must not be empty"));
        }
        if self.neighbor_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("neighbor_counts", "must be strictly ascending"));
        }
        if self.repetitions < 5 {
            return Err(Error::config("repetitions", "at least 5 timed repetitions are required"));
        }
        if !(self.min_batch_ms > 0.0) {
            return Err(Error::config("min_batch_ms", "must be positive"));
        }
        if self.extractor_layers < 2 || self.extractor_width == 0 {
            return Err(Error::config("extractor_layers", "the extractor needs at least 2 layers"));
        }
        if self.eval_sequences == 0 {
            return Err(Error::config("eval_sequences", "must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub neighbor_count: usize,
    pub wall_time_ms: f64,
    pub mse_passthrough: f64,
    pub mse_uniform: f64,
    pub mse_cosine: f64,
    pub mse_tfblender: f64,
    pub predicted_r: f64,
    pub measured_r: f64,
}

/// Median component timings behind one record, in seconds per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub neighbor_count: usize,
    pub extraction: f64,
    pub task: f64,
    pub blend: f64,
    pub with: f64,
    pub without: f64,
    /// Calls per timed batch.
    pub batch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub records: Vec<RunRecord>,
    pub components: Vec<Components>,
    /// `measured_r` against `i`; absent with fewer than 2 (3) counts.
    pub linear: Option<Fit>,
    pub quadratic: Option<Fit>,
    /// The fit with the higher adjusted R².
    pub preferred_fit: Option<String>,
}

/// Stand-in backbone and task head, fixed random weights.
struct Network<T> {
    extractor: Vec<ConvLayer<T>>,
    head: ConvLayer<T>,
}

fn random_layer<T: Real>(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<ConvLayer<T>> {
    let bound = (1.0 / (cin * k * k) as f64).sqrt();
    let w = (0..cin * cout * k * k).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    ConvLayer::new(cin, cout, k, w, vec![T::zero(); cout])
}

impl<T: Real> Network<T> {
    fn new(channels: usize, spec: &TradeoffSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![channels];
        widths.extend(std::iter::repeat_n(spec.extractor_width, spec.extractor_layers - 1));
        widths.push(channels);
        let extractor = widths
            .windows(2)
            .map(|w| random_layer(w[0], w[1], 3, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = random_layer(channels, channels, 1, &mut rng)?;
        Ok(Network { extractor, head })
    }

    fn extract(&self, input: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut x = input.clone();
        for (k, layer) in self.extractor.iter().enumerate() {
            x = conv2d_same(&x, layer)?;
            if k + 1 < self.extractor.len() {
                x = relu(&x);
            }
        }
        Ok(x)
    }

    fn task(&self, feature: &Tensor3<T>) -> Result<Tensor3<T>> {
        conv2d_same(feature, &self.head)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Seconds per call of `f`, run `n` times back to back.
fn time_batch(n: usize, f: &mut dyn FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..n {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / n as f64)
}

/// Smallest power-of-two repeat count whose batch takes `min_seconds`.
fn calibrate(min_seconds: f64, f: &mut dyn FnMut() -> Result<()>) -> Result<usize> {
    let mut n = 1;
    loop {
        let per_call = time_batch(n, f)?;
        if per_call * n as f64 >= min_seconds || n >= 1 << 24 {
            return Ok(n);
        }
        n *= 2;
    }
}

fn adjusted_r2(fit: &Fit, points: usize) -> f64 {
    let p = fit.coefficients.len() - 1;
    if points <= p + 1 {
        return fit.r_squared;
    }
    1.0 - (1.0 - fit.r_squared) * (points - 1) as f64 / (points - p - 1) as f64
}

fn accuracy(
    count: usize,
    params: &MiniNetParams<f64>,
    config: &BlenderConfig,
    scene: &SceneSpec,
    spec: &TradeoffSpec,
) -> Result<[f64; 4]> {
    let length = windows::min_length(count).max(5);
    if count == 0 {
        // no neighbors: every method is the observed feature itself
        let mut pass = 0.0;
        let mut frames = 0;
        for k in 0..spec.eval_sequences as u64 {
            let seq = generate_sequence(&scene.with_seed(spec.eval_seed + k), length)?;
            for (o, c) in seq.observed.iter().zip(&seq.clean) {
                pass += reconstruction_error(&o.feature, &c.feature)?;
                frames += 1;
            }
        }
        let pass = pass / frames as f64;
        return Ok([pass; 4]);
    }
    let set = Dataset::generate(scene, spec.eval_seed, spec.eval_sequences, length, count)?;
    let s = evaluate(params, config, &set)?;
    Ok([s.mse_passthrough, s.mse_uniform, s.mse_cosine, s.mse_tfblender])
}

fn time_count<T: Real>(
    count: usize,
    net: &Network<T>,
    params: &MiniNetParams<T>,
    config: &BlenderConfig,
    scene: &SceneSpec,
    spec: &TradeoffSpec,
) -> Result<(Components, f64)> {
    let length = windows::min_length(count);
    let seq = generate_sequence(scene, length)?.cast::<T>();
    let t = windows::full_frames(length, count)[0];
    let input = seq.observed[t].feature.clone();
    // neighbor features come from earlier frames' extraction
    let cached: Vec<FrameFeature<T>> = seq
        .observed
        .iter()
        .map(|f| Ok(FrameFeature::new(f.t, net.extract(&f.feature)?)))
        .collect::<Result<_>>()?;
    let nbhd = windows::neighborhood(&cached, t, count, config.include_self)?;

    let mut extract = || -> Result<()> {
        black_box(net.extract(black_box(&input))?);
        Ok(())
    };
    let feature = net.extract(&input)?;
    let mut task = || -> Result<()> {
        black_box(net.task(black_box(&feature))?);
        Ok(())
    };
    let mut blend = || -> Result<()> {
        if let Some(n) = &nbhd {
            black_box(blender::blend(black_box(n), params, config)?);
        }
        Ok(())
    };
    let mut with = || -> Result<()> {
        let f = net.extract(black_box(&input))?;
        let agg = match &nbhd {
            Some(n) => blender::aggregate(&f, &blender::blend(n, params, config)?, config.aggregate_mode)?,
            None => f,
        };
        black_box(net.task(&agg)?);
        Ok(())
    };
    let mut without = || -> Result<()> {
        let f = net.extract(black_box(&input))?;
        let agg = match &nbhd {
            Some(n) => blender::aggregate(
                &f,
                &baseline_aggregate(n, BaselineScheme::Uniform)?,
                config.aggregate_mode,
            )?,
            None => f,
        };
        black_box(net.task(&agg)?);
        Ok(())
    };

    let n = calibrate(spec.min_batch_ms * 1e-3, &mut without)?;
    for _ in 0..spec.warmup {
        time_batch(n, &mut with)?;
        time_batch(n, &mut without)?;
    }
    let (mut tw, mut to, mut te, mut tt, mut tb) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..spec.repetitions {
        tw.push(time_batch(n, &mut with)?);
        to.push(time_batch(n, &mut without)?);
        te.push(time_batch(n, &mut extract)?);
        tt.push(time_batch(n, &mut task)?);
        tb.push(time_batch(n, &mut blend)?);
    }
    // ratio of interleaved pairs, so slow drift cancels
    let ratio = median(tw.iter().zip(&to).map(|(a, b)| a / b).collect());
    let c = Components {
        neighbor_count: count,
        extraction: median(te),
        task: median(tt),
        blend: median(tb),
        with: median(tw),
        without: median(to),
        batch: n,
    };
    Ok((c, ratio))
}

/// Times every neighbor count and scores accuracy on held-out scenes.
///
/// `config_digest` identifies the run in every record.
pub fn tradeoff_sweep(
    spec: &TradeoffSpec,
    config: &BlenderConfig,
    scene: &SceneSpec,
    params: &MiniNetParams<f64>,
    config_digest: &str,
) -> Result<TradeoffReport> {
    spec.validate()?;
    config.validate()?;
    scene.validate()?;
    params.check_compatible(config.variant, scene.grid[0])?;
    match config.precision {
        Precision::Double => sweep_in::<f64>(spec, config, scene, params, config_digest),
        Precision::Single => sweep_in::<f32>(spec, config, scene, params, config_digest),
    }
}

fn sweep_in<T: Real>(
    spec: &TradeoffSpec,
    config: &BlenderConfig,
    scene: &SceneSpec,
    params: &MiniNetParams<f64>,
    digest: &str,
) -> Result<TradeoffReport> {
    let net = Network::<T>::new(scene.grid[0], spec, config.seed)?;
    let params_t: MiniNetParams<T> = params.cast();
    let mut records = Vec::new();
    let mut components = Vec::new();
    for &count in &spec.neighbor_counts {
        let (c, measured_r) = time_count(count, &net, &params_t, config, scene, spec)?;
        let predicted_r = if count == 0 {
            1.0
        } else {
            cost_ratio(&CostModel {
                cost_extraction: c.extraction,
                cost_task: c.task,
                cost_tf: c.blend / count as f64,
                neighbor_count: count,
            })?
        };
        let [pass, uni, cos, tf] = accuracy(count, params, config, scene, spec)?;
        records.push(RunRecord {
            config_digest: digest.to_string(),
            neighbor_count: count,
            wall_time_ms: c.with * 1e3,
            mse_passthrough: pass,
            mse_uniform: uni,
            mse_cosine: cos,
            mse_tfblender: tf,
            predicted_r,
            measured_r,
        });
        components.push(c);
    }
    let xs: Vec<f64> = records.iter().map(|r| r.neighbor_count as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.measured_r).collect();
    let linear = (xs.len() >= 2).then(|| polyfit(&xs, &ys, 1)).transpose()?;
    let quadratic = (xs.len() >= 3).then(|| polyfit(&xs, &ys, 2)).transpose()?;
    let preferred_fit = match (&linear, &quadratic) {
        (Some(l), Some(q)) => Some(
            if adjusted_r2(q, xs.len()) > adjusted_r2(l, xs.len()) {
                "quadratic"
            } else {
                "linear"
            }
            .to_string(),
        ),
        (Some(_), None) => Some("linear".to_string()),
        _ => None,
    };
    Ok(TradeoffReport {
        records,
        components,
        linear,
        quadratic,
        preferred_fit,
    })
}
