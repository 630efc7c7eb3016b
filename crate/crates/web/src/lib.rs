//! Browser bindings: inspect a blend, step training, plot the cost ratio.
//!
//! Every binding returns JSON text; the page parses it and draws on canvases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use tfblend::autodiff::sgd_step;
use tfblend::blender::{self, BaselineScheme, BlenderConfig, MiniNetParams, RelationVariant};
use tfblend::harness::cost::{cost_ratio, CostModel};
use tfblend::harness::train::loss_and_gradient;
use tfblend::harness::Dataset;
use tfblend::synth::{reconstruction_error, SceneSpec, SpeedClass};
use tfblend::{Result, Tensor3};

const NEIGHBORS: usize = 4;
const FRAMES: usize = 8;

/// Channel-mean image of a feature map, row-major.
fn image(t: &Tensor3<f64>) -> Vec<f64> {
    let s = t.shape();
    (0..s.height * s.width)
        .map(|p| (0..s.channels).map(|c| t.channel(c)[p]).sum::<f64>() / s.channels as f64)
        .collect()
}

#[derive(Serialize)]
struct Member {
    offset: i64,
    cosine: Option<f64>,
    gated: bool,
    weight: Vec<f64>,
}

#[derive(Serialize)]
struct View {
    height: usize,
    width: usize,
    frame: usize,
    observed: Vec<f64>,
    clean: Vec<f64>,
    blended: Vec<f64>,
    uniform: Vec<f64>,
    members: Vec<Member>,
    mse_observed: f64,
    mse_uniform: f64,
    mse_blended: f64,
}

#[derive(Serialize)]
struct Step {
    step: usize,
    loss: f64,
}

/// A fast-motion scene with a static outlier and a trainable weight network.
pub struct Session {
    config: BlenderConfig,
    scene: SceneSpec,
    train: Dataset,
    view: Dataset,
    params: MiniNetParams<f64>,
    rng: ChaCha8Rng,
    learning_rate: f64,
    steps: usize,
}

impl Session {
    pub fn new(seed: u64) -> Result<Self> {
        let scene = SceneSpec {
            speed_class: SpeedClass::Fast,
            outlier_probability: 1.0,
            noise_sigma: 0.1,
            seed,
            ..SceneSpec::default()
        };
        let config = BlenderConfig {
            seed,
            ..BlenderConfig::default()
        };
        let train = Dataset::generate(&scene, seed * 100, 4, FRAMES, NEIGHBORS)?;
        let view = Dataset::generate(&scene, seed * 100 + 50, 1, FRAMES, NEIGHBORS)?;
        let params = MiniNetParams::init(config.mini_net(), config.variant, scene.grid[0], seed)?;
        Ok(Session {
            config,
            scene,
            train,
            view,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            learning_rate: 1.0,
            steps: 0,
        })
    }

    pub fn set_delta(&mut self, delta: f64) -> Result<()> {
        let config = BlenderConfig { delta, ..self.config.clone() };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Switching the relation variant reinitializes the network.
    pub fn set_variant(&mut self, name: &str) -> Result<()> {
        let variant: RelationVariant = name.parse()?;
        if variant != self.config.variant {
            self.config.variant = variant;
            self.params = MiniNetParams::init(self.config.mini_net(), variant, self.scene.grid[0], self.config.seed)?;
            self.steps = 0;
        }
        Ok(())
    }

    pub fn set_modules(&mut self, tr: bool, fa: bool, fb: bool) {
        self.config = self.config.clone().with_modules(tr, fa, fb);
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Runs `n` SGD steps on random training frames, returning the losses.
    pub fn train(&mut self, n: usize) -> Result<String> {
        let samples = self.train.samples();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let (s, t) = samples[self.rng.random_range(0..samples.len())];
            let nbhd = self.train.neighborhood(s, t, self.config.include_self)?;
            let target = &self.train.sequences[s].clean[t].feature;
            let (loss, grad) = loss_and_gradient(&nbhd, target, &self.params, &self.config)?;
            self.params = sgd_step(&self.params, &grad, self.learning_rate)?;
            self.steps += 1;
            out.push(Step { step: self.steps, loss });
        }
        Ok(serde_json::to_string(&out)?)
    }

    /// Frames with a full neighborhood in the view sequence.
    pub fn frames(&self) -> Vec<usize> {
        self.view.samples().into_iter().map(|(_, t)| t).collect()
    }

    pub fn view(&self, frame: usize) -> Result<String> {
        let nbhd = self.view.neighborhood(0, frame, self.config.include_self)?;
        let traced = blender::blend_traced(&nbhd, &self.params, &self.config, true)?;
        let blended = blender::aggregate(&nbhd.current().feature, &traced.delta, self.config.aggregate_mode)?;
        let uniform = blender::baseline_aggregate(&nbhd, BaselineScheme::Uniform)?;
        let seq = &self.view.sequences[0];
        let clean = &seq.clean[frame].feature;
        let observed = &seq.observed[frame].feature;
        let members = nbhd
            .members()
            .iter()
            .zip(&traced.members)
            .map(|(m, tr)| Member {
                offset: m.t - frame as i64,
                cosine: tr.cosine,
                gated: tr.gated,
                weight: tr.weight.as_ref().map(image).unwrap_or_default(),
            })
            .collect();
        let s = clean.shape();
        let view = View {
            height: s.height,
            width: s.width,
            frame,
            observed: image(observed),
            clean: image(clean),
            blended: image(&blended),
            uniform: image(&uniform),
            members,
            mse_observed: reconstruction_error(observed, clean)?,
            mse_uniform: reconstruction_error(&uniform, clean)?,
            mse_blended: reconstruction_error(&blended, clean)?,
        };
        Ok(serde_json::to_string(&view)?)
    }
}

fn js(e: tfblend::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Session::new(seed as u64).map(Demo).map_err(js)
    }

    pub fn set_delta(&mut self, delta: f64) -> std::result::Result<(), JsError> {
        self.0.set_delta(delta).map_err(js)
    }

    pub fn set_variant(&mut self, name: &str) -> std::result::Result<(), JsError> {
        self.0.set_variant(name).map_err(js)
    }

    pub fn set_modules(&mut self, tr: bool, fa: bool, fb: bool) {
        self.0.set_modules(tr, fa, fb);
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.0.set_learning_rate(lr);
    }

    pub fn train(&mut self, steps: u32) -> std::result::Result<String, JsError> {
        self.0.train(steps as usize).map_err(js)
    }

    pub fn frames(&self) -> Vec<u32> {
        self.0.frames().into_iter().map(|t| t as u32).collect()
    }

    pub fn view(&self, frame: u32) -> std::result::Result<String, JsError> {
        self.0.view(frame as usize).map_err(js)
    }
}

/// `r(i)` for `i = 0..=max_neighbors`.
pub fn ratio_curve(extraction: f64, task: f64, blend: f64, max_neighbors: usize) -> Result<Vec<f64>> {
    (0..=max_neighbors)
        .map(|i| {
            cost_ratio(&CostModel {
                cost_extraction: extraction,
                cost_task: task,
                cost_tf: blend,
                neighbor_count: i,
            })
        })
        .collect()
}

#[wasm_bindgen]
pub fn cost_ratio_curve(
    extraction: f64,
    task: f64,
    blend: f64,
    max_neighbors: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    ratio_curve(extraction, task, blend, max_neighbors as usize).map_err(js)
}
