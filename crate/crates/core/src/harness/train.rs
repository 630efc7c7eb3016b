//! SGD training of the mini-network on synthetic sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, Dataset};
use super::windows;
use crate::autodiff::{collect_gradients, layer_leaves, sgd_step, Tape, Var};
use crate::blender::{pipeline, BlenderConfig, MiniNetParams, Neighborhood};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::synth::SceneSpec;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: usize,
    pub learning_rate: f64,
    /// Samples per step, each a random full-neighborhood frame of a random
    /// pool sequence.
    pub batch: usize,
    /// Evaluate every this many steps; 0 evaluates only after the last step.
    pub eval_every: usize,
    /// Pool sequences use scene seeds `train_seed..train_seed + train_sequences`.
    pub train_seed: u64,
    pub train_sequences: usize,
    /// Held-out sequences use `eval_seed..eval_seed + eval_sequences`.
    pub eval_seed: u64,
    pub eval_sequences: usize,
    pub sequence_length: usize,
    pub neighbors: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            steps: 500,
            learning_rate: 1.0,
            batch: 1,
            eval_every: 0,
            train_seed: 0,
            train_sequences: 16,
            eval_seed: 1000,
            eval_sequences: 4,
            sequence_length: 8,
            neighbors: 4,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.train_sequences == 0 {
            return Err(Error::config("train_sequences", "must be at least 1"));
        }
        if self.eval_sequences == 0 {
            return Err(Error::config("eval_sequences", "must be at least 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::config("neighbors", "must be at least 1"));
        }
        if windows::full_frames(self.sequence_length, self.neighbors).is_empty() || self.sequence_length < 3 {
            return Err(Error::config(
                "sequence_length",
                format!(
                    "{} frames hold no full neighborhood of {}",
                    self.sequence_length, self.neighbors
                ),
            ));
        }
        let train = self.train_seed..self.train_seed.saturating_add(self.train_sequences as u64);
        let eval = self.eval_seed..self.eval_seed.saturating_add(self.eval_sequences as u64);
        if train.start < eval.end && eval.start < train.end {
            return Err(Error::config("eval_seed", "train and eval seed ranges overlap"));
        }
        Ok(())
    }

    pub fn train_set(&self, scene: &SceneSpec) -> Result<Dataset> {
        Dataset::generate(scene, self.train_seed, self.train_sequences, self.sequence_length, self.neighbors)
    }

    pub fn eval_set(&self, scene: &SceneSpec) -> Result<Dataset> {
        Dataset::generate(scene, self.eval_seed, self.eval_sequences, self.sequence_length, self.neighbors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub train_mse: f64,
    pub eval_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MiniNetParams<f64>,
    pub losses: Vec<LossPoint>,
}

/// Reconstruction loss of `aggregate(f_i, blend(nbhd))` against `target` and
/// its gradient with respect to `params`.
pub fn loss_and_gradient(
    nbhd: &Neighborhood<f64>,
    target: &Tensor3<f64>,
    params: &MiniNetParams<f64>,
    config: &BlenderConfig,
) -> Result<(f64, MiniNetParams<f64>)> {
    let mut tape = Tape::new();
    let layers = layer_leaves(&mut tape, params);
    let loss = record_loss(&mut tape, &layers, nbhd, target, config)?;
    let value = tape.value(&loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, collect_gradients(&grads, &layers)?))
}

/// Records the training loss on `tape` with `layers` already on it.
pub fn record_loss(
    tape: &mut Tape,
    layers: &[crate::autodiff::TapeLayer],
    nbhd: &Neighborhood<f64>,
    target: &Tensor3<f64>,
    config: &BlenderConfig,
) -> Result<Var> {
    let current = tape.constant(nbhd.current().feature.clone());
    let neighbors: Vec<Var> = nbhd
        .neighbors()
        .iter()
        .map(|n| tape.constant(n.feature.clone()))
        .collect();
    let outer = vec![true; nbhd.member_count()];
    let out = pipeline::blend(
        tape,
        &current,
        &neighbors,
        nbhd.include_self(),
        layers,
        config,
        false,
        &outer,
    )?;
    let pred = pipeline::aggregate(tape, &current, &out.delta, config.aggregate_mode)?;
    tape.mse(pred, target)
}

fn accumulate(acc: &mut MiniNetParams<f64>, g: &MiniNetParams<f64>, scale: f64) {
    for (a, g) in acc.layers_mut().iter_mut().zip(g.layers()) {
        for (x, &y) in a.weights_mut().iter_mut().zip(g.weights()) {
            *x += scale * y;
        }
        for (x, &y) in a.bias_mut().iter_mut().zip(g.bias()) {
            *x += scale * y;
        }
    }
}

/// Trains from the config's seeded initialization.
pub fn train(spec: &TrainSpec, scene: &SceneSpec, config: &BlenderConfig) -> Result<TrainOutcome> {
    let init = MiniNetParams::init(config.mini_net(), config.variant, scene.grid[0], config.seed)?;
    train_from(init, spec, scene, config, |_| {})
}

/// Trains starting from `params`, calling `progress` after every logged step.
pub fn train_from(
    mut params: MiniNetParams<f64>,
    spec: &TrainSpec,
    scene: &SceneSpec,
    config: &BlenderConfig,
    mut progress: impl FnMut(&LossPoint),
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    params.check_compatible(config.variant, scene.grid[0])?;
    let pool = spec.train_set(scene)?;
    let eval_set = spec.eval_set(scene)?;
    let samples = pool.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train_seed);
    rng.set_stream(0x0074_7261_696e);

    let mut losses = Vec::with_capacity(spec.steps);
    for step in 1..=spec.steps {
        let mut grad = MiniNetParams::zeros(config.mini_net(), config.variant, scene.grid[0])?;
        let mut total = 0.0;
        for _ in 0..spec.batch {
            let (s, t) = samples[rng.random_range(0..samples.len())];
            let nbhd = pool.neighborhood(s, t, config.include_self)?;
            let (loss, g) = loss_and_gradient(&nbhd, &pool.sequences[s].clean[t].feature, &params, config)?;
            total += loss;
            accumulate(&mut grad, &g, 1.0 / spec.batch as f64);
        }
        let train_mse = total / spec.batch as f64;
        if !train_mse.is_finite() {
            return Err(Error::Diverged { step, loss: train_mse });
        }
        params = sgd_step(&params, &grad, spec.learning_rate)?;
        if params.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss: train_mse });
        }
        let due = if spec.eval_every == 0 {
            step == spec.steps
        } else {
            step % spec.eval_every == 0 || step == spec.steps
        };
        let eval_mse = if due {
            Some(evaluate(&params, config, &eval_set)?.mse_tfblender)
        } else {
            None
        };
        let point = LossPoint {
            step,
            train_mse,
            eval_mse,
        };
        progress(&point);
        losses.push(point);
    }
    Ok(TrainOutcome { params, losses })
}
