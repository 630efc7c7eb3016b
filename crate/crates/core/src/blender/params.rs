use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MiniNetSpec, RelationVariant};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{ConvLayer, Real};

/// Convolution stack `M` producing adaptive weights, with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniNetParams<T> {
    layers: Vec<ConvLayer<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weight: String,
    bias: String,
}

impl<T: Real> MiniNetParams<T> {
    pub fn new(layers: Vec<ConvLayer<T>>) -> Result<Self> {
        if !(1..=4).contains(&layers.len()) {
            return Err(Error::config("layers", format!("{} is not in 1..=4", layers.len())));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::ChannelMismatch {
                    expected: pair[1].in_channels(),
                    actual: pair[0].out_channels(),
                });
            }
        }
        Ok(MiniNetParams { layers })
    }

    /// All-zero weights and biases.
    pub fn zeros(spec: MiniNetSpec, variant: RelationVariant, channels: usize) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths(variant, channels)
            .into_iter()
            .map(|(i, o)| ConvLayer::zeros(i, o, spec.kernel))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// Fan-in scaled uniform weights in `±√(1 / (in·k²))`, zero biases.
    pub fn init(
        spec: MiniNetSpec,
        variant: RelationVariant,
        channels: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = spec.kernel * spec.kernel;
        let layers = spec
            .widths(variant, channels)
            .into_iter()
            .map(|(i, o)| {
                let bound = (1.0 / (i * k2) as f64).sqrt();
                let weights = (0..o * i * k2)
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect();
                ConvLayer::new(i, o, spec.kernel, weights, vec![T::zero(); o])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::parameter_count).sum()
    }

    /// Checks the stack fits `variant` on `channels`-channel features.
    pub fn check_compatible(&self, variant: RelationVariant, channels: usize) -> Result<()> {
        let expected = variant.channel_multiplier() * channels;
        if self.in_channels() != expected {
            return Err(Error::ChannelMismatch {
                expected,
                actual: self.in_channels(),
            });
        }
        if self.out_channels() != channels {
            return Err(Error::ChannelMismatch {
                expected: channels,
                actual: self.out_channels(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> MiniNetParams<U> {
        MiniNetParams {
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
        }
    }

    /// Flat view of every scalar, weights then bias per layer.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights().iter().chain(l.bias()).copied())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let (a, b) = (self.flatten(), other.flatten());
        if a.len() != b.len() {
            return Err(Error::Invalid("parameter sets differ in size".into()));
        }
        Ok(a.iter().zip(&b).map(|(&x, &y)| (x - y).abs()).fold(T::zero(), T::max))
    }

    /// Writes one TFB1 file per weight and bias plus `manifest.json`.
    ///
    /// Weights are stored as `[out, in, k·k]` tensors.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let weight = format!("layer{i}_weight.tfb");
            let bias = format!("layer{i}_bias.tfb");
            io::write_tensor(dir.join(&weight), &layer.weight_tensor())?;
            io::write_tensor(dir.join(&bias), &layer.bias_tensor())?;
            entries.push(LayerEntry {
                in_channels: layer.in_channels(),
                out_channels: layer.out_channels(),
                kernel: layer.kernel(),
                weight,
                bias,
            });
        }
        let manifest = Manifest {
            format: io::FORMAT_VERSION.into(),
            layers: entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != io::FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported bundle format {}", manifest.format)));
        }
        let layers = manifest
            .layers
            .iter()
            .map(|e| {
                let w = io::read_tensor::<T>(dir.join(&e.weight))?;
                let b = io::read_tensor::<T>(dir.join(&e.bias))?;
                let layer = ConvLayer::from_tensors(&w, &b)?;
                if layer.in_channels() != e.in_channels
                    || layer.out_channels() != e.out_channels
                    || layer.kernel() != e.kernel
                {
                    return Err(Error::Format(format!("{} disagrees with the manifest", e.weight)));
                }
                Ok(layer)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }
}
