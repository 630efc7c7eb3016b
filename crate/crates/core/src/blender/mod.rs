//! Temporal relation, feature adjustment and feature blending.
//!
//! For a current frame feature `f_i` and its neighborhood the blender computes
//!
//! ```text
//! W(a, b)   = M(g(a, b))                          per-pixel adaptive weights
//! F(i, j)   = Σ_{m ≠ j} W(f_j, f_m) ⊗ f_j         adjusted neighbor feature
//! Ŵ         = relu(W(f_i, f_j))
//! F̂         = softmax over channels of F(i, j)
//! Ŵ         = 0 if cos(F̂, f_i) > δ
//! Δf_i      = Σ_j Ŵ ⊗ F̂
//! ```
//!
//! where `g` is a [`RelationVariant`] and `M` a small convolution stack
//! ([`MiniNetParams`]). The same parameters serve the current-vs-neighbor and
//! neighbor-vs-neighbor weights.

mod baseline;
mod config;
mod params;
pub mod pipeline;

pub use baseline::{baseline_aggregate, BaselineScheme};
pub use config::{AggregateMode, BlenderConfig, MiniNetSpec, RelationVariant};
pub use params::MiniNetParams;
pub use pipeline::{BlendOutput, MemberTrace};

use crate::error::{Error, Result};
use crate::graph::Eval;
use crate::tensor::{Real, Shape, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeature<T> {
    pub t: i64,
    pub feature: Tensor3<T>,
}

impl<T: Real> FrameFeature<T> {
    pub fn new(t: i64, feature: Tensor3<T>) -> Self {
        FrameFeature { t, feature }
    }
}

/// A current frame plus the neighbors aggregated into it.
///
/// With `include_self` the current frame also takes part as a member of its
/// own neighborhood, always at member index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood<T> {
    current: FrameFeature<T>,
    neighbors: Vec<FrameFeature<T>>,
    include_self: bool,
}

impl<T: Real> Neighborhood<T> {
    pub fn new(
        current: FrameFeature<T>,
        neighbors: Vec<FrameFeature<T>>,
        include_self: bool,
    ) -> Result<Self> {
        if neighbors.is_empty() {
            return Err(Error::Neighborhood("no neighbors".into()));
        }
        let shape = current.feature.shape();
        let mut seen = vec![current.t];
        for n in &neighbors {
            if n.feature.shape() != shape {
                return Err(Error::ShapeMismatch {
                    left: shape,
                    right: n.feature.shape(),
                });
            }
            if seen.contains(&n.t) {
                return Err(Error::Neighborhood(format!("duplicate time index {}", n.t)));
            }
            seen.push(n.t);
        }
        Ok(Neighborhood {
            current,
            neighbors,
            include_self,
        })
    }

    pub fn current(&self) -> &FrameFeature<T> {
        &self.current
    }

    pub fn neighbors(&self) -> &[FrameFeature<T>] {
        &self.neighbors
    }

    pub fn include_self(&self) -> bool {
        self.include_self
    }

    pub fn shape(&self) -> Shape {
        self.current.feature.shape()
    }

    /// Frames taking part in the aggregation, the current frame first when included.
    pub fn members(&self) -> Vec<&FrameFeature<T>> {
        let mut out = Vec::with_capacity(self.neighbors.len() + 1);
        if self.include_self {
            out.push(&self.current);
        }
        out.extend(self.neighbors.iter());
        out
    }

    pub fn member_count(&self) -> usize {
        self.neighbors.len() + usize::from(self.include_self)
    }

    pub fn with_include_self(mut self, include_self: bool) -> Self {
        self.include_self = include_self;
        self
    }

    /// Same neighborhood with neighbor `index` removed (index into [`Self::neighbors`]).
    pub fn without_neighbor(&self, index: usize) -> Result<Self> {
        if index >= self.neighbors.len() {
            return Err(Error::NeighborIndex {
                index,
                len: self.neighbors.len(),
            });
        }
        let mut neighbors = self.neighbors.clone();
        neighbors.remove(index);
        Neighborhood::new(self.current.clone(), neighbors, self.include_self)
    }

    pub fn with_neighbors_permuted(&self, order: &[usize]) -> Result<Self> {
        let neighbors = order
            .iter()
            .map(|&i| {
                self.neighbors.get(i).cloned().ok_or(Error::NeighborIndex {
                    index: i,
                    len: self.neighbors.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if neighbors.len() != self.neighbors.len() {
            return Err(Error::Neighborhood("permutation has the wrong length".into()));
        }
        Neighborhood::new(self.current.clone(), neighbors, self.include_self)
    }

    pub fn cast<U: Real>(&self) -> Neighborhood<U> {
        Neighborhood {
            current: FrameFeature::new(self.current.t, self.current.feature.cast()),
            neighbors: self
                .neighbors
                .iter()
                .map(|n| FrameFeature::new(n.t, n.feature.cast()))
                .collect(),
            include_self: self.include_self,
        }
    }
}

pub fn relation_features<T: Real>(
    f_i: &Tensor3<T>,
    f_j: &Tensor3<T>,
    variant: RelationVariant,
) -> Result<Tensor3<T>> {
    let mut g = Eval::new();
    pipeline::relation_features(&mut g, f_i, f_j, variant)
}

pub fn mini_network_forward<T: Real>(
    g_out: &Tensor3<T>,
    params: &MiniNetParams<T>,
) -> Result<Tensor3<T>> {
    let mut g = Eval::new();
    pipeline::mini_network_forward(&mut g, g_out, params.layers())
}

/// `W(f_a, f_b) = M(g(f_a, f_b))`, one weight per pixel per channel.
pub fn adaptive_weights<T: Real>(
    f_a: &Tensor3<T>,
    f_b: &Tensor3<T>,
    params: &MiniNetParams<T>,
    variant: RelationVariant,
) -> Result<Tensor3<T>> {
    let mut g = Eval::new();
    pipeline::adaptive_weights(&mut g, f_a, f_b, params.layers(), variant)
}

/// Adjusted feature of member `j` (index into [`Neighborhood::members`]).
pub fn feature_adjustment<T: Real>(
    nbhd: &Neighborhood<T>,
    j: usize,
    params: &MiniNetParams<T>,
    variant: RelationVariant,
) -> Result<Tensor3<T>> {
    let members: Vec<Tensor3<T>> = nbhd.members().iter().map(|m| m.feature.clone()).collect();
    let config = BlenderConfig {
        variant,
        ..BlenderConfig::default()
    };
    let mut g = Eval::new();
    pipeline::feature_adjustment(&mut g, &members, j, params.layers(), &config)
}

/// `Δf_i` for a neighborhood.
pub fn blend<T: Real>(
    nbhd: &Neighborhood<T>,
    params: &MiniNetParams<T>,
    config: &BlenderConfig,
) -> Result<Tensor3<T>> {
    Ok(blend_traced(nbhd, params, config, false)?.delta)
}

/// Like [`blend`], also returning per-member gate decisions and, when
/// `keep_tensors` is set, each member's `Ŵ` and `F̂`.
pub fn blend_traced<T: Real>(
    nbhd: &Neighborhood<T>,
    params: &MiniNetParams<T>,
    config: &BlenderConfig,
    keep_tensors: bool,
) -> Result<BlendOutput<Tensor3<T>, T>> {
    blend_outer_subset(nbhd, params, config, keep_tensors, &vec![true; nbhd.member_count()])
}

/// Blend where only members flagged in `outer` enter the final `Σ_j` sum.
/// Feature adjustment still sees every member. The neighborhood's own
/// `include_self` flag decides membership, not the config's.
pub fn blend_outer_subset<T: Real>(
    nbhd: &Neighborhood<T>,
    params: &MiniNetParams<T>,
    config: &BlenderConfig,
    keep_tensors: bool,
    outer: &[bool],
) -> Result<BlendOutput<Tensor3<T>, T>> {
    let neighbors: Vec<Tensor3<T>> = nbhd.neighbors.iter().map(|m| m.feature.clone()).collect();
    let mut g = Eval::new();
    pipeline::blend(
        &mut g,
        &nbhd.current.feature,
        &neighbors,
        nbhd.include_self,
        params.layers(),
        config,
        keep_tensors,
        outer,
    )
}

/// Combines `f_i` with `Δf_i`.
pub fn aggregate<T: Real>(
    f_i: &Tensor3<T>,
    delta_f: &Tensor3<T>,
    mode: AggregateMode,
) -> Result<Tensor3<T>> {
    let mut g = Eval::new();
    pipeline::aggregate(&mut g, f_i, delta_f, mode)
}

/// Blend followed by [`aggregate`] with the config's mode.
pub fn enhance<T: Real>(
    nbhd: &Neighborhood<T>,
    params: &MiniNetParams<T>,
    config: &BlenderConfig,
) -> Result<Tensor3<T>> {
    let delta = blend(nbhd, params, config)?;
    aggregate(&nbhd.current.feature, &delta, config.aggregate_mode)
}

#[cfg(test)]
mod tests;
