//! The blender written against [`Graph`], shared by plain evaluation and the tape.

use std::collections::HashMap;

use super::config::{AggregateMode, BlenderConfig, RelationVariant};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{self, ensure_same_shape, Tensor3};

/// Per-member diagnostics from one blend.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberTrace<T> {
    /// `cos(F̂, f_i)`; `None` when the blender stage is disabled.
    pub cosine: Option<T>,
    pub gated: bool,
    /// `Ŵ` after gating (`W` with the blender stage off). Only with `keep_tensors`.
    pub weight: Option<Tensor3<T>>,
    /// `F̂` (`F` with the blender stage off). Only with `keep_tensors`.
    pub feature: Option<Tensor3<T>>,
}

#[derive(Debug, Clone)]
pub struct BlendOutput<V, T> {
    pub delta: V,
    pub members: Vec<MemberTrace<T>>,
}

impl<V, T> BlendOutput<V, T> {
    pub fn gated_count(&self) -> usize {
        self.members.iter().filter(|m| m.gated).count()
    }
}

pub fn relation_features<G: Graph>(
    g: &mut G,
    f_i: &G::Var,
    f_j: &G::Var,
    variant: RelationVariant,
) -> Result<G::Var> {
    ensure_same_shape(g.value(f_i).shape(), g.value(f_j).shape())?;
    use RelationVariant::*;
    Ok(match variant {
        Concat2 => g.concat(&[f_i.clone(), f_j.clone()])?,
        Diff => g.sub(f_i, f_j)?,
        Sum => g.add(f_i, f_j)?,
        Concat2PlusSum => {
            let s = g.add(f_i, f_j)?;
            g.concat(&[f_i.clone(), f_j.clone(), s])?
        }
        DiffPlusSum => {
            let d = g.sub(f_i, f_j)?;
            let s = g.add(f_i, f_j)?;
            g.concat(&[d, s])?
        }
        Concat3 => {
            let d = g.sub(f_i, f_j)?;
            g.concat(&[f_i.clone(), f_j.clone(), d])?
        }
        Concat4 => {
            let d = g.sub(f_i, f_j)?;
            let r = g.sub(f_j, f_i)?;
            g.concat(&[f_i.clone(), f_j.clone(), d, r])?
        }
    })
}

/// conv → ReLU → … → conv, with no activation after the last layer.
pub fn mini_network_forward<G: Graph>(
    g: &mut G,
    input: &G::Var,
    layers: &[G::Layer],
) -> Result<G::Var> {
    let (last, hidden) = layers
        .split_last()
        .ok_or_else(|| Error::Invalid("mini-network has no layers".into()))?;
    let mut x = input.clone();
    for layer in hidden {
        let y = g.conv(&x, layer)?;
        x = g.relu(&y);
    }
    g.conv(&x, last)
}

pub fn adaptive_weights<G: Graph>(
    g: &mut G,
    f_a: &G::Var,
    f_b: &G::Var,
    layers: &[G::Layer],
    variant: RelationVariant,
) -> Result<G::Var> {
    let rel = relation_features(g, f_a, f_b, variant)?;
    let w = mini_network_forward(g, &rel, layers)?;
    let (feature, weight) = (g.value(f_a).shape(), g.value(&w).shape());
    if weight != feature {
        return Err(Error::ShapeMismatch {
            left: feature,
            right: weight,
        });
    }
    Ok(w)
}

/// Adaptive weights honoring the temporal-relation toggle: when it is off
/// the weight map collapses to its mean, one scalar per frame pair.
fn pair_weights<G: Graph>(
    g: &mut G,
    f_a: &G::Var,
    f_b: &G::Var,
    layers: &[G::Layer],
    config: &BlenderConfig,
) -> Result<G::Var> {
    let w = adaptive_weights(g, f_a, f_b, layers, config.variant)?;
    Ok(if config.enable_tr {
        w
    } else {
        g.mean_broadcast(&w)
    })
}

/// Memoizes `W(member a, member b)` within one blend.
struct WeightCache<V> {
    map: HashMap<(usize, usize), V>,
}

impl<V: Clone> WeightCache<V> {
    fn get<G: Graph<Var = V>>(
        &mut self,
        g: &mut G,
        members: &[V],
        key: (usize, usize),
        layers: &[G::Layer],
        config: &BlenderConfig,
    ) -> Result<V> {
        if let Some(w) = self.map.get(&key) {
            return Ok(w.clone());
        }
        let w = pair_weights(g, &members[key.0], &members[key.1], layers, config)?;
        self.map.insert(key, w.clone());
        Ok(w)
    }
}

/// `F(f_i, f_j) = Σ_{m ≠ j} W(f_j, f_m) ⊗ f_j` over the members; `f_j` itself
/// when it has no other members or adjustment is disabled.
pub fn feature_adjustment<G: Graph>(
    g: &mut G,
    members: &[G::Var],
    j: usize,
    layers: &[G::Layer],
    config: &BlenderConfig,
) -> Result<G::Var> {
    let mut cache = WeightCache { map: HashMap::new() };
    adjust(g, members, j, layers, config, &mut cache)
}

fn adjust<G: Graph>(
    g: &mut G,
    members: &[G::Var],
    j: usize,
    layers: &[G::Layer],
    config: &BlenderConfig,
    cache: &mut WeightCache<G::Var>,
) -> Result<G::Var> {
    if j >= members.len() {
        return Err(Error::NeighborIndex {
            index: j,
            len: members.len(),
        });
    }
    if !config.enable_fa {
        return Ok(members[j].clone());
    }
    let mut acc: Option<G::Var> = None;
    for m in (0..members.len()).filter(|&m| m != j) {
        let w = cache.get(g, members, (j, m), layers, config)?;
        let term = g.mul(&w, &members[j])?;
        acc = Some(match acc {
            Some(a) => g.add(&a, &term)?,
            None => term,
        });
    }
    Ok(acc.unwrap_or_else(|| members[j].clone()))
}

/// `Δf_i` for `current` and its `neighbors`. With `include_self` the current
/// frame joins as member 0. Only members with `outer[j]` set enter the final
/// sum; feature adjustment always sees every member.
#[allow(clippy::too_many_arguments)]
pub fn blend<G: Graph>(
    g: &mut G,
    current: &G::Var,
    neighbors: &[G::Var],
    include_self: bool,
    layers: &[G::Layer],
    config: &BlenderConfig,
    keep_tensors: bool,
    outer: &[bool],
) -> Result<BlendOutput<G::Var, G::Elem>> {
    if neighbors.is_empty() {
        return Err(Error::Neighborhood("no neighbors".into()));
    }
    let mut members = Vec::with_capacity(neighbors.len() + 1);
    if include_self {
        members.push(current.clone());
    }
    members.extend(neighbors.iter().cloned());
    if outer.len() != members.len() {
        return Err(Error::Invalid(format!(
            "outer mask has {} entries for {} members",
            outer.len(),
            members.len()
        )));
    }
    let shape = g.value(current).shape();
    for m in &members {
        ensure_same_shape(shape, g.value(m).shape())?;
    }
    let delta_t = <G::Elem as tensor::Real>::from_f64(config.delta);

    // Weights are cached by member index; an excluded current frame gets the
    // slot after the last member.
    let mut all = members.clone();
    let current_idx = if include_self {
        0
    } else {
        all.push(current.clone());
        all.len() - 1
    };
    let members = &all[..members.len()];
    let mut cache = WeightCache { map: HashMap::new() };

    let mut delta: Option<G::Var> = None;
    let mut traces = Vec::with_capacity(members.len());
    for j in 0..members.len() {
        let adjusted = adjust(g, members, j, layers, config, &mut cache)?;
        let (contribution, trace) = if config.enable_fb {
            let f_hat = g.channel_softmax(&adjusted);
            let cosine = match tensor::cosine_similarity(g.value(&f_hat), g.value(current)) {
                Ok(c) => Some(c),
                Err(Error::UndefinedSimilarity) => None,
                Err(e) => return Err(e),
            };
            let gated = cosine.is_some_and(|c| c > delta_t);
            if gated {
                let trace = MemberTrace {
                    cosine,
                    gated,
                    weight: keep_tensors.then(|| Tensor3::zeros(shape)),
                    feature: keep_tensors.then(|| g.value(&f_hat).clone()),
                };
                (None, trace)
            } else {
                let w = cache.get(g, &all, (current_idx, j), layers, config)?;
                let w_hat = g.relu(&w);
                let c = g.mul(&w_hat, &f_hat)?;
                let trace = MemberTrace {
                    cosine,
                    gated,
                    weight: keep_tensors.then(|| g.value(&w_hat).clone()),
                    feature: keep_tensors.then(|| g.value(&f_hat).clone()),
                };
                (Some(c), trace)
            }
        } else {
            let w = cache.get(g, &all, (current_idx, j), layers, config)?;
            let c = g.mul(&w, &adjusted)?;
            let trace = MemberTrace {
                cosine: None,
                gated: false,
                weight: keep_tensors.then(|| g.value(&w).clone()),
                feature: keep_tensors.then(|| g.value(&adjusted).clone()),
            };
            (Some(c), trace)
        };
        traces.push(trace);
        if let (Some(c), true) = (contribution, outer[j]) {
            delta = Some(match delta {
                Some(d) => g.add(&d, &c)?,
                None => c,
            });
        }
    }
    let delta = match delta {
        Some(d) => d,
        None => g.constant(Tensor3::zeros(shape)),
    };
    Ok(BlendOutput {
        delta,
        members: traces,
    })
}

pub fn aggregate<G: Graph>(
    g: &mut G,
    f_i: &G::Var,
    delta_f: &G::Var,
    mode: AggregateMode,
) -> Result<G::Var> {
    ensure_same_shape(g.value(f_i).shape(), g.value(delta_f).shape())?;
    match mode {
        AggregateMode::Replace => Ok(delta_f.clone()),
        AggregateMode::Residual => g.add(f_i, delta_f),
    }
}
