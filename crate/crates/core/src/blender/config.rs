use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Precision;

/// Feature relation function `g(f_i, f_j)`, stacking its parts along channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationVariant {
    /// `(f_i, f_j)`
    Concat2,
    /// `f_i − f_j`
    Diff,
    /// `f_i + f_j`
    Sum,
    /// `(f_i, f_j, f_i + f_j)`
    Concat2PlusSum,
    /// `(f_i − f_j, f_i + f_j)`
    DiffPlusSum,
    /// `(f_i, f_j, f_i − f_j)`
    Concat3,
    /// `(f_i, f_j, f_i − f_j, f_j − f_i)`
    #[default]
    Concat4,
}

impl RelationVariant {
    pub const ALL: [RelationVariant; 7] = [
        RelationVariant::Concat2,
        RelationVariant::Diff,
        RelationVariant::Sum,
        RelationVariant::Concat2PlusSum,
        RelationVariant::DiffPlusSum,
        RelationVariant::Concat3,
        RelationVariant::Concat4,
    ];

    /// Output channels per input channel.
    pub fn channel_multiplier(self) -> usize {
        match self {
            RelationVariant::Concat2 => 2,
            RelationVariant::Diff => 1,
            RelationVariant::Sum => 1,
            RelationVariant::Concat2PlusSum => 3,
            RelationVariant::DiffPlusSum => 2,
            RelationVariant::Concat3 => 3,
            RelationVariant::Concat4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationVariant::Concat2 => "concat2",
            RelationVariant::Diff => "diff",
            RelationVariant::Sum => "sum",
            RelationVariant::Concat2PlusSum => "concat2_plus_sum",
            RelationVariant::DiffPlusSum => "diff_plus_sum",
            RelationVariant::Concat3 => "concat3",
            RelationVariant::Concat4 => "concat4",
        }
    }
}

impl fmt::Display for RelationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown relation variant `{s}`")))
    }
}

/// How `Δf_i` becomes the enhanced feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Output `Δf_i`.
    #[default]
    Replace,
    /// Output `f_i + Δf_i`.
    Residual,
}

impl FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace" => Ok(AggregateMode::Replace),
            "residual" => Ok(AggregateMode::Residual),
            _ => Err(Error::config("aggregate_mode", format!("unknown mode `{s}`"))),
        }
    }
}

/// Depth and kernel of the weight network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MiniNetSpec {
    pub layers: usize,
    pub kernel: usize,
}

impl Default for MiniNetSpec {
    fn default() -> Self {
        MiniNetSpec { layers: 3, kernel: 3 }
    }
}

impl MiniNetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.layers) {
            return Err(Error::config("layers", format!("{} is not in 1..=4", self.layers)));
        }
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::config("kernel", format!("{} is not 1 or 3", self.kernel)));
        }
        Ok(())
    }

    /// `(in, out)` channels per layer: widths halve from the relation output
    /// down to `channels`, and the last layer always emits `channels`.
    pub fn widths(&self, variant: RelationVariant, channels: usize) -> Vec<(usize, usize)> {
        let mut width = variant.channel_multiplier() * channels;
        let mut out = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let next = if l + 1 == self.layers {
                channels
            } else {
                width.div_ceil(2).max(channels)
            };
            out.push((width, next));
            width = next;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlenderConfig {
    /// Gate threshold: a neighbor whose normalized adjusted feature has cosine
    /// similarity above this with `f_i` is dropped.
    pub delta: f64,
    pub variant: RelationVariant,
    pub layers: usize,
    pub kernel: usize,
    /// Per-pixel weights; off collapses each weight map to its mean.
    pub enable_tr: bool,
    /// Neighbor-vs-neighbor adjustment; off uses `f_j` as is.
    pub enable_fa: bool,
    /// ReLU, channel softmax and gating; off sums `W ⊗ F` directly.
    pub enable_fb: bool,
    pub include_self: bool,
    pub aggregate_mode: AggregateMode,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for BlenderConfig {
    fn default() -> Self {
        BlenderConfig {
            delta: 0.7,
            variant: RelationVariant::Concat4,
            layers: 3,
            kernel: 3,
            enable_tr: true,
            enable_fa: true,
            enable_fb: true,
            include_self: true,
            aggregate_mode: AggregateMode::Replace,
            precision: Precision::Double,
            seed: 0,
        }
    }
}

impl BlenderConfig {
    pub fn mini_net(&self) -> MiniNetSpec {
        MiniNetSpec {
            layers: self.layers,
            kernel: self.kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(Error::config("delta", format!("{} is not in [-1, 1]", self.delta)));
        }
        self.mini_net().validate()
    }

    /// Short label for the module toggles, e.g. `TR+FA+FB` or `none`.
    pub fn modules_label(&self) -> String {
        let parts: Vec<&str> = [
            (self.enable_tr, "TR"),
            (self.enable_fa, "FA"),
            (self.enable_fb, "FB"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn with_modules(mut self, tr: bool, fa: bool, fb: bool) -> Self {
        self.enable_tr = tr;
        self.enable_fa = fa;
        self.enable_fb = fb;
        self
    }
}
