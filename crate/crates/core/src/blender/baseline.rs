use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Neighborhood;
use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, Real, Tensor3};

/// Global-weight aggregation: one scalar per frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineScheme {
    /// `w_ij = 1/|N|`
    Uniform,
    /// `w_ij = softmax_j cos(f_i, f_j)`
    CosineSoftmax,
}

impl FromStr for BaselineScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(BaselineScheme::Uniform),
            "cosine_softmax" => Ok(BaselineScheme::CosineSoftmax),
            _ => Err(Error::config("scheme", format!("unknown baseline scheme `{s}`"))),
        }
    }
}

/// `Δf_i = Σ_j w_ij f_j` over the neighborhood's members.
///
/// An all-zero frame has no defined cosine; it scores 0, as if orthogonal.
pub fn baseline_aggregate<T: Real>(
    nbhd: &Neighborhood<T>,
    scheme: BaselineScheme,
) -> Result<Tensor3<T>> {
    let members = nbhd.members();
    let weights: Vec<T> = match scheme {
        BaselineScheme::Uniform => {
            vec![T::one() / T::from_f64(members.len() as f64); members.len()]
        }
        BaselineScheme::CosineSoftmax => {
            let f_i = &nbhd.current().feature;
            let scores = members
                .iter()
                .map(|m| match cosine_similarity(f_i, &m.feature) {
                    Ok(c) => Ok(c),
                    Err(Error::UndefinedSimilarity) => Ok(T::zero()),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<T>>>()?;
            let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
    };
    let mut acc = members[0].feature.scale(weights[0]);
    for (m, &w) in members.iter().zip(&weights).skip(1) {
        acc = acc.add(&m.feature.scale(w))?;
    }
    Ok(acc)
}
