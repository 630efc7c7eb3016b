//! Cost ratio of aggregation-augmented inference and curve fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame component costs in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub cost_extraction: f64,
    pub cost_task: f64,
    /// Aggregation cost per neighbor.
    pub cost_tf: f64,
    pub neighbor_count: usize,
}

/// `r = 1 + i·N_tf / (N_ex + N_tk)`.
pub fn cost_ratio(model: &CostModel) -> Result<f64> {
    let CostModel {
        cost_extraction,
        cost_task,
        cost_tf,
        neighbor_count,
    } = *model;
    for (key, v) in [
        ("cost_extraction", cost_extraction),
        ("cost_task", cost_task),
        ("cost_tf", cost_tf),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::config(key, format!("{v} is not a finite non-negative cost")));
        }
    }
    let base = cost_extraction + cost_task;
    if base <= 0.0 {
        return Err(Error::config("cost_extraction", "N_ex + N_tk must be positive"));
    }
    Ok(1.0 + neighbor_count as f64 * cost_tf / base)
}

/// Least-squares polynomial fit and its coefficient of determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Lowest order first.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

impl Fit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Fits a polynomial of `degree` through `(xs, ys)` by normal equations.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Fit> {
    let n = degree + 1;
    if xs.len() != ys.len() || xs.len() < n {
        return Err(Error::Invalid(format!(
            "{} points cannot determine a degree-{degree} fit",
            xs.len().min(ys.len())
        )));
    }
    // augmented [XᵀX | Xᵀy]
    let mut m = vec![vec![0.0; n + 1]; n];
    for (&x, &y) in xs.iter().zip(ys) {
        let powers: Vec<f64> = (0..n).map(|p| x.powi(p as i32)).collect();
        for r in 0..n {
            for c in 0..n {
                m[r][c] += powers[r] * powers[c];
            }
            m[r][n] += powers[r] * y;
        }
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        if m[pivot][col].abs() < 1e-300 {
            return Err(Error::Invalid("degenerate fit: abscissae not distinct".into()));
        }
        m.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let coefficients: Vec<f64> = (0..n).map(|r| m[r][n] / m[r][r]).collect();
    let fit = Fit {
        coefficients,
        r_squared: 0.0,
    };
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(&x, &y)| (y - fit.eval(x)).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(Fit { r_squared, ..fit })
}
