use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub op: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub epsilon: f64,
    #[serde(skip)]
    pub per_parameter: Vec<ParamError>,
}

/// Checks the tape's gradients of `forward` at `params` against
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, one scalar at a time.
///
/// `forward` receives a fresh tape with one leaf per entry of `params` and
/// must return a scalar loss node. It is evaluated many times and must be
/// deterministic.
pub fn finite_difference_check<F>(
    op: &str,
    forward: F,
    params: &[Tensor3<f64>],
    epsilon: f64,
) -> Result<GradientReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::Epsilon(epsilon));
    }
    let eval = |values: &[Tensor3<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = forward(&mut tape, &vars)?;
        let value = crate::graph::Graph::value(&tape, &loss);
        if value.shape() != crate::tensor::Shape::scalar() {
            return Err(Error::NonScalarLoss(value.shape()));
        }
        Ok(value.data()[0])
    };

    let mut report = GradientReport {
        op: op.to_string(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        epsilon,
        per_parameter: Vec::with_capacity(params.len()),
    };
    if params.is_empty() {
        return Ok(report);
    }

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    for (p, (param, var)) in params.iter().zip(&vars).enumerate() {
        let analytic = grads.get(*var).expect("every leaf has a gradient");
        let errors = (0..param.data().len())
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let x = param.data()[i];
                let mut shifted = params.to_vec();
                shifted[p] = param.with_value(i, x + epsilon);
                let plus = eval(&shifted)?;
                shifted[p] = param.with_value(i, x - epsilon);
                let minus = eval(&shifted)?;
                let numeric = (plus - minus) / (2.0 * epsilon);
                let exact = analytic.data()[i];
                let abs = (numeric - exact).abs();
                let denom = exact.abs().max(numeric.abs()).max(1e-12);
                Ok((abs / denom, abs))
            })
            .collect::<Result<Vec<_>>>()?;
        let entry = errors.iter().fold(
            ParamError {
                max_rel_err: 0.0,
                max_abs_err: 0.0,
            },
            |acc, &(rel, abs)| ParamError {
                max_rel_err: acc.max_rel_err.max(rel),
                max_abs_err: acc.max_abs_err.max(abs),
            },
        );
        report.max_rel_err = report.max_rel_err.max(entry.max_rel_err);
        report.max_abs_err = report.max_abs_err.max(entry.max_abs_err);
        report.per_parameter.push(entry);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Shape;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn quadratic_is_exact() {
        let theta = Tensor3::from_vec(Shape::new(1, 1, 2), vec![1.0, 2.0]).unwrap();
        let report = finite_difference_check(
            "norm2",
            |t, v| {
                let sq = t.mul(&v[0], &v[0])?;
                Ok(t.sum(sq))
            },
            &[theta.clone()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "{report:?}");

        let mut tape = Tape::new();
        let v = tape.leaf(theta);
        let sq = tape.mul(&v, &v).unwrap();
        let loss = tape.sum(sq);
        assert_eq!(tape.backward(loss).unwrap().get(v).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn zero_parameters_give_empty_report() {
        let report = finite_difference_check(
            "const",
            |t, _| Ok(t.constant(Tensor3::scalar(3.0))),
            &[],
            1e-5,
        )
        .unwrap();
        assert!(report.per_parameter.is_empty());
        assert_eq!((report.max_rel_err, report.max_abs_err), (0.0, 0.0));
    }

    #[test]
    fn detects_non_determinism() {
        let calls = AtomicUsize::new(0);
        let err = finite_difference_check(
            "flaky",
            |t, v| {
                let n = calls.fetch_add(1, Ordering::SeqCst) as f64;
                let c = t.constant(Tensor3::scalar(n));
                let s = t.sum(v[0]);
                t.add(&s, &c)
            },
            &[Tensor3::scalar(1.0)],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }

    #[test]
    fn rejects_epsilon_out_of_range() {
        let f = |t: &mut Tape, v: &[Var]| Ok(t.sum(v[0]));
        assert!(matches!(
            finite_difference_check("x", f, &[Tensor3::scalar(1.0)], 1e-3),
            Err(Error::Epsilon(_))
        ));
    }

    #[test]
    fn flags_a_wrong_gradient() {
        // relu evaluated exactly on its kink: the tape says 0, differences say 0.5
        let report = finite_difference_check(
            "kink",
            |t, v| {
                let r = t.relu(&v[0]);
                Ok(t.sum(r))
            },
            &[Tensor3::scalar(0.0)],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err > 0.5);
    }

    #[test]
    fn serializes_summary_fields() {
        let report = GradientReport {
            op: "blend".into(),
            max_rel_err: 1e-8,
            max_abs_err: 2e-9,
            epsilon: 1e-5,
            per_parameter: vec![],
        };
        let json: serde_json::Value = serde_json::to_value(&report).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
        for k in ["op", "max_rel_err", "max_abs_err", "epsilon"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }
}
