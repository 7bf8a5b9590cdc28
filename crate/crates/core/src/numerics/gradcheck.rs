//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the backward implementations it checks.

use ndarray::Array2;

use super::{Tape, Var};
use crate::Result;

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest per-input relative error `|a - n| / max(|a|, |n|, floor)`
    /// (Euclidean norms over the whole input).
    pub max_rel_error: f64,
    /// Index of the input with the largest error.
    pub worst_input: usize,
    pub analytic: Vec<Array2<f64>>,
    pub numeric: Vec<Array2<f64>>,
}

/// Norm floor under which two gradients are compared absolutely.
pub const NORM_FLOOR: f64 = 1e-8;

/// Compares tape gradients of the scalar built by `build` against central
/// differences with the given `step`, for every entry of every input.
pub fn check_gradients<B>(inputs: &[Array2<f64>], step: f64, build: B) -> Result<GradCheck>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|v| tape.leaf(v.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|v| tape.leaf(v.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(x.raw_dim()))
        })
        .collect();

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Array2::zeros(inputs[i].raw_dim());
        for idx in 0..inputs[i].len() {
            let (r, c) = (idx / inputs[i].ncols(), idx % inputs[i].ncols());
            let orig = work[i][[r, c]];
            work[i][[r, c]] = orig + step;
            let plus = eval(&work)?;
            work[i][[r, c]] = orig - step;
            let minus = eval(&work)?;
            work[i][[r, c]] = orig;
            g[[r, c]] = (plus - minus) / (2.0 * step);
        }
        numeric.push(g);
    }

    let mut max_rel_error = 0.0;
    let mut worst_input = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let diff = (a - n).mapv(|v| v * v).sum().sqrt();
        let na = a.mapv(|v| v * v).sum().sqrt();
        let nn = n.mapv(|v| v * v).sum().sqrt();
        let rel = diff / na.max(nn).max(NORM_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_input = i;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst_input,
        analytic,
        numeric,
    })
}
