use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{real, Real};
use crate::{Error, Result};

pub fn relu<F: Real>(x: ArrayView2<F>) -> Array2<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Real>(x: ArrayView2<F>) -> Array2<F> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total: F = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Row-wise log-softmax, `x - max - ln(sum(exp(x - max)))`.
pub fn log_softmax_rows<F: Real>(x: ArrayView2<F>) -> Array2<F> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Natural-log entropy of a row that is already known to be a distribution.
pub(crate) fn entropy_unchecked<F: Real>(p: ArrayView1<F>) -> F {
    p.iter()
        .filter(|&&v| v > F::zero())
        .map(|&v| -v * v.ln())
        .sum()
}

/// Natural-log entropy `-sum p ln p`; zero entries contribute nothing.
///
/// Rejects negative entries and vectors whose mass differs from one by more
/// than `1e-5`.
pub fn entropy<F: Real>(p: &[F]) -> Result<F> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("entropy of an empty vector".into()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < F::zero()) {
        return Err(Error::InvalidArgument(
            "entropy requires finite nonnegative probabilities".into(),
        ));
    }
    let total: F = p.iter().copied().sum();
    if (total - F::one()).abs() > real(1e-5) {
        return Err(Error::InvalidArgument(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(entropy_unchecked(ArrayView1::from(p)))
}

/// Entropy of every row of a row-stochastic matrix.
pub fn row_entropies<F: Real>(p: ArrayView2<F>) -> Array1<F> {
    p.axis_iter(Axis(0)).map(entropy_unchecked).collect()
}
