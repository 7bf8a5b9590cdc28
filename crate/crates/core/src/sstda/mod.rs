//! Self-supervised domain adaptation terms: segment splitting, domain
//! attentive pooling, permutation labels, and the four loss terms combined
//! into the joint objective.
//!
//! The adversarial minus signs of the saddle objective are realised by
//! gradient reversal on the inputs of both domain classifiers, so
//! [`total_loss`] adds every term with a positive weight.

mod permutation;

use std::ops::Range;

use ndarray::{ArrayView2, Axis};
use rand::Rng;

pub use permutation::{
    decode_permutation, encode_permutation, interleave, permutation_count, shuffle_and_label,
    PermutationLabel,
};

use crate::numerics::{real, row_entropies, Real, Tape, Var};
use crate::{Error, Result};

/// Clamp on the adjacent-frame log-probability difference in the smoothing term.
pub const SMOOTHING_CLAMP: f64 = 4.0;

/// Splits `frames` into `m` contiguous, ordered ranges whose lengths differ
/// by at most one; the first `frames % m` ranges get the extra frame.
pub fn split_segments(frames: usize, m: usize) -> Result<Vec<Range<usize>>> {
    if m == 0 || frames < m {
        return Err(Error::InvalidArgument(format!(
            "cannot split {frames} frames into {m} segments"
        )));
    }
    let (base, extra) = (frames / m, frames % m);
    let mut start = 0;
    Ok((0..m)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Per-frame pooling weights `w_j = (1 - H(d_j)) + 1` for domain probabilities `d`.
pub fn attention_weights<F: Real>(d_hat: ArrayView2<F>) -> Vec<F> {
    let two = real::<F>(2.0);
    row_entropies(d_hat).iter().map(|&h| two - h).collect()
}

fn check_rows_normalized<F: Real>(tape: &Tape<F>, v: Var, what: &str) -> Result<()> {
    let tol = real::<F>(1e-4);
    for row in tape.value(v).axis_iter(Axis(0)) {
        let total: F = row.sum();
        if (total - F::one()).abs() > tol || row.iter().any(|&p| p < F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "{what} rows must be probability vectors"
            )));
        }
    }
    Ok(())
}

/// Domain attentive temporal pooling of one segment: `1 x C` row
/// `(1/T') sum_j w_j f_j`.
pub fn datp<F: Real>(tape: &mut Tape<F>, features: Var, d_hat: Var, detach: bool) -> Result<Var> {
    if tape.shape(d_hat).1 != 2 {
        return Err(Error::Shape("domain probabilities must have 2 columns".into()));
    }
    check_rows_normalized(tape, d_hat, "domain probability")?;
    tape.attentive_pool(features, d_hat, detach)
}

/// Pools each of `m` segments of `features`, using the matching frames of `d_hat`.
pub fn pool_segments<F: Real>(
    tape: &mut Tape<F>,
    features: Var,
    d_hat: Var,
    m: usize,
    detach: bool,
) -> Result<Vec<Var>> {
    let frames = tape.shape(features).0;
    if tape.shape(d_hat).0 != frames {
        return Err(Error::Shape(format!(
            "{frames} feature frames vs {} domain frames",
            tape.shape(d_hat).0
        )));
    }
    split_segments(frames, m)?
        .into_iter()
        .map(|r| {
            let f = tape.slice_rows(features, r.start, r.end)?;
            let d = tape.slice_rows(d_hat, r.start, r.end)?;
            datp(tape, f, d, detach)
        })
        .collect()
}

/// Shuffles pooled segment rows from both domains and joins them into one
/// `1 x 2mC` row.
pub fn shuffle_segments<F: Real, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    source: &[Var],
    target: &[Var],
    rng: &mut R,
) -> Result<(Var, PermutationLabel)> {
    let (order, label) = shuffle_and_label(source, target, rng)?;
    let joined = tape.concat_cols(&order)?;
    Ok((joined, label))
}

/// Frame-wise masked cross-entropy plus `alpha` times the truncated
/// adjacent-frame smoothing term (the latter over every frame).
pub fn prediction_loss<F: Real>(
    tape: &mut Tape<F>,
    logits: Var,
    labels: &[usize],
    mask: Option<&[bool]>,
    alpha: F,
) -> Result<Var> {
    let ce = tape.cross_entropy(logits, labels, mask)?;
    let smooth = tape.truncated_mse(logits, real(SMOOTHING_CLAMP));
    tape.weighted_sum(&[(ce, F::one()), (smooth, alpha)])
}

/// Binary domain cross-entropy: source frames labelled 0, target frames 1,
/// averaged within each video and then across the two.
pub fn local_domain_loss<F: Real>(tape: &mut Tape<F>, source_logits: Var, target_logits: Var) -> Result<Var> {
    for v in [source_logits, target_logits] {
        if tape.shape(v).1 != 2 {
            return Err(Error::Shape(format!(
                "domain logits must have 2 columns, got {:?}",
                tape.shape(v)
            )));
        }
    }
    let ns = tape.shape(source_logits).0;
    let nt = tape.shape(target_logits).0;
    let s = tape.cross_entropy(source_logits, &vec![0; ns], None)?;
    let t = tape.cross_entropy(target_logits, &vec![1; nt], None)?;
    let half = real::<F>(0.5);
    tape.weighted_sum(&[(s, half), (t, half)])
}

/// Cross-entropy of `1 x P` permutation logits at class `y_d`.
pub fn global_domain_loss<F: Real>(tape: &mut Tape<F>, perm_logits: Var, y_d: usize) -> Result<Var> {
    let (rows, classes) = tape.shape(perm_logits);
    if rows != 1 {
        return Err(Error::Shape("permutation logits must be a single row".into()));
    }
    if y_d >= classes {
        return Err(Error::InvalidArgument(format!(
            "permutation class {y_d} out of range for {classes} classes"
        )));
    }
    tape.cross_entropy(perm_logits, &[y_d], None)
}

/// `(1/T) sum_j (H(d_j) + 1) H(y_j)`.
pub fn attentive_entropy_loss<F: Real>(tape: &mut Tape<F>, y_hat: Var, d_hat: Var, detach: bool) -> Result<Var> {
    check_rows_normalized(tape, y_hat, "class probability")?;
    check_rows_normalized(tape, d_hat, "domain probability")?;
    tape.attentive_entropy(y_hat, d_hat, detach)
}

/// Weights of the joint objective at one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Smoothing weight inside the prediction loss.
    pub alpha: f64,
    /// Attentive-entropy weight.
    pub mu: f64,
    pub beta_l: f64,
    pub beta_g: f64,
    /// Gradient reversal coefficient.
    pub grl_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.15,
            mu: 1e-2,
            beta_l: 1.0,
            beta_g: 1.0,
            grl_lambda: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.mu, self.beta_l, self.beta_g, self.grl_lambda];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Domain terms of one adapted stage; `None` for terms not computed.
#[derive(Clone, Copy, Debug)]
pub struct DomainTerms {
    pub local: Var,
    pub global: Option<Var>,
    pub entropy: Option<Var>,
}

/// `sum_s L_y(s) + sum_{adapted s} (beta_l L_ld + beta_g L_gd + mu L_ae)`.
pub fn total_loss<F: Real>(
    tape: &mut Tape<F>,
    prediction: &[Var],
    domain: &[DomainTerms],
    weights: &LossWeights,
    num_stages: usize,
) -> Result<Var> {
    if prediction.len() != num_stages {
        return Err(Error::InvalidArgument(format!(
            "{} prediction terms for {num_stages} stages",
            prediction.len()
        )));
    }
    let mut terms: Vec<(Var, F)> = prediction.iter().map(|&v| (v, F::one())).collect();
    for d in domain {
        terms.push((d.local, real(weights.beta_l)));
        if let Some(g) = d.global {
            terms.push((g, real(weights.beta_g)));
        }
        if let Some(e) = d.entropy {
            terms.push((e, real(weights.mu)));
        }
    }
    tape.weighted_sum(&terms)
}

/// Ramp values for one training progress point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ramp {
    pub beta_l: f64,
    pub beta_g: f64,
    pub grl_lambda: f64,
}

/// `2 / (1 + exp(-10 p)) - 1` for progress `p`, clamped into `[0, 1]`.
pub fn ramp(p: f64) -> f64 {
    let p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
    2.0 / (1.0 + (-10.0 * p).exp()) - 1.0
}

/// Shared ramp for both domain weights and the reversal coefficient.
pub fn beta_schedule(p: f64) -> Ramp {
    let r = ramp(p);
    Ramp {
        beta_l: r,
        beta_g: r,
        grl_lambda: r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use std::f64::consts::LN_2;

    fn probs(tape: &mut Tape<f64>, p: Array2<f64>) -> Var {
        tape.constant(p).unwrap()
    }

    #[test]
    fn segment_examples() {
        assert_eq!(split_segments(8, 2).unwrap(), vec![0..4, 4..8]);
        assert_eq!(split_segments(7, 2).unwrap(), vec![0..4, 4..7]);
        assert_eq!(split_segments(6, 3).unwrap(), vec![0..2, 2..4, 4..6]);
        assert!(split_segments(2, 3).is_err());
        assert!(split_segments(5, 0).is_err());
    }

    #[test]
    fn datp_examples() {
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let d = probs(&mut tape, Array2::from_elem((2, 2), 0.5));
        let v = datp(&mut tape, f, d, true).unwrap();
        for &x in tape.value(v) {
            assert!((x - 0.653426).abs() < 1e-6);
        }
        assert!((attention_weights(tape.value(d).view())[0] - 1.306853).abs() < 1e-6);

        let d1 = probs(&mut tape, array![[1.0, 0.0], [1.0, 0.0]]);
        let v = datp(&mut tape, f, d1, true).unwrap();
        assert_eq!(tape.value(v), &array![[1.0, 1.0]]);

        let f1 = tape.constant(array![[4.0, -2.0]]).unwrap();
        let dh = probs(&mut tape, array![[0.5, 0.5]]);
        let v = datp(&mut tape, f1, dh, true).unwrap();
        assert!((tape.value(v)[[0, 0]] - 5.22741).abs() < 1e-5);
        assert!((tape.value(v)[[0, 1]] + 2.61371).abs() < 1e-5);

        let bad = probs(&mut tape, array![[0.5, 0.7]]);
        assert!(datp(&mut tape, f1, bad, true).is_err());
    }

    #[test]
    fn prediction_loss_examples() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(Array2::zeros((5, 4))).unwrap();
        let l = prediction_loss(&mut tape, uniform, &[0, 1, 2, 3, 0], None, 0.15).unwrap();
        assert!((tape.scalar(l) - 4f64.ln()).abs() < 1e-12);

        let mut sharp = Array2::from_elem((6, 3), -60.0);
        sharp.column_mut(1).fill(60.0);
        let sharp = tape.constant(sharp).unwrap();
        let l = prediction_loss(&mut tape, sharp, &[1; 6], None, 0.15).unwrap();
        assert!(tape.scalar(l) < 1e-12);
        assert!(prediction_loss(&mut tape, sharp, &[1; 6], Some(&[false; 6]), 0.15).is_err());
    }

    #[test]
    fn masked_cross_entropy_is_mean_over_retained_frames() {
        let logits = array![[1.0, -1.0, 0.3], [0.2, 0.1, 2.0], [-0.5, 0.5, 0.0], [3.0, 0.0, 1.0]];
        let labels = [0, 2, 1, 1];
        let mask = [true, false, true, false];
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(logits.clone()).unwrap();
        let l = prediction_loss(&mut tape, x, &labels, Some(&mask), 0.0).unwrap();
        let mut oracle = 0.0;
        for t in [0, 2] {
            let row = logits.row(t);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            oracle += lse - row[labels[t]];
        }
        assert!((tape.scalar(l) - oracle / 2.0).abs() < 1e-12);
    }

    #[test]
    fn local_domain_loss_examples() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Array2::zeros((4, 2))).unwrap();
        let z2 = tape.constant(Array2::zeros((7, 2))).unwrap();
        let l = local_domain_loss(&mut tape, z, z2).unwrap();
        assert!((tape.scalar(l) - LN_2).abs() < 1e-12);

        let s = tape.constant(Array2::from_shape_fn((3, 2), |(_, c)| [0.9f64, 0.1][c].ln())).unwrap();
        let t = tape.constant(Array2::from_shape_fn((5, 2), |(_, c)| [0.2f64, 0.8][c].ln())).unwrap();
        let l = local_domain_loss(&mut tape, s, t).unwrap();
        assert!((tape.scalar(l) - 0.164252).abs() < 1e-6);

        let sure_s = tape.constant(array![[50.0, -50.0]]).unwrap();
        let sure_t = tape.constant(array![[-50.0, 50.0]]).unwrap();
        let l = local_domain_loss(&mut tape, sure_s, sure_t).unwrap();
        assert!(tape.scalar(l) < 1e-12);
    }

    #[test]
    fn global_domain_loss_examples() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Array2::zeros((1, 6))).unwrap();
        let l = global_domain_loss(&mut tape, z, 3).unwrap();
        assert!((tape.scalar(l) - 6f64.ln()).abs() < 1e-12);
        let one = tape.constant(array![[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let l = global_domain_loss(&mut tape, one, 0).unwrap();
        assert!((tape.scalar(l) - 1.043592).abs() < 1e-6);
        let big = tape.constant(array![[100.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let l = global_domain_loss(&mut tape, big, 0).unwrap();
        assert!(tape.scalar(l) < 1e-40);
        assert!(global_domain_loss(&mut tape, z, 6).is_err());
    }

    #[test]
    fn attentive_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let onehot = probs(&mut tape, array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let dh = probs(&mut tape, Array2::from_elem((2, 2), 0.5));
        let l = attentive_entropy_loss(&mut tape, onehot, dh, true).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let yu = probs(&mut tape, Array2::from_elem((3, 2), 0.5));
        let du = probs(&mut tape, Array2::from_elem((3, 2), 0.5));
        let l = attentive_entropy_loss(&mut tape, yu, du, true).unwrap();
        assert!((tape.scalar(l) - 1.173600).abs() < 1e-6);

        let dsure = probs(&mut tape, array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let l = attentive_entropy_loss(&mut tape, yu, dsure, true).unwrap();
        assert!((tape.scalar(l) - LN_2).abs() < 1e-12);
        assert!(attentive_entropy_loss(&mut tape, yu, dh, true).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let mut tape = Tape::<f64>::new();
        let ly: Vec<Var> = (0..4)
            .map(|i| tape.constant(array![[0.5 + i as f64]]).unwrap())
            .collect();
        let one = tape.constant(array![[1.0]]).unwrap();
        let sum_ly: f64 = ly.iter().map(|&v| tape.scalar(v)).sum();
        let terms = DomainTerms {
            local: one,
            global: Some(one),
            entropy: Some(one),
        };
        let w = LossWeights {
            alpha: 0.15,
            mu: 1.0,
            beta_l: 1.0,
            beta_g: 1.0,
            grl_lambda: 1.0,
        };
        let l = total_loss(&mut tape, &ly, &[terms], &w, 4).unwrap();
        assert_eq!(tape.scalar(l), sum_ly + 3.0);
        let zero = LossWeights {
            mu: 0.0,
            beta_l: 0.0,
            beta_g: 0.0,
            ..w
        };
        let l = total_loss(&mut tape, &ly, &[terms], &zero, 4).unwrap();
        assert_eq!(tape.scalar(l), sum_ly);
        assert!(total_loss(&mut tape, &ly[..3], &[terms], &w, 4).is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(ramp(0.0), 0.0);
        assert!((ramp(0.5) - 0.986614).abs() < 1e-6);
        assert!((ramp(1.0) - 0.999909).abs() < 1e-6);
        assert_eq!(ramp(-3.0), 0.0);
        assert_eq!(ramp(7.0), ramp(1.0));
        let mut prev = 0.0;
        for i in 0..=1000 {
            let r = beta_schedule(i as f64 / 1000.0);
            assert!(r.beta_l >= prev && r.beta_l < 1.0);
            assert_eq!(r.beta_l, r.grl_lambda);
            prev = r.beta_l;
        }
    }

    #[test]
    fn datp_with_uniform_domain_is_scaled_mean() {
        let f0 = Array2::from_shape_fn((9, 4), |(t, c)| ((t * 5 + c * 3) % 11) as f64 - 4.0);
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(f0.clone()).unwrap();
        let d = probs(&mut tape, Array2::from_elem((9, 2), 0.5));
        let v = datp(&mut tape, f, d, false).unwrap();
        let mean = f0.mean_axis(Axis(0)).unwrap();
        for (a, b) in tape.value(v).iter().zip(mean.iter()) {
            assert!((a - (2.0 - LN_2) * b).abs() < 1e-6);
        }
    }

    #[test]
    fn local_domain_loss_ignores_frame_order() {
        let s0 = Array2::from_shape_fn((6, 2), |(t, c)| ((t * 7 + c) % 5) as f64 * 0.4 - 1.0);
        let t0 = Array2::from_shape_fn((4, 2), |(t, c)| ((t * 3 + c * 2) % 7) as f64 * 0.3 - 1.0);
        let perm_s = [3, 0, 5, 1, 4, 2];
        let perm_t = [2, 3, 1, 0];
        let shuffled_s = Array2::from_shape_fn((6, 2), |(t, c)| s0[[perm_s[t], c]]);
        let shuffled_t = Array2::from_shape_fn((4, 2), |(t, c)| t0[[perm_t[t], c]]);
        let eval = |s: Array2<f64>, t: Array2<f64>| {
            let mut tape = Tape::<f64>::new();
            let s = tape.constant(s).unwrap();
            let t = tape.constant(t).unwrap();
            let l = local_domain_loss(&mut tape, s, t).unwrap();
            tape.scalar(l)
        };
        let a = eval(s0, t0);
        let b = eval(shuffled_s, shuffled_t);
        assert!((a - b).abs() <= 1e-15 * a.abs(), "{a} vs {b}");
    }
}
