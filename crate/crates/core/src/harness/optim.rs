use ndarray::Array2;

use crate::model::ParamStore;
use crate::numerics::{real, Real};
use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamStore<F>, lr: f64) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Array2<F>], &[Array2<F>]) {
        (&self.m, &self.v)
    }

    /// One update. Gradients are checked before anything is modified, so a
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Array2<F>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.raw_dim() != g.raw_dim() {
                return Err(Error::Shape(format!("gradient shape mismatch for {}", p.name)));
            }
            if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient {bad} for parameter {} at step {}",
                    p.name,
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (real::<F>(self.beta1), real::<F>(self.beta2));
        let (one, eps) = (F::one(), real::<F>(self.eps));
        let c1 = real::<F>(1.0 - self.beta1.powi(t));
        let c2 = real::<F>(1.0 - self.beta2.powi(t));
        let lr = real::<F>(self.lr);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(&mut p.value)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
