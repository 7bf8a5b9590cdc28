use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::functional::{entropy_unchecked, log_softmax_rows, softmax_rows};
use super::{real, Real};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
        kernel: usize,
        cols: Array2<F>,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Square {
        x: Var,
    },
    Scale {
        x: Var,
        c: F,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        terms: Vec<(Var, F)>,
    },
    SoftmaxRows {
        x: Var,
    },
    LogSoftmaxRows {
        x: Var,
    },
    GradReverse {
        x: Var,
        lambda: F,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
        probs: Array2<F>,
    },
    TruncatedMse {
        logits: Var,
        tau: F,
    },
    AttentivePool {
        f: Var,
        d: Var,
        weights: Vec<F>,
        detach: bool,
    },
    AttentiveEntropy {
        y: Var,
        d: Var,
        detach: bool,
    },
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    requires_grad: bool,
    grad: Option<Array2<F>>,
}

/// Ordered record of executed operations.
///
/// Values are stored row-major with one row per frame. [`Tape::backward`]
/// walks the record once in reverse and sums gradients into every leaf that
/// was created with `requires_grad`; repeated calls keep accumulating until
/// [`Tape::zero_grads`].
///
/// A tape is confined to one thread; build a separate tape per graph.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<F: Real>(what: &str, value: &Array2<F>) -> Result<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} produced a non-finite value")))
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Array2<F>>], id: Var, g: Array2<F>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// `d/dz` of a downstream gradient `g` through `p = softmax(z)`.
fn softmax_backward<F: Real>(p: ArrayView2<F>, g: ArrayView2<F>) -> Array2<F> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((mut o, pr), gr) in out
        .axis_iter_mut(Axis(0))
        .zip(p.axis_iter(Axis(0)))
        .zip(g.axis_iter(Axis(0)))
    {
        let dot: F = pr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
        for ((o, &pv), &gv) in o.iter_mut().zip(pr.iter()).zip(gr.iter()) {
            *o = pv * (gv - dot);
        }
    }
    out
}

/// `d/dz` of a downstream gradient `g` through `l = log_softmax(z)`, given `p = exp(l)`.
fn log_softmax_backward<F: Real>(p: ArrayView2<F>, g: ArrayView2<F>) -> Array2<F> {
    let mut out = g.to_owned();
    for (mut o, pr) in out.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
        let total: F = o.sum();
        for (o, &pv) in o.iter_mut().zip(pr.iter()) {
            *o -= pv * total;
        }
    }
    out
}

/// `dH/dp_k = -(ln p_k + 1)`, taken as zero where `p_k = 0`.
fn entropy_grad<F: Real>(p: F) -> F {
    if p > F::zero() {
        -(p.ln() + F::one())
    } else {
        F::zero()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Leaf values must be finite and non-empty.
    pub fn leaf(&mut self, value: Array2<F>, requires_grad: bool) -> Result<Var> {
        if value.nrows() == 0 || value.ncols() == 0 {
            return Err(Error::Shape(format!(
                "leaf must be at least 1x1, got {:?}",
                value.dim()
            )));
        }
        check_finite("leaf", &value)?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Array2<F>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Array2<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Per-frame affine map `y[t] = W x[t] + b` with `W: Cout x Cin` and `b: 1 x Cout`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ncols() != wv.ncols() || bv.dim() != (1, wv.nrows()) {
            return Err(Error::Shape(format!(
                "pointwise_conv: x {:?}, weight {:?}, bias {:?}",
                xv.dim(),
                wv.dim(),
                bv.dim()
            )));
        }
        let out = xv.dot(&wv.t()) + bv;
        Ok(self.push(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Same-length dilated convolution with zero padding of
    /// `dilation * (k - 1) / 2` frames on each side.
    ///
    /// The weight is `Cout x (k * Cin)` in tap-major order: column
    /// `tap * Cin + c` holds the kernel entry for input channel `c` at tap
    /// `tap`, and tap `j` reads frame `t + (j - (k - 1) / 2) * dilation`.
    pub fn dilated_conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        if dilation < 1 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (frames, cin) = xv.dim();
        if wv.ncols() % cin != 0 {
            return Err(Error::Shape(format!(
                "dilated_conv1d: weight {:?} incompatible with {cin} input channels",
                wv.dim()
            )));
        }
        let kernel = wv.ncols() / cin;
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {kernel} is not odd")));
        }
        if bv.dim() != (1, wv.nrows()) {
            return Err(Error::Shape(format!(
                "dilated_conv1d: bias {:?} for {} output channels",
                bv.dim(),
                wv.nrows()
            )));
        }
        let half = (kernel - 1) / 2;
        let mut cols = Array2::zeros((frames, kernel * cin));
        for tap in 0..kernel {
            let offset = (tap as isize - half as isize) * dilation as isize;
            let lo = (-offset).max(0) as usize;
            let hi = (frames as isize - offset).clamp(0, frames as isize) as usize;
            if lo >= hi {
                continue;
            }
            let src_lo = (lo as isize + offset) as usize;
            let src_hi = (hi as isize + offset) as usize;
            cols.slice_mut(s![lo..hi, tap * cin..(tap + 1) * cin])
                .assign(&xv.slice(s![src_lo..src_hi, ..]));
        }
        let out = cols.dot(&wv.t()) + bv;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                dilation,
                kernel,
                cols,
            },
            &[x, w, b],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = super::relu(self.value(x).view());
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v * v);
        self.push(out, Op::Square { x }, &[x])
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let out = self.value(x).mapv(|v| v * c);
        self.push(out, Op::Scale { x, c }, &[x])
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum { x }, &[x])
    }

    /// `sum_i c_i * s_i` over `1 x 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("weighted_sum of no terms".into()));
        }
        let mut total = F::zero();
        for &(v, c) in terms {
            if self.shape(v) != (1, 1) {
                return Err(Error::Shape(format!(
                    "weighted_sum term is {:?}, not scalar",
                    self.shape(v)
                )));
            }
            total += c * self.scalar(v);
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            Array2::from_elem((1, 1), total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            &inputs,
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x).view());
        self.push(out, Op::SoftmaxRows { x }, &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let out = log_softmax_rows(self.value(x).view());
        self.push(out, Op::LogSoftmaxRows { x }, &[x])
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `-lambda` in the backward pass.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn gradient_reverse(&mut self, x: Var, lambda: F) -> Result<Var> {
        // negated so NaN is rejected too
        if !(lambda >= F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "gradient reversal coefficient {lambda} is negative"
            )));
        }
        let out = self.value(x).clone();
        Ok(self.push(out, Op::GradReverse { x, lambda }, &[x]))
    }

    /// Frames `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let rows = self.shape(x).0;
        if start >= end || end > rows {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{end} of {rows} frames"
            )));
        }
        let out = self.value(x).slice(s![start..end, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    /// Stacks nodes along the frame axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("concat_rows: {e}")))?;
        Ok(self.push(
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Joins nodes along the channel axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views)
            .map_err(|e| Error::Shape(format!("concat_cols: {e}")))?;
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Mean cross-entropy of row-wise softmax against class `targets[t]`,
    /// over frames where `mask[t]` holds (all frames when `mask` is `None`).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (frames, classes) = self.shape(logits);
        if targets.len() != frames {
            return Err(Error::Shape(format!(
                "cross_entropy: {} targets for {frames} frames",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::InvalidArgument(format!(
                "target class {bad} out of range for {classes} classes"
            )));
        }
        let mask = match mask {
            Some(m) if m.len() != frames => {
                return Err(Error::Shape(format!(
                    "cross_entropy: mask of {} for {frames} frames",
                    m.len()
                )))
            }
            Some(m) => m.to_vec(),
            None => vec![true; frames],
        };
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::InvalidArgument(
                "cross_entropy: mask retains no frames".into(),
            ));
        }
        let logp = log_softmax_rows(self.value(logits).view());
        let mut total = F::zero();
        for (t, (&target, &keep)) in targets.iter().zip(&mask).enumerate() {
            if keep {
                total -= logp[[t, target]];
            }
        }
        let value = total / real::<F>(count as f64);
        let probs = logp.mapv(|v| v.exp());
        Ok(self.push(
            Array2::from_elem((1, 1), value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask,
                count,
                probs,
            },
            &[logits],
        ))
    }

    /// Truncated mean squared difference between log-probabilities of
    /// adjacent frames: `mean_{t,c} min((l[t,c] - l[t-1,c])^2, tau^2)` with
    /// `l = log_softmax(logits)`. Zero for single-frame inputs.
    pub fn truncated_mse(&mut self, logits: Var, tau: F) -> Var {
        let logp = log_softmax_rows(self.value(logits).view());
        let (frames, classes) = logp.dim();
        let cap = tau * tau;
        let value = if frames < 2 {
            F::zero()
        } else {
            let diff = &logp.slice(s![1.., ..]) - &logp.slice(s![..-1, ..]);
            let total: F = diff.iter().map(|&d| (d * d).min(cap)).sum();
            total / real::<F>(((frames - 1) * classes) as f64)
        };
        self.push(
            Array2::from_elem((1, 1), value),
            Op::TruncatedMse { logits, tau },
            &[logits],
        )
    }

    /// Domain attentive temporal pooling:
    /// `v = (1/T') sum_j (2 - H(d_j)) f_j`, producing a `1 x C` row.
    ///
    /// `d` holds per-frame domain probabilities. With `detach`, the attention
    /// weights are constants and no gradient reaches `d`.
    pub fn attentive_pool(&mut self, f: Var, d: Var, detach: bool) -> Result<Var> {
        let (fv, dv) = (self.value(f), self.value(d));
        if fv.nrows() != dv.nrows() {
            return Err(Error::Shape(format!(
                "attentive_pool: {} feature frames vs {} domain frames",
                fv.nrows(),
                dv.nrows()
            )));
        }
        let frames = real::<F>(fv.nrows() as f64);
        let two = real::<F>(2.0);
        let weights: Vec<F> = dv
            .axis_iter(Axis(0))
            .map(|row| two - entropy_unchecked(row))
            .collect();
        let mut out = Array2::zeros((1, fv.ncols()));
        for (row, &w) in fv.axis_iter(Axis(0)).zip(&weights) {
            out.row_mut(0).scaled_add(w / frames, &row);
        }
        Ok(self.push(
            out,
            Op::AttentivePool {
                f,
                d,
                weights,
                detach,
            },
            &[f, d],
        ))
    }

    /// Attentive entropy `(1/T) sum_j (H(d_j) + 1) H(y_j)` of class
    /// probabilities `y` weighted by domain probabilities `d`. With `detach`,
    /// no gradient reaches `d`.
    pub fn attentive_entropy(&mut self, y: Var, d: Var, detach: bool) -> Result<Var> {
        let (yv, dv) = (self.value(y), self.value(d));
        if yv.nrows() != dv.nrows() {
            return Err(Error::Shape(format!(
                "attentive_entropy: {} class frames vs {} domain frames",
                yv.nrows(),
                dv.nrows()
            )));
        }
        let total: F = yv
            .axis_iter(Axis(0))
            .zip(dv.axis_iter(Axis(0)))
            .map(|(yr, dr)| (entropy_unchecked(dr) + F::one()) * entropy_unchecked(yr))
            .sum();
        let value = total / real::<F>(yv.nrows() as f64);
        Ok(self.push(
            Array2::from_elem((1, 1), value),
            Op::AttentiveEntropy { y, d, detach },
            &[y, d],
        ))
    }

    /// Back-propagates from a `1 x 1` node, summing into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array2<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, g, &mut grads)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, id: usize, g: Array2<F>, grads: &mut [Option<Array2<F>>]) -> Result<()> {
        if matches!(self.nodes[id].op, Op::Leaf) {
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
            return Ok(());
        }
        let nodes = &self.nodes;
        let needs = |v: &Var| nodes[v.0].requires_grad;
        let val = |v: &Var| &nodes[v.0].value;
        match &nodes[id].op {
            Op::Leaf => unreachable!(),
            Op::Linear { x, w, b } => {
                if needs(x) {
                    accumulate(grads, *x, g.dot(val(w)));
                }
                if needs(w) {
                    accumulate(grads, *w, g.t().dot(val(x)));
                }
                if needs(b) {
                    accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                dilation,
                kernel,
                cols,
            } => {
                if needs(w) {
                    accumulate(grads, *w, g.t().dot(cols));
                }
                if needs(b) {
                    accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if needs(x) {
                    let dcols = g.dot(val(w));
                    let (frames, cin) = val(x).dim();
                    let half = (kernel - 1) / 2;
                    let mut dx = Array2::zeros((frames, cin));
                    for tap in 0..*kernel {
                        let offset = (tap as isize - half as isize) * *dilation as isize;
                        let lo = (-offset).max(0) as usize;
                        let hi = (frames as isize - offset).clamp(0, frames as isize) as usize;
                        if lo >= hi {
                            continue;
                        }
                        let src_lo = (lo as isize + offset) as usize;
                        let src_hi = (hi as isize + offset) as usize;
                        let mut target = dx.slice_mut(s![src_lo..src_hi, ..]);
                        target += &dcols.slice(s![lo..hi, tap * cin..(tap + 1) * cin]);
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Relu { x } => {
                let mut dx = g;
                dx.zip_mut_with(val(x), |d, &v| {
                    if v <= F::zero() {
                        *d = F::zero()
                    }
                });
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if needs(a) && needs(b) {
                    accumulate(grads, *a, g.clone());
                    accumulate(grads, *b, g);
                } else if needs(a) {
                    accumulate(grads, *a, g);
                } else {
                    accumulate(grads, *b, g);
                }
            }
            Op::Square { x } => {
                let mut dx = g;
                dx.zip_mut_with(val(x), |d, &v| *d *= v + v);
                accumulate(grads, *x, dx);
            }
            Op::Scale { x, c } => {
                let c = *c;
                accumulate(grads, *x, g.mapv(|v| v * c));
            }
            Op::Sum { x } => {
                let s = g[[0, 0]];
                accumulate(grads, *x, Array2::from_elem(val(x).raw_dim(), s));
            }
            Op::WeightedSum { terms } => {
                let s = g[[0, 0]];
                for (v, c) in terms {
                    if needs(v) {
                        accumulate(grads, *v, Array2::from_elem((1, 1), *c * s));
                    }
                }
            }
            Op::SoftmaxRows { x } => {
                let dx = softmax_backward(nodes[id].value.view(), g.view());
                accumulate(grads, *x, dx);
            }
            Op::LogSoftmaxRows { x } => {
                let p = nodes[id].value.mapv(|v| v.exp());
                accumulate(grads, *x, log_softmax_backward(p.view(), g.view()));
            }
            Op::GradReverse { x, lambda } => {
                let neg = -*lambda;
                accumulate(grads, *x, g.mapv(|v| neg * v));
            }
            Op::SliceRows { x, start } => {
                let mut dx = Array2::zeros(val(x).raw_dim());
                dx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                accumulate(grads, *x, dx);
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for p in parts {
                    let rows = val(p).nrows();
                    if needs(p) {
                        accumulate(grads, *p, g.slice(s![at..at + rows, ..]).to_owned());
                    }
                    at += rows;
                }
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for p in parts {
                    let cols = val(p).ncols();
                    if needs(p) {
                        accumulate(grads, *p, g.slice(s![.., at..at + cols]).to_owned());
                    }
                    at += cols;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                count,
                probs,
            } => {
                let scale = g[[0, 0]] / real::<F>(*count as f64);
                let mut dx = probs.clone();
                for (t, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    if mask[t] {
                        row[targets[t]] -= F::one();
                        row.mapv_inplace(|v| v * scale);
                    } else {
                        row.fill(F::zero());
                    }
                }
                accumulate(grads, *logits, dx);
            }
            Op::TruncatedMse { logits, tau } => {
                let logp = log_softmax_rows(val(logits).view());
                let (frames, classes) = logp.dim();
                let mut dlogp = Array2::zeros((frames, classes));
                if frames >= 2 {
                    let scale = g[[0, 0]] * real::<F>(2.0) / real::<F>(((frames - 1) * classes) as f64);
                    let cap = *tau * *tau;
                    for t in 1..frames {
                        for c in 0..classes {
                            let d = logp[[t, c]] - logp[[t - 1, c]];
                            if d * d < cap {
                                let gd = scale * d;
                                dlogp[[t, c]] += gd;
                                dlogp[[t - 1, c]] -= gd;
                            }
                        }
                    }
                }
                let p = logp.mapv(|v| v.exp());
                accumulate(grads, *logits, log_softmax_backward(p.view(), dlogp.view()));
            }
            Op::AttentivePool {
                f,
                d,
                weights,
                detach,
            } => {
                let fv = val(f);
                let frames = real::<F>(fv.nrows() as f64);
                let grow = g.row(0);
                if needs(f) {
                    let mut df = Array2::zeros(fv.raw_dim());
                    for (mut row, &w) in df.axis_iter_mut(Axis(0)).zip(weights) {
                        row.scaled_add(w / frames, &grow);
                    }
                    accumulate(grads, *f, df);
                }
                if !*detach && needs(d) {
                    let dv = val(d);
                    let mut dd = Array2::zeros(dv.raw_dim());
                    for (j, mut row) in dd.axis_iter_mut(Axis(0)).enumerate() {
                        let dw = fv.row(j).dot(&grow) / frames;
                        for (o, &p) in row.iter_mut().zip(dv.row(j)) {
                            // w = 2 - H, so dw/dp = -dH/dp
                            *o = -dw * entropy_grad(p);
                        }
                    }
                    accumulate(grads, *d, dd);
                }
            }
            Op::AttentiveEntropy { y, d, detach } => {
                let (yv, dv) = (val(y), val(d));
                let scale = g[[0, 0]] / real::<F>(yv.nrows() as f64);
                if needs(y) {
                    let mut dy = Array2::zeros(yv.raw_dim());
                    for (j, mut row) in dy.axis_iter_mut(Axis(0)).enumerate() {
                        let attn = entropy_unchecked(dv.row(j)) + F::one();
                        for (o, &p) in row.iter_mut().zip(yv.row(j)) {
                            *o = scale * attn * entropy_grad(p);
                        }
                    }
                    accumulate(grads, *y, dy);
                }
                if !*detach && needs(d) {
                    let mut dd = Array2::zeros(dv.raw_dim());
                    for (j, mut row) in dd.axis_iter_mut(Axis(0)).enumerate() {
                        let hy = entropy_unchecked(yv.row(j));
                        for (o, &p) in row.iter_mut().zip(dv.row(j)) {
                            *o = scale * hy * entropy_grad(p);
                        }
                    }
                    accumulate(grads, *d, dd);
                }
            }
        }
        Ok(())
    }
}
