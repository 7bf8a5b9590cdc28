//! The per-step training graph for one source/target video pair.

use ndarray::Array2;
use rand::Rng;

use super::config::{EntropyScope, Mode};
use crate::model::{Bound, Model};
use crate::numerics::{real, Real, Tape, Var};
use crate::sstda::{
    attentive_entropy_loss, global_domain_loss, local_domain_loss, pool_segments, prediction_loss,
    shuffle_segments, total_loss, DomainTerms, LossWeights,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectiveOptions {
    pub mode: Mode,
    pub detach_attention: bool,
    pub entropy_scope: EntropyScope,
    /// When false the domain heads see the features through a plain identity
    /// instead of gradient reversal. Only useful for checking the whole
    /// objective against finite differences.
    pub reverse_gradients: bool,
}

/// One labelled source video and, for adapted modes, one target video.
#[derive(Clone, Copy, Debug)]
pub struct PairInput<'a, F> {
    pub source: &'a Array2<F>,
    pub labels: &'a [usize],
    pub mask: Option<&'a [bool]>,
    pub target: Option<&'a Array2<F>>,
}

/// Tape handles of every loss term of one step.
#[derive(Clone, Debug)]
pub struct Objective {
    pub loss: Var,
    /// Per stage.
    pub prediction: Vec<Var>,
    /// Per adapted stage.
    pub local: Vec<Var>,
    pub global: Vec<Var>,
    pub entropy: Vec<Var>,
    /// Permutation class drawn for each adapted stage.
    pub permutation_labels: Vec<usize>,
}

pub fn build_objective<F: Real, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    bound: &Bound,
    weights: &LossWeights,
    opts: &ObjectiveOptions,
    input: &PairInput<'_, F>,
    perm_rng: &mut R,
) -> Result<Objective> {
    let cfg = model.config();
    let xs = tape.constant(input.source.clone())?;
    let src = model.forward(tape, bound, xs)?;
    let alpha = real::<F>(weights.alpha);
    let prediction = src
        .iter()
        .map(|o| prediction_loss(tape, o.logits, input.labels, input.mask, alpha))
        .collect::<Result<Vec<_>>>()?;

    let mut obj = Objective {
        loss: prediction[0],
        prediction,
        local: Vec::new(),
        global: Vec::new(),
        entropy: Vec::new(),
        permutation_labels: Vec::new(),
    };
    let mut domain = Vec::new();
    if opts.mode != Mode::SourceOnly {
        let target = input
            .target
            .ok_or_else(|| Error::InvalidArgument(format!("{} mode needs a target video", opts.mode)))?;
        let xt = tape.constant(target.clone())?;
        let tgt = model.forward(tape, bound, xt)?;
        let lambda = real::<F>(weights.grl_lambda);
        for heads in model.domain_heads() {
            let s = heads.stage - 1;
            let (fs, ft) = if opts.reverse_gradients {
                (
                    tape.gradient_reverse(src[s].features, lambda)?,
                    tape.gradient_reverse(tgt[s].features, lambda)?,
                )
            } else {
                (src[s].features, tgt[s].features)
            };
            let ls = model.local_domain_classifier(tape, bound, heads, fs)?;
            let lt = model.local_domain_classifier(tape, bound, heads, ft)?;
            let local = local_domain_loss(tape, ls, lt)?;
            let ds = tape.softmax_rows(ls);
            let dt = tape.softmax_rows(lt);

            let global = if opts.mode == Mode::Full {
                let m = cfg.segment_count;
                let ps = pool_segments(tape, fs, ds, m, opts.detach_attention)?;
                let pt = pool_segments(tape, ft, dt, m, opts.detach_attention)?;
                let (joined, label) = shuffle_segments(tape, &ps, &pt, perm_rng)?;
                let logits = model.sequential_domain_classifier(tape, bound, heads, joined)?;
                obj.permutation_labels.push(label.class_index);
                Some(global_domain_loss(tape, logits, label.class_index)?)
            } else {
                None
            };

            let et = attentive_entropy_loss(tape, tgt[s].probs, dt, opts.detach_attention)?;
            let entropy = match opts.entropy_scope {
                EntropyScope::Target => et,
                EntropyScope::Both => {
                    let es = attentive_entropy_loss(tape, src[s].probs, ds, opts.detach_attention)?;
                    // frame-weighted, i.e. the mean over both videos' frames
                    let (ns, nt) = (input.source.nrows() as f64, target.nrows() as f64);
                    tape.weighted_sum(&[
                        (es, real::<F>(ns / (ns + nt))),
                        (et, real::<F>(nt / (ns + nt))),
                    ])?
                }
            };

            obj.local.push(local);
            obj.global.extend(global);
            obj.entropy.push(entropy);
            domain.push(DomainTerms {
                local,
                global,
                entropy: Some(entropy),
            });
        }
    }
    obj.loss = total_loss(tape, &obj.prediction, &domain, weights, cfg.num_stages)?;
    Ok(obj)
}
