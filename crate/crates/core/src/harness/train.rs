use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Mode, TrainConfig};
use super::objective::{build_objective, ObjectiveOptions, PairInput};
use super::optim::Adam;
use crate::data::{make_label_mask, video_seed, Video};
use crate::model::{Model, ModelConfig};
use crate::numerics::Tape;
use crate::{Error, Result};

const PAIR_STREAM: u64 = 1;
const PERM_STREAM: u64 = 2;

/// Scalar value of every loss term of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub total: f64,
    pub prediction: Vec<f64>,
    pub local: Vec<f64>,
    pub global: Vec<f64>,
    pub entropy: Vec<f64>,
    pub permutation_labels: Vec<usize>,
}

/// Optimiser, progress and random streams of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub total_steps: u64,
    pub adam: Adam<f32>,
    pair_rng: ChaCha8Rng,
    perm_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &Model<f32>, cfg: &TrainConfig, total_steps: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(s);
            r
        };
        TrainState {
            step: 0,
            total_steps: total_steps.max(1),
            adam: Adam::new(model.params(), cfg.learning_rate),
            pair_rng: stream(PAIR_STREAM),
            perm_rng: stream(PERM_STREAM),
        }
    }

    /// Fraction of the run completed before the current step, in `[0, 1]`.
    pub fn progress(&self) -> f64 {
        (self.step as f64 / self.total_steps as f64).min(1.0)
    }
}

fn options(cfg: &TrainConfig) -> ObjectiveOptions {
    ObjectiveOptions {
        mode: cfg.mode,
        detach_attention: cfg.detach_attention,
        entropy_scope: cfg.entropy_scope,
        reverse_gradients: true,
    }
}

/// Loss terms and parameter gradients at progress `p`, without updating anything.
pub fn compute_gradients<R: Rng + ?Sized>(
    model: &Model<f32>,
    cfg: &TrainConfig,
    p: f64,
    source: &Video,
    mask: Option<&[bool]>,
    target: &Video,
    perm_rng: &mut R,
) -> Result<(StepLosses, Vec<Array2<f32>>)> {
    let weights = cfg.weights_at(p);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let input = PairInput {
        source: &source.features,
        labels: &source.labels,
        mask,
        target: (cfg.mode != Mode::SourceOnly).then_some(&target.features),
    };
    let obj = build_objective(&mut tape, model, &bound, &weights, &options(cfg), &input, perm_rng)?;
    let value = |vs: &[crate::Var]| vs.iter().map(|&v| f64::from(tape.scalar(v))).collect::<Vec<_>>();
    let losses = StepLosses {
        total: f64::from(tape.scalar(obj.loss)),
        prediction: value(&obj.prediction),
        local: value(&obj.local),
        global: value(&obj.global),
        entropy: value(&obj.entropy),
        permutation_labels: obj.permutation_labels.clone(),
    };
    if !losses.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss on source {} / target {}: {losses:?}",
            source.id, target.id
        )));
    }
    tape.backward(obj.loss)?;
    Ok((losses, bound.grads(&tape)))
}

/// One optimiser step on a source/target pair.
pub fn train_step(
    model: &mut Model<f32>,
    state: &mut TrainState,
    cfg: &TrainConfig,
    source: &Video,
    mask: Option<&[bool]>,
    target: &Video,
) -> Result<StepLosses> {
    let p = state.progress();
    let (losses, grads) = compute_gradients(model, cfg, p, source, mask, target, &mut state.perm_rng)?;
    state
        .adam
        .step(model.params_mut(), &grads)
        .map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {}: {m}", state.step)),
            other => other,
        })?;
    state.step += 1;
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: usize,
    pub progress: f64,
    pub source: String,
    pub target: String,
    pub beta_l: f64,
    pub beta_g: f64,
    pub grl_lambda: f64,
    pub losses: StepLosses,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }

    /// Sum of the per-stage prediction losses of every step.
    pub fn prediction_losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.losses.prediction.iter().sum()).collect()
    }
}

/// Model architecture for a corpus: `cfg.model` with the input dimension and
/// class count taken from the data.
pub fn model_config_for(cfg: &TrainConfig, input_dim: usize, num_classes: usize) -> ModelConfig {
    let mut m = cfg.model.clone();
    m.input_dim = input_dim;
    m.stage.num_classes = num_classes;
    m
}

/// Optimiser steps in one epoch.
pub fn steps_per_epoch(cfg: &TrainConfig, sources: usize, targets: usize) -> usize {
    sources.max(cfg.target_reload * targets)
}

/// Source order for one epoch: seeded shuffles, repeated when the epoch is
/// longer than the source split.
fn epoch_order<R: Rng + ?Sized>(rng: &mut R, sources: usize, steps: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(steps + sources);
    while order.len() < steps {
        let mut pass: Vec<usize> = (0..sources).collect();
        pass.shuffle(rng);
        order.extend(pass);
    }
    order.truncate(steps);
    order
}

/// Labelled-frame masks of the source videos, `None` when every frame is kept.
pub fn source_masks(cfg: &TrainConfig, source: &[&Video]) -> Result<Vec<Option<Vec<bool>>>> {
    source
        .iter()
        .map(|v| {
            if cfg.labeled_fraction >= 1.0 {
                return Ok(None);
            }
            let seed = video_seed(cfg.seed, &v.id);
            make_label_mask(v.frames(), cfg.labeled_fraction, seed, cfg.mask_mode).map(Some)
        })
        .collect()
}

/// Trains a fresh model, calling `on_step` after every optimiser step.
pub fn train_with(
    source: &[&Video],
    target: &[&Video],
    num_classes: usize,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogEntry),
) -> Result<(Model<f32>, TrainLog)> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Dataset(format!(
            "training needs nonempty splits ({} source, {} target videos)",
            source.len(),
            target.len()
        )));
    }
    let dim = source[0].features.ncols();
    if let Some(v) = source.iter().chain(target).find(|v| v.features.ncols() != dim) {
        return Err(Error::Dataset(format!("video {} has feature dimension {}, expected {dim}", v.id, v.features.ncols())));
    }
    if let Some(v) = source.iter().find(|v| v.labels.iter().any(|&l| l >= num_classes)) {
        return Err(Error::Dataset(format!("video {} has labels outside 0..{num_classes}", v.id)));
    }
    let m = cfg.model.segment_count;
    if let Some(v) = source.iter().chain(target).find(|v| v.frames() < m) {
        return Err(Error::Dataset(format!("video {} is shorter than {m} segments", v.id)));
    }
    let mut model = Model::<f32>::new(model_config_for(cfg, dim, num_classes), cfg.seed)?;
    let masks = source_masks(cfg, source)?;
    let per_epoch = steps_per_epoch(cfg, source.len(), target.len());
    let total = (per_epoch * cfg.epochs) as u64;
    let mut state = TrainState::new(&model, cfg, total);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut state.pair_rng, source.len(), per_epoch);
        for si in order {
            let ti = state.pair_rng.random_range(0..target.len());
            let p = state.progress();
            let w = cfg.weights_at(p);
            let step = state.step;
            let losses = train_step(&mut model, &mut state, cfg, source[si], masks[si].as_deref(), target[ti])?;
            let entry = LogEntry {
                step,
                epoch,
                progress: p,
                source: source[si].id.clone(),
                target: target[ti].id.clone(),
                beta_l: w.beta_l,
                beta_g: w.beta_g,
                grl_lambda: w.grl_lambda,
                losses,
            };
            on_step(&entry);
            log.entries.push(entry);
        }
    }
    Ok((model, log))
}

pub fn train(
    source: &[&Video],
    target: &[&Video],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainLog)> {
    train_with(source, target, num_classes, cfg, |_| {})
}
