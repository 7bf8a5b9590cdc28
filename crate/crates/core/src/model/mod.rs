//! Multi-stage dilated temporal convolutional backbone plus the frame-level
//! and sequence-level domain classifier heads.

mod params;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use params::{Bound, Param, ParamId, ParamStore};

use crate::numerics::{Real, Tape, Var};
use crate::sstda::permutation_count;
use crate::{Error, Result};

/// Shape of one single-stage network.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StageConfig {
    pub layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub num_classes: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            layers: 10,
            filters: 64,
            kernel: 3,
            num_classes: 2,
        }
    }
}

impl StageConfig {
    /// Dilation of residual layer `l` (zero-based).
    pub fn dilation(&self, layer: usize) -> usize {
        1usize << layer
    }

    /// Frames visible to one output frame of a single stage.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * ((1usize << self.layers) - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub num_stages: usize,
    /// One-based indices of the stages carrying domain heads, ascending.
    pub da_stages: Vec<usize>,
    pub stage: StageConfig,
    pub input_dim: usize,
    /// Segments per video for sequential domain prediction.
    pub segment_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_stages: 4,
            da_stages: vec![2, 3],
            stage: StageConfig::default(),
            input_dim: 2048,
            segment_count: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.stage;
        if self.num_stages < 1 || s.layers < 1 || s.filters < 1 || self.input_dim < 1 {
            return Err(Error::Config(
                "stages, layers, filters and input_dim must all be at least 1".into(),
            ));
        }
        if s.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if s.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {} is not odd", s.kernel)));
        }
        if s.layers >= usize::BITS as usize - 1 {
            return Err(Error::Config(format!("{} layers is too many", s.layers)));
        }
        if self.segment_count < 1 || self.segment_count > 16 {
            return Err(Error::Config("segment_count must be in 1..=16".into()));
        }
        let mut prev = 0;
        for &st in &self.da_stages {
            if st < 1 || st > self.num_stages || st <= prev {
                return Err(Error::Config(format!(
                    "da_stages {:?} must be ascending within 1..={}",
                    self.da_stages, self.num_stages
                )));
            }
            prev = st;
        }
        Ok(())
    }

    /// Number of scalar parameters implied by the configuration:
    ///
    /// - stage input: `Din * F + F` (`Din = D` for stage 1, `C` afterwards)
    /// - per residual layer: `k * F * F + F` (dilated) plus `F * F + F` (1x1)
    /// - stage head: `F * C + C`
    /// - frame domain head per adapted stage: `F * F + F + 2 * F + 2`
    /// - sequence domain head per adapted stage: `2m * F * F + F + F * P + P`
    pub fn parameter_count(&self) -> usize {
        let s = &self.stage;
        let (f, c, k) = (s.filters, s.num_classes, s.kernel);
        let body = s.layers * (k * f * f + f + f * f + f) + f * c + c;
        let stages: usize = (0..self.num_stages)
            .map(|i| {
                let din = if i == 0 { self.input_dim } else { c };
                din * f + f + body
            })
            .sum();
        let p = permutation_count(self.segment_count) as usize;
        let m2 = 2 * self.segment_count;
        let heads = (f * f + f + 2 * f + 2) + (m2 * f * f + f + f * p + p);
        stages + self.da_stages.len() * heads
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        tape.pointwise_conv(x, bound.var(self.weight), bound.var(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct ResidualLayer {
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub dilation: usize,
    pub proj: Linear,
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub input: Linear,
    pub layers: Vec<ResidualLayer>,
    pub head: Linear,
}

/// Frame-level binary domain classifier: `F -> F -> relu -> 2`.
#[derive(Clone, Debug)]
pub struct LocalDomainHead {
    pub hidden: Linear,
    pub out: Linear,
}

/// Sequence-level domain-permutation classifier: `2mF -> F -> relu -> P`.
#[derive(Clone, Debug)]
pub struct SequentialDomainHead {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct DomainHeads {
    /// One-based stage index.
    pub stage: usize,
    pub local: LocalDomainHead,
    pub sequential: SequentialDomainHead,
}

/// Per-stage forward results.
#[derive(Clone, Copy, Debug)]
pub struct StageOutput {
    /// `T x filters` activations feeding the prediction head.
    pub features: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    stages: Vec<Stage>,
    heads: Vec<DomainHeads>,
}

struct Builder<'a, F> {
    params: ParamStore<F>,
    rng: &'a mut ChaCha8Rng,
}

impl<F: Real> Builder<'_, F> {
    /// Weight uniform in `+-1/sqrt(fan_in)`; bias zero.
    fn weight(&mut self, name: String, rows: usize, fan_in: usize) -> (ParamId, ParamId) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let w = Array2::from_shape_fn((rows, fan_in), |_| {
            F::from_f64_lossy(rng.random_range(-bound..bound))
        });
        let wid = self.params.add(format!("{name}.weight"), w);
        let bid = self.params.add(format!("{name}.bias"), Array2::zeros((1, rows)));
        (wid, bid)
    }

    fn linear(&mut self, name: String, cin: usize, cout: usize) -> Linear {
        let (weight, bias) = self.weight(name, cout, cin);
        Linear { weight, bias }
    }
}

impl<F: Real> Model<F> {
    /// Builds a model with seeded uniform initialisation.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamStore::new(),
            rng: &mut rng,
        };
        let sc = &config.stage;
        let (f, c, k) = (sc.filters, sc.num_classes, sc.kernel);
        let mut stages = Vec::with_capacity(config.num_stages);
        for s in 0..config.num_stages {
            let din = if s == 0 { config.input_dim } else { c };
            let input = b.linear(format!("stage{}.input", s + 1), din, f);
            let layers = (0..sc.layers)
                .map(|l| {
                    let (conv_weight, conv_bias) =
                        b.weight(format!("stage{}.layer{l}.conv", s + 1), f, k * f);
                    let proj = b.linear(format!("stage{}.layer{l}.proj", s + 1), f, f);
                    ResidualLayer {
                        conv_weight,
                        conv_bias,
                        dilation: sc.dilation(l),
                        proj,
                    }
                })
                .collect();
            let head = b.linear(format!("stage{}.head", s + 1), f, c);
            stages.push(Stage { input, layers, head });
        }
        let perms = permutation_count(config.segment_count) as usize;
        let heads = config
            .da_stages
            .iter()
            .map(|&st| DomainHeads {
                stage: st,
                local: LocalDomainHead {
                    hidden: b.linear(format!("stage{st}.local.hidden"), f, f),
                    out: b.linear(format!("stage{st}.local.out"), f, 2),
                },
                sequential: SequentialDomainHead {
                    hidden: b.linear(
                        format!("stage{st}.sequential.hidden"),
                        2 * config.segment_count * f,
                        f,
                    ),
                    out: b.linear(format!("stage{st}.sequential.out"), f, perms),
                },
            })
            .collect();
        let params = b.params;
        Ok(Model {
            config,
            params,
            stages,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn domain_heads(&self) -> &[DomainHeads] {
        &self.heads
    }

    /// Domain heads attached to the one-based stage `stage`.
    pub fn heads_for(&self, stage: usize) -> Option<&DomainHeads> {
        self.heads.iter().find(|h| h.stage == stage)
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> Result<Bound> {
        self.params.bind(tape)
    }

    /// Same architecture, parameters cast to another precision.
    pub fn convert<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.convert(),
            stages: self.stages.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Input projection, dilated residual layers, then the class head.
    pub fn stage_forward(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        stage: usize,
        input: Var,
    ) -> Result<StageOutput> {
        let st = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::InvalidArgument(format!("no stage {stage}")))?;
        let mut h = st.input.forward(tape, bound, input)?;
        for layer in &st.layers {
            let c = tape.dilated_conv1d(
                h,
                bound.var(layer.conv_weight),
                bound.var(layer.conv_bias),
                layer.dilation,
            )?;
            let c = tape.relu(c);
            let c = layer.proj.forward(tape, bound, c)?;
            h = tape.add(h, c)?;
        }
        let logits = st.head.forward(tape, bound, h)?;
        let probs = tape.softmax_rows(logits);
        Ok(StageOutput {
            features: h,
            logits,
            probs,
        })
    }

    /// Runs every stage; stage `s > 1` consumes the probabilities of stage `s - 1`.
    pub fn forward(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Vec<StageOutput>> {
        let d = tape.shape(x).1;
        if d != self.config.input_dim {
            return Err(Error::Shape(format!(
                "input has {d} channels, model expects {}",
                self.config.input_dim
            )));
        }
        let mut outputs: Vec<StageOutput> = Vec::with_capacity(self.stages.len());
        for s in 0..self.stages.len() {
            let input = outputs.last().map_or(x, |o| o.probs);
            outputs.push(self.stage_forward(tape, bound, s, input)?);
        }
        Ok(outputs)
    }

    /// Per-frame two-class domain logits from stage features.
    pub fn local_domain_classifier(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        heads: &DomainHeads,
        features: Var,
    ) -> Result<Var> {
        let h = heads.local.hidden.forward(tape, bound, features)?;
        let h = tape.relu(h);
        heads.local.out.forward(tape, bound, h)
    }

    /// Permutation logits (`1 x P`) from a `1 x 2mF` concatenation of pooled
    /// segment features.
    pub fn sequential_domain_classifier(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        heads: &DomainHeads,
        concat: Var,
    ) -> Result<Var> {
        let expected = 2 * self.config.segment_count * self.config.stage.filters;
        if tape.shape(concat) != (1, expected) {
            return Err(Error::Shape(format!(
                "sequential domain input is {:?}, expected (1, {expected})",
                tape.shape(concat)
            )));
        }
        let h = heads.sequential.hidden.forward(tape, bound, concat)?;
        let h = tape.relu(h);
        heads.sequential.out.forward(tape, bound, h)
    }
}

/// Index of the highest probability in each row, ties to the lowest class.
pub fn argmax_rows<F: Real>(probs: &Array2<F>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small(stages: usize, layers: usize, filters: usize, classes: usize, dim: usize) -> ModelConfig {
        ModelConfig {
            num_stages: stages,
            da_stages: if stages >= 2 { vec![2] } else { vec![] },
            stage: StageConfig {
                layers,
                filters,
                kernel: 3,
                num_classes: classes,
            },
            input_dim: dim,
            segment_count: 2,
        }
    }

    fn zero_all(model: &mut Model<f64>) {
        for p in model.params_mut().iter_mut() {
            p.value.fill(0.0);
        }
    }

    #[test]
    fn stage_shapes() {
        let mut cfg = small(1, 10, 64, 3, 8);
        cfg.da_stages.clear();
        let model = Model::<f64>::new(cfg, 0).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let x = tape.constant(Array2::ones((5, 8))).unwrap();
        let out = model.stage_forward(&mut tape, &bound, 0, x).unwrap();
        assert_eq!(tape.shape(out.features), (5, 64));
        assert_eq!(tape.shape(out.logits), (5, 3));
    }

    #[test]
    fn zero_weights_give_uniform_predictions() {
        let mut model = Model::<f64>::new(small(2, 2, 4, 3, 5), 1).unwrap();
        zero_all(&mut model);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let x = tape.constant(Array2::from_elem((6, 5), 0.7)).unwrap();
        let outs = model.forward(&mut tape, &bound, x).unwrap();
        for o in &outs {
            assert!(tape.value(o.logits).iter().all(|&v| v == 0.0));
            assert!(tape.value(o.probs).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
        let heads = &model.domain_heads()[0];
        let d = model
            .local_domain_classifier(&mut tape, &bound, heads, outs[1].features)
            .unwrap();
        assert_eq!(tape.shape(d), (6, 2));
        assert!(tape.value(d).iter().all(|&v| v == 0.0));
        let v = tape.constant(Array2::ones((1, 16))).unwrap();
        let p = model
            .sequential_domain_classifier(&mut tape, &bound, heads, v)
            .unwrap();
        assert_eq!(tape.shape(p), (1, 6));
        assert!(tape.value(p).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_returns_one_output_per_stage() {
        let model = Model::<f64>::new(small(4, 2, 4, 3, 5), 2).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let x = tape.constant(Array2::ones((9, 5))).unwrap();
        let outs = model.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(outs.len(), 4);
        for o in outs {
            assert_eq!(tape.shape(o.probs), (9, 3));
        }
        let bad = tape.constant(Array2::ones((9, 4))).unwrap();
        assert!(model.forward(&mut tape, &bound, bad).is_err());
    }

    #[test]
    fn single_stage_model_equals_stage_forward() {
        let mut cfg = small(1, 3, 4, 3, 5);
        cfg.da_stages.clear();
        let model = Model::<f64>::new(cfg, 3).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let x = tape
            .constant(Array2::from_shape_fn((7, 5), |(t, c)| (t * 5 + c) as f64 * 0.1))
            .unwrap();
        let outs = model.forward(&mut tape, &bound, x).unwrap();
        let direct = model.stage_forward(&mut tape, &bound, 0, x).unwrap();
        assert_eq!(tape.value(outs[0].logits), tape.value(direct.logits));
    }

    #[test]
    fn zeroed_later_stage_is_constant_in_time() {
        let mut model = Model::<f64>::new(small(2, 2, 4, 3, 5), 4).unwrap();
        let ids: Vec<usize> = model
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with("stage2.") && p.name.ends_with(".weight"))
            .map(|(i, _)| i)
            .collect();
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            if ids.contains(&i) {
                p.value.fill(0.0);
            } else if p.name.starts_with("stage2.") {
                p.value.fill(0.25);
            }
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let x = tape
            .constant(Array2::from_shape_fn((8, 5), |(t, c)| ((t * 3 + c) % 7) as f64))
            .unwrap();
        let outs = model.forward(&mut tape, &bound, x).unwrap();
        let l = tape.value(outs[1].logits);
        for row in l.rows() {
            assert_eq!(row, l.row(0));
        }
    }

    #[test]
    fn every_weight_receives_gradient() {
        let model = Model::<f64>::new(small(3, 3, 4, 3, 5), 5).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        let x = tape
            .constant(Array2::from_shape_fn((10, 5), |(t, c)| ((t + 2 * c) as f64).sin()))
            .unwrap();
        let outs = model.forward(&mut tape, &bound, x).unwrap();
        let targets: Vec<usize> = (0..10).map(|t| t % 3).collect();
        let terms: Vec<(Var, f64)> = outs
            .iter()
            .map(|o| (tape.cross_entropy(o.logits, &targets, None).unwrap(), 1.0))
            .collect();
        let loss = tape.weighted_sum(&terms).unwrap();
        tape.backward(loss).unwrap();
        let grads = bound.grads(&tape);
        for (p, g) in model.params().iter().zip(&grads) {
            if p.name.contains("local") || p.name.contains("sequential") {
                continue;
            }
            if p.name.ends_with(".weight") {
                assert!(g.iter().any(|&v| v != 0.0), "{} has no gradient", p.name);
            }
        }
    }

    #[test]
    fn parameter_count_matches_formula() {
        let cfg = ModelConfig {
            stage: StageConfig {
                num_classes: 11,
                ..StageConfig::default()
            },
            ..ModelConfig::default()
        };
        let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.params().scalar_count(), cfg.parameter_count());
        // explicit arithmetic for the default four-stage, ten-layer network:
        // stage body = 10 * (3*64*64 + 64 + 64*64 + 64) + 64*11 + 11 = 165_835
        // stage 1 input = 2048*64 + 64, later inputs = 11*64 + 64
        // heads per adapted stage = (64*64+64+128+2) + (4*64*64+64+64*6+6)
        let body = 165_835;
        let stages = (2048 * 64 + 64 + body) + 3 * (11 * 64 + 64 + body);
        let heads = 2 * ((64 * 64 + 64 + 128 + 2) + (4 * 64 * 64 + 64 + 64 * 6 + 6));
        assert_eq!(cfg.parameter_count(), stages + heads);
    }

    #[test]
    fn receptive_field_of_ten_layers() {
        assert_eq!(StageConfig::default().receptive_field(), 2047);
    }

    #[test]
    fn receptive_field_by_perturbation() {
        for layers in 1..=4 {
            let cfg = StageConfig {
                layers,
                filters: 8,
                kernel: 3,
                num_classes: 2,
            };
            let mut mc = small(1, layers, 8, 2, 2);
            mc.da_stages.clear();
            let model = Model::<f64>::new(mc, 9).unwrap();
            let frames = 2 * cfg.receptive_field() + 5;
            let centre = frames / 2;
            let run = |x: Array2<f64>| {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape).unwrap();
                let x = tape.constant(x).unwrap();
                let o = model.stage_forward(&mut tape, &bound, 0, x).unwrap();
                tape.value(o.logits).clone()
            };
            let base = Array2::from_shape_fn((frames, 2), |(t, c)| ((t * 7 + c * 3) % 5) as f64 * 0.3);
            let mut bumped = base.clone();
            bumped[[centre, 0]] += 1.0;
            bumped[[centre, 1]] -= 2.0;
            let (a, b) = (run(base), run(bumped));
            let changed: Vec<usize> = (0..frames)
                .filter(|&t| a.row(t) != b.row(t))
                .collect();
            assert_eq!(changed.len(), cfg.receptive_field(), "layers={layers}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(2, 2, 4, 3, 5);
        cfg.da_stages = vec![3];
        assert!(Model::<f64>::new(cfg.clone(), 0).is_err());
        cfg.da_stages = vec![2];
        cfg.stage.kernel = 4;
        assert!(Model::<f64>::new(cfg, 0).is_err());
    }

    #[test]
    fn argmax_ties_go_to_lowest_class() {
        let p = ndarray::array![[0.25, 0.25, 0.5], [0.5, 0.5, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        assert_eq!(argmax_rows(&p), vec![2, 0, 0]);
    }

    #[test]
    fn later_stage_parameters_do_not_affect_stage_one() {
        let model = Model::<f64>::new(small(3, 2, 4, 3, 5), 6).unwrap();
        let mut other = model.clone();
        for p in other.params_mut().iter_mut() {
            if !p.name.starts_with("stage1.") {
                p.value.mapv_inplace(|v| v * -3.0 + 0.5);
            }
        }
        let x0 = Array2::from_shape_fn((9, 5), |(t, c)| (t as f64 - c as f64) * 0.2);
        let run = |m: &Model<f64>| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape).unwrap();
            let x = tape.constant(x0.clone()).unwrap();
            let outs = m.forward(&mut tape, &bound, x).unwrap();
            tape.value(outs[0].logits).clone()
        };
        assert_eq!(run(&model), run(&other));
    }
}
