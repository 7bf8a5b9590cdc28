//! Synthetic two-domain segmentation corpora with a controllable shift.
//!
//! Each class has a mean vector drawn independently in two halves of the
//! feature space, so the class is readable from either half. The target
//! domain applies an invertible linear map plus bias to the first
//! `shift_dims` dimensions (pairwise rotations and a uniform scale) and
//! stretches every action duration. A classifier that leans on the shifted
//! half degrades on the target; one whose features ignore the domain does not.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::text::{parse_key_values, parse_value, read_key_values};
use super::{ClassMap, Dataset, Video};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub source_videos: usize,
    pub target_videos: usize,
    /// Actions per video.
    pub script_length: usize,
    /// Inclusive source-domain action duration range, in frames.
    pub duration_min: usize,
    pub duration_max: usize,
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Standard deviation of class-mean entries.
    pub separation: f64,
    /// Leading dimensions touched by the target transform (rounded down to even).
    pub shift_dims: usize,
    /// Rotation angle in radians applied to each consecutive dimension pair.
    pub shift_angle: f64,
    pub shift_scale: f64,
    /// Norm of the bias added to the shifted dimensions.
    pub shift_bias: f64,
    /// Target durations are source durations times this factor.
    pub duration_factor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 6,
            feature_dim: 16,
            source_videos: 20,
            target_videos: 10,
            script_length: 6,
            duration_min: 10,
            duration_max: 30,
            noise: 1.0,
            separation: 1.0,
            shift_dims: 8,
            // severe enough that a source-only model loses about ten points
            // on the target domain, mild enough that adaptation can recover
            shift_angle: 0.6,
            shift_scale: 1.2,
            shift_bias: 2.5,
            duration_factor: 1.5,
        }
    }
}

impl SynthConfig {
    /// Same corpus shape with no feature or duration shift.
    pub fn identity_shift(&self) -> Self {
        SynthConfig {
            shift_angle: 0.0,
            shift_scale: 1.0,
            shift_bias: 0.0,
            duration_factor: 1.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be at least 1".into());
        }
        if self.source_videos < 1 || self.target_videos < 1 || self.script_length < 1 {
            return bad("video counts and script_length must be at least 1".into());
        }
        if self.duration_min < 1 || self.duration_max < self.duration_min {
            return bad(format!(
                "duration range {}..={} must be positive and ordered",
                self.duration_min, self.duration_max
            ));
        }
        if self.shift_dims > self.feature_dim {
            return bad(format!("shift_dims {} exceeds feature_dim", self.shift_dims));
        }
        let finite = [
            self.noise,
            self.separation,
            self.shift_angle,
            self.shift_scale,
            self.shift_bias,
            self.duration_factor,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.noise < 0.0 || self.separation < 0.0 {
            return bad("noise and separation must be finite and nonnegative".into());
        }
        if self.shift_scale == 0.0 {
            return bad("shift_scale 0 makes the transform singular".into());
        }
        if self.duration_factor <= 0.0 {
            return bad("duration_factor must be positive".into());
        }
        Ok(())
    }

    /// Applies `key = value` overrides on top of `self`.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            match k.as_str() {
                "num_classes" => self.num_classes = parse_value(k, v)?,
                "feature_dim" => self.feature_dim = parse_value(k, v)?,
                "source_videos" => self.source_videos = parse_value(k, v)?,
                "target_videos" => self.target_videos = parse_value(k, v)?,
                "script_length" => self.script_length = parse_value(k, v)?,
                "duration_min" => self.duration_min = parse_value(k, v)?,
                "duration_max" => self.duration_max = parse_value(k, v)?,
                "noise" => self.noise = parse_value(k, v)?,
                "separation" => self.separation = parse_value(k, v)?,
                "shift_dims" => self.shift_dims = parse_value(k, v)?,
                "shift_angle" => self.shift_angle = parse_value(k, v)?,
                "shift_scale" => self.shift_scale = parse_value(k, v)?,
                "shift_bias" => self.shift_bias = parse_value(k, v)?,
                "duration_factor" => self.duration_factor = parse_value(k, v)?,
                _ => return Err(Error::Config(format!("unknown synthetic config key {k:?}"))),
            }
        }
        self.validate()
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut c = SynthConfig::default();
        c.apply(&parse_key_values(bytes, path)?)?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut c = SynthConfig::default();
        c.apply(&read_key_values(path)?)?;
        Ok(c)
    }

    pub fn render(&self) -> String {
        format!(
            "num_classes = {}\nfeature_dim = {}\nsource_videos = {}\ntarget_videos = {}\n\
             script_length = {}\nduration_min = {}\nduration_max = {}\nnoise = {}\n\
             separation = {}\nshift_dims = {}\nshift_angle = {}\nshift_scale = {}\n\
             shift_bias = {}\nduration_factor = {}\n",
            self.num_classes,
            self.feature_dim,
            self.source_videos,
            self.target_videos,
            self.script_length,
            self.duration_min,
            self.duration_max,
            self.noise,
            self.separation,
            self.shift_dims,
            self.shift_angle,
            self.shift_scale,
            self.shift_bias,
            self.duration_factor,
        )
    }
}

/// The target-domain affine map `x -> A x + b`.
#[derive(Clone, Debug)]
pub struct DomainTransform {
    pub matrix: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DomainTransform {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.feature_dim;
        let mut matrix = Array2::eye(d);
        let (c, s) = (cfg.shift_angle.cos(), cfg.shift_angle.sin());
        let pairs = cfg.shift_dims / 2;
        for p in 0..pairs {
            let (i, j) = (2 * p, 2 * p + 1);
            let k = cfg.shift_scale;
            matrix[[i, i]] = k * c;
            matrix[[i, j]] = -k * s;
            matrix[[j, i]] = k * s;
            matrix[[j, j]] = k * c;
        }
        // an odd leftover shifted dimension is only scaled
        if cfg.shift_dims % 2 == 1 {
            let i = cfg.shift_dims - 1;
            matrix[[i, i]] = cfg.shift_scale;
        }
        let mut dir: Array1<f64> = Array1::from_shape_fn(d, |i| {
            if i < cfg.shift_dims {
                StandardNormal.sample(rng)
            } else {
                0.0
            }
        });
        let norm = dir.dot(&dir).sqrt();
        if norm > 0.0 {
            dir *= cfg.shift_bias / norm;
        }
        DomainTransform { matrix, bias: dir }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.matrix.t()) + &self.bias
    }
}

/// Class means, the action transition chain and the target transform.
struct World {
    means: Array2<f64>,
    /// Row-stochastic with a zero diagonal.
    transitions: Array2<f64>,
    transform: DomainTransform,
}

impl World {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let (c, d) = (cfg.num_classes, cfg.feature_dim);
        let means = Array2::from_shape_fn((c, d), |_| {
            let z: f64 = StandardNormal.sample(rng);
            cfg.separation * z
        });
        let mut transitions = Array2::from_shape_fn((c, c), |(i, j)| {
            if i == j {
                0.0
            } else {
                rng.random_range(0.2..1.0)
            }
        });
        for mut row in transitions.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let transform = DomainTransform::new(cfg, rng);
        World {
            means,
            transitions,
            transform,
        }
    }

    fn script(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let c = self.means.nrows();
        let mut cur = rng.random_range(0..c);
        let mut out = vec![cur];
        for _ in 1..len {
            let u: f64 = rng.random();
            let row = self.transitions.row(cur);
            let mut acc = 0.0;
            // falls back to the last nonzero entry if rounding leaves u uncovered
            let mut next = (0..c).rev().find(|&j| row[j] > 0.0).expect("c >= 2");
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    next = j;
                    break;
                }
            }
            cur = next;
            out.push(cur);
        }
        out
    }

    fn video(&self, cfg: &SynthConfig, target: bool, id: String, rng: &mut ChaCha8Rng) -> Video {
        let script = self.script(cfg.script_length, rng);
        let factor = if target { cfg.duration_factor } else { 1.0 };
        let mut labels = Vec::new();
        for &a in &script {
            let base = rng.random_range(cfg.duration_min..=cfg.duration_max);
            let len = ((base as f64 * factor).round() as usize).max(1);
            labels.extend(std::iter::repeat_n(a, len));
        }
        let d = cfg.feature_dim;
        let mut x = Array2::from_shape_fn((labels.len(), d), |(t, j)| {
            let z: f64 = StandardNormal.sample(rng);
            self.means[[labels[t], j]] + cfg.noise * z
        });
        if target {
            x = self.transform.apply(&x);
        }
        Video {
            id,
            features: x.mapv(|v| v as f32),
            labels,
        }
    }
}

pub const SOURCE_SPLIT: &str = "source";
pub const TARGET_SPLIT: &str = "target";

fn class_map(c: usize) -> ClassMap {
    ClassMap::new((0..c).map(|i| format!("action{i}")).collect()).expect("distinct names")
}

/// Source and target datasets, each with a single split named after its domain.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = World::new(cfg, &mut rng);
    let mut build = |target: bool, count: usize, prefix: &str, split: &str| {
        let videos: Vec<Video> = (0..count)
            .map(|i| world.video(cfg, target, format!("{prefix}{i:03}"), &mut rng))
            .collect();
        let ids = videos.iter().map(|v| v.id.clone()).collect();
        Dataset::new(class_map(cfg.num_classes), videos, vec![(split.to_string(), ids)])
    };
    let source = build(false, cfg.source_videos, "src", SOURCE_SPLIT)?;
    let target = build(true, cfg.target_videos, "tgt", TARGET_SPLIT)?;
    Ok((source, target))
}

/// One dataset holding both domains, with splits `source` and `target`.
pub fn synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    let (s, t) = generate_synthetic(cfg, seed)?;
    s.merge(t)
}
