use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// How the retained frames of a partially labelled video are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskMode {
    /// Frames `floor(i T / n)`, `i = 0..n`: deterministic, evenly spread.
    #[default]
    Stride,
    /// `n` frames sampled without replacement from the seed.
    Iid,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stride" => Ok(MaskMode::Stride),
            "iid" => Ok(MaskMode::Iid),
            _ => Err(Error::Config(format!("unknown mask mode {s:?} (stride|iid)"))),
        }
    }
}

/// Number of labelled frames kept out of `frames` at `fraction`.
pub fn retained_count(frames: usize, fraction: f64) -> usize {
    // the epsilon guards against 0.65 * 100 = 65.00000000000001 rounding up
    let exact = fraction * frames as f64;
    let n = (exact - 1e-9 * exact.max(1.0)).ceil().max(0.0) as usize;
    n.clamp(1, frames)
}

/// `true` marks a frame whose label may be used for supervision.
pub fn make_label_mask(frames: usize, fraction: f64, seed: u64, mode: MaskMode) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("labelled fraction {fraction} not in (0, 1]")));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("cannot mask an empty video".into()));
    }
    let n = retained_count(frames, fraction);
    let mut mask = vec![false; frames];
    match mode {
        MaskMode::Stride => {
            for i in 0..n {
                mask[i * frames / n] = true;
            }
        }
        MaskMode::Iid => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in rand::seq::index::sample(&mut rng, frames, n) {
                mask[i] = true;
            }
        }
    }
    Ok(mask)
}

/// Stable per-video seed derived from a base seed and the video id (FNV-1a).
pub fn video_seed(base: u64, video_id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base;
    for b in video_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
