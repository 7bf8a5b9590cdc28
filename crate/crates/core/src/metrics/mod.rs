//! Frame accuracy, segmental edit score and segmental F1@k over frame-label
//! sequences.
//!
//! A predicted segment is a true positive when its best IoU against
//! same-class ground truth is strictly greater than `k/100` and that ground
//! truth segment has not been claimed by an earlier prediction. IoU
//! comparisons are done on integer frame counts, so no floating-point
//! rounding can move a segment across a threshold.

use serde::{Deserialize, Serialize, Serializer};

use crate::{Error, Result};

/// IoU thresholds (percent) reported for F1.
pub const F1_THRESHOLDS: [u32; 3] = [10, 25, 50];

/// Maximal run of one class: frames `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    fn intersection(&self, other: &Segment) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

pub fn labels_to_segments(labels: &[usize]) -> Result<Vec<Segment>> {
    let (&first, _) = labels
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("cannot segment an empty label sequence".into()))?;
    let mut segs = vec![Segment {
        class_id: first,
        start: 0,
        end: 1,
    }];
    for (t, &c) in labels.iter().enumerate().skip(1) {
        let last = segs.last_mut().expect("nonempty");
        if last.class_id == c {
            last.end = t + 1;
        } else {
            segs.push(Segment {
                class_id: c,
                start: t,
                end: t + 1,
            });
        }
    }
    Ok(segs)
}

fn check_lengths(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("empty label sequences".into()));
    }
    Ok(())
}

/// Percentage of frames where `pred` equals `gt`.
pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Unit-cost Levenshtein distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// `100 (1 - Lev / max(|p|, |g|))` over the segment class strings; two empty
/// lists score 100.
pub fn edit_score(pred: &[Segment], gt: &[Segment]) -> f64 {
    let longest = pred.len().max(gt.len());
    if longest == 0 {
        return 100.0;
    }
    let p: Vec<usize> = pred.iter().map(|s| s.class_id).collect();
    let g: Vec<usize> = gt.iter().map(|s| s.class_id).collect();
    let d = levenshtein(&p, &g);
    (100.0 * (1.0 - d as f64 / longest as f64)).max(0.0)
}

/// True/false positive and false negative segment counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Precision, recall and F1, all in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchCounts {
    pub fn scores(&self) -> F1 {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        // 2PR / (P + R) reduces to 2tp / (2tp + fp + fn); one division keeps
        // the result correctly rounded
        let f1 = if self.tp == 0 {
            0.0
        } else {
            (200 * self.tp) as f64 / (2 * self.tp + self.fp + self.fn_) as f64
        };
        F1 {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1,
        }
    }
}

fn check_threshold(k: f64) -> Result<()> {
    if !(k > 0.0 && k < 100.0) {
        return Err(Error::InvalidArgument(format!("IoU threshold {k} not in (0, 100)")));
    }
    Ok(())
}

/// Greedy in-order matching of predicted to ground-truth segments at IoU
/// threshold `k` percent.
pub fn match_segments(pred: &[Segment], gt: &[Segment], k: f64) -> Result<MatchCounts> {
    check_threshold(k)?;
    if pred.iter().chain(gt).any(Segment::is_empty) {
        return Err(Error::InvalidArgument("segments must have start < end".into()));
    }
    let mut used = vec![false; gt.len()];
    let mut counts = MatchCounts::default();
    for p in pred {
        // best = (intersection, union, index); ties keep the earliest segment
        let mut best: Option<(usize, usize, usize)> = None;
        for (j, g) in gt.iter().enumerate().filter(|(_, g)| g.class_id == p.class_id) {
            let inter = p.intersection(g);
            let union = p.len() + g.len() - inter;
            let better = match best {
                None => true,
                Some((bi, bu, _)) => inter * bu > bi * union,
            };
            if better {
                best = Some((inter, union, j));
            }
        }
        match best {
            Some((inter, union, j)) if 100.0 * inter as f64 > k * union as f64 && !used[j] => {
                used[j] = true;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = used.iter().filter(|u| !**u).count();
    Ok(counts)
}

pub fn f1_at_k(pred: &[Segment], gt: &[Segment], k: f64) -> Result<F1> {
    Ok(match_segments(pred, gt, k)?.scores())
}

/// Raw per-video quantities from which both per-video and corpus reports are
/// derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    /// Frames counted for accuracy.
    pub frames: usize,
    pub correct: usize,
    pub edit: f64,
    /// Counts at each of [`F1_THRESHOLDS`].
    pub counts: [MatchCounts; 3],
}

/// Metric options. `exclude_class` drops that class's ground-truth frames
/// from accuracy and its segments from edit and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricOptions {
    pub exclude_class: Option<usize>,
}

impl VideoMetrics {
    pub fn compute(pred: &[usize], gt: &[usize], opts: MetricOptions) -> Result<Self> {
        check_lengths(pred, gt)?;
        let keep = |c: usize| Some(c) != opts.exclude_class;
        let (mut frames, mut correct) = (0, 0);
        for (&p, &g) in pred.iter().zip(gt) {
            if keep(g) {
                frames += 1;
                correct += usize::from(p == g);
            }
        }
        let filter = |segs: Vec<Segment>| -> Vec<Segment> {
            segs.into_iter().filter(|s| keep(s.class_id)).collect()
        };
        let ps = filter(labels_to_segments(pred)?);
        let gs = filter(labels_to_segments(gt)?);
        let mut counts = [MatchCounts::default(); 3];
        for (c, &k) in counts.iter_mut().zip(&F1_THRESHOLDS) {
            *c = match_segments(&ps, &gs, k as f64)?;
        }
        Ok(VideoMetrics {
            frames,
            correct,
            edit: edit_score(&ps, &gs),
            counts,
        })
    }

    pub fn report(&self) -> MetricsReport {
        aggregate_corpus(std::slice::from_ref(self)).expect("one video")
    }
}

fn round4<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

/// Percentages; serialises with exactly the keys `acc`, `edit`, `f1_10`,
/// `f1_25`, `f1_50`, rounded to four decimals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "round4")]
    pub acc: f64,
    #[serde(serialize_with = "round4")]
    pub edit: f64,
    #[serde(serialize_with = "round4")]
    pub f1_10: f64,
    #[serde(serialize_with = "round4")]
    pub f1_25: f64,
    #[serde(serialize_with = "round4")]
    pub f1_50: f64,
}

impl MetricsReport {
    pub fn f1(&self, k: u32) -> Option<f64> {
        match k {
            10 => Some(self.f1_10),
            25 => Some(self.f1_25),
            50 => Some(self.f1_50),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }
}

/// Corpus report: pooled frame accuracy, mean edit, F1 from summed counts.
pub fn aggregate_corpus(videos: &[VideoMetrics]) -> Result<MetricsReport> {
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no videos to aggregate".into()));
    }
    let frames: usize = videos.iter().map(|v| v.frames).sum();
    let correct: usize = videos.iter().map(|v| v.correct).sum();
    // every frame excluded: nothing to get wrong
    let acc = if frames == 0 {
        100.0
    } else {
        100.0 * correct as f64 / frames as f64
    };
    let edit = videos.iter().map(|v| v.edit).sum::<f64>() / videos.len() as f64;
    let f1 = |i: usize| {
        videos
            .iter()
            .fold(MatchCounts::default(), |acc, v| acc + v.counts[i])
            .scores()
            .f1
    };
    Ok(MetricsReport {
        acc,
        edit,
        f1_10: f1(0),
        f1_25: f1(1),
        f1_50: f1(2),
    })
}

/// Per-video metrics for each `(pred, gt)` pair plus the corpus aggregate.
pub fn evaluate_corpus(pairs: &[(&[usize], &[usize])], opts: MetricOptions) -> Result<(Vec<VideoMetrics>, MetricsReport)> {
    let per_video = pairs
        .iter()
        .map(|(p, g)| VideoMetrics::compute(p, g, opts))
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate_corpus(&per_video)?;
    Ok((per_video, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(class_id: usize, start: usize, end: usize) -> Segment {
        Segment { class_id, start, end }
    }

    #[test]
    fn segments_from_labels() {
        assert_eq!(labels_to_segments(&[0, 0, 1]).unwrap(), vec![seg(0, 0, 2), seg(1, 2, 3)]);
        assert_eq!(labels_to_segments(&[0]).unwrap(), vec![seg(0, 0, 1)]);
        assert_eq!(labels_to_segments(&[0, 1, 0]).unwrap().len(), 3);
        assert!(labels_to_segments(&[]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(frame_accuracy(&[0, 1, 1, 1], &[0, 1, 1, 2]).unwrap(), 75.0);
        assert!(frame_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn edit_examples() {
        let abc = [seg(0, 0, 1), seg(1, 1, 2), seg(2, 2, 3)];
        let ac = [seg(0, 0, 5), seg(2, 5, 9)];
        assert_eq!(edit_score(&abc, &abc), 100.0);
        assert!((edit_score(&abc, &ac) - 66.666_666_666_666_67).abs() < 1e-9);
        assert_eq!(edit_score(&[], &ac), 0.0);
        assert_eq!(edit_score(&[], &[]), 100.0);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn f1_examples() {
        let gt = [seg(0, 0, 10), seg(1, 10, 20)];
        for k in F1_THRESHOLDS {
            assert_eq!(f1_at_k(&gt, &gt, k as f64).unwrap().f1, 100.0);
        }
        let shifted = [seg(0, 0, 9), seg(1, 9, 20)];
        assert_eq!(f1_at_k(&shifted, &gt, 50.0).unwrap().f1, 100.0);

        let half = [seg(0, 0, 5)];
        let whole = [seg(0, 0, 10)];
        assert_eq!(f1_at_k(&half, &whole, 50.0).unwrap().f1, 0.0);
        assert_eq!(f1_at_k(&half, &whole, 25.0).unwrap().f1, 100.0);
        assert!(f1_at_k(&half, &whole, 0.0).is_err());
        assert!(f1_at_k(&half, &whole, 100.0).is_err());
    }

    #[test]
    fn duplicate_prediction_is_false_positive() {
        let gt = [seg(0, 0, 10)];
        let pred = [seg(0, 0, 6), seg(1, 6, 7), seg(0, 7, 10)];
        let c = match_segments(&pred, &gt, 10.0).unwrap();
        assert_eq!(c, MatchCounts { tp: 1, fp: 2, fn_: 0 });
    }

    #[test]
    fn aggregation_examples() {
        let v = VideoMetrics::compute(&[0, 0, 1, 1], &[0, 1, 1, 1], MetricOptions::default()).unwrap();
        assert_eq!(aggregate_corpus(std::slice::from_ref(&v)).unwrap(), v.report());

        let right = VideoMetrics::compute(&[0, 0], &[0, 0], MetricOptions::default()).unwrap();
        let wrong = VideoMetrics::compute(&[1, 1], &[0, 0], MetricOptions::default()).unwrap();
        assert_eq!(aggregate_corpus(&[right, wrong]).unwrap().acc, 50.0);

        let a = MatchCounts { tp: 1, fp: 1, fn_: 0 };
        let b = MatchCounts { tp: 1, fp: 0, fn_: 1 };
        let s = (a + b).scores();
        assert!((s.precision - 200.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 200.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 66.666_666_666_666_67).abs() < 1e-9);
        assert!(aggregate_corpus(&[]).is_err());
    }

    #[test]
    fn excluded_class_is_ignored() {
        let opts = MetricOptions { exclude_class: Some(0) };
        let v = VideoMetrics::compute(&[1, 1, 2, 2], &[0, 1, 2, 2], opts).unwrap();
        assert_eq!((v.frames, v.correct), (3, 3));
        assert_eq!(v.edit, 100.0);
    }

    #[test]
    fn json_has_fixed_keys_and_rounding() {
        let r = MetricsReport {
            acc: 66.666_666_6,
            edit: 100.0,
            f1_10: 1.0 / 3.0,
            f1_25: 0.0,
            f1_50: 12.345_65,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["acc", "edit", "f1_10", "f1_25", "f1_50"]);
        assert_eq!(v["acc"], 66.6667);
        assert_eq!(v["f1_10"], 0.3333);
    }
}
