use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{write_labels, ClassMap, Video};
use crate::metrics::{aggregate_corpus, MetricOptions, MetricsReport, VideoMetrics};
use crate::model::{argmax_rows, Model};
use crate::numerics::{Real, Tape};
use crate::{Error, Result};

/// Final-stage class probabilities for one video.
pub fn predict_probs<F: Real>(model: &Model<F>, features: &Array2<F>) -> Result<Array2<F>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let x = tape.constant(features.clone())?;
    let outs = model.forward(&mut tape, &bound, x)?;
    let last = outs.last().expect("at least one stage");
    Ok(tape.value(last.probs).clone())
}

/// Per-frame argmax of the final stage, ties to the lowest class id.
pub fn predict<F: Real>(model: &Model<F>, features: &Array2<F>) -> Result<Vec<usize>> {
    predict_probs(model, features).map(|p| argmax_rows(&p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEvaluation {
    pub id: String,
    pub prediction: Vec<usize>,
    pub metrics: VideoMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// In input order.
    pub videos: Vec<VideoEvaluation>,
}

impl Evaluation {
    /// Writes one label file per video, `<dir>/<id>.txt`.
    pub fn write_predictions(&self, dir: &Path, mapping: &ClassMap) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for v in &self.videos {
            write_labels(&dir.join(format!("{}.txt", v.id)), &v.prediction, mapping)?;
        }
        Ok(())
    }
}

/// Predicts every video in parallel and scores it against its labels; the
/// result does not depend on the thread count.
pub fn evaluate(model: &Model<f32>, videos: &[&Video], opts: MetricOptions) -> Result<Evaluation> {
    if videos.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let per_video = videos
        .par_iter()
        .map(|v| {
            let prediction = predict(model, &v.features)?;
            let metrics = VideoMetrics::compute(&prediction, &v.labels, opts)?;
            Ok(VideoEvaluation {
                id: v.id.clone(),
                prediction,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<VideoMetrics> = per_video.iter().map(|v| v.metrics.clone()).collect();
    Ok(Evaluation {
        report: aggregate_corpus(&metrics)?,
        videos: per_video,
    })
}
