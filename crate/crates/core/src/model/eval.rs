use super::{CsgTl, GraphSample, ModelError};
use crate::Exec;

/// Per-scene fraction of pairs whose thresholded prediction (`p >= threshold`)
/// equals the label. Scenes appear in order of first occurrence; the pairs of
/// all targets of a scene are pooled.
pub fn per_scene_scores(samples: &[GraphSample], preds: &[Vec<f64>], threshold: f64) -> Result<Vec<(String, f64)>, ModelError> {
    if samples.len() != preds.len() {
        return Err(ModelError::LabelMismatch {
            expected: samples.len(),
            got: preds.len(),
        });
    }
    let mut scenes: Vec<(String, usize, usize)> = Vec::new();
    for (s, p) in samples.iter().zip(preds) {
        if p.len() != s.labels.len() {
            return Err(ModelError::LabelMismatch {
                expected: s.labels.len(),
                got: p.len(),
            });
        }
        let correct = p
            .iter()
            .zip(&s.labels)
            .filter(|(&p, &y)| ((p >= threshold) as u8 as f64) == y)
            .count();
        match scenes.iter_mut().find(|e| e.0 == s.scene_id) {
            Some(e) => {
                e.1 += correct;
                e.2 += p.len();
            }
            None => scenes.push((s.scene_id.clone(), correct, p.len())),
        }
    }
    Ok(scenes
        .into_iter()
        .filter(|e| e.2 > 0)
        .map(|(id, c, t)| (id, c as f64 / t as f64))
        .collect())
}

/// Unweighted mean of [`per_scene_scores`].
pub fn accuracy(samples: &[GraphSample], preds: &[Vec<f64>], threshold: f64) -> Result<f64, ModelError> {
    let scores = per_scene_scores(samples, preds, threshold)?;
    if scores.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    Ok(scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64)
}

pub fn evaluate_accuracy(samples: &[GraphSample], model: &CsgTl, threshold: f64, exec: Exec) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let preds: Result<Vec<Vec<f64>>, ModelError> = exec.map(samples, |s| model.predict(&s.input)).into_iter().collect();
    accuracy(samples, &preds?, threshold)
}

/// Mean over scenes of the positive-label fraction, i.e. the accuracy of a
/// predictor that says "linked" everywhere.
pub fn label_rate(samples: &[GraphSample]) -> Result<f64, ModelError> {
    let ones: Vec<Vec<f64>> = samples.iter().map(|s| vec![1.0; s.labels.len()]).collect();
    accuracy(samples, &ones, 0.5)
}
