//! Multi-class accuracy, mean per-class accuracy and the confusion matrix.

use serde::Serialize;

use super::run::{KnowledgeMaps, Variant};
use super::{Result, TrainError};
use crate::model::{argmax, forward, fuse_scores, ModelState, SceneSample};
use crate::scalar::Scalar;

/// Group-activity evaluation results, in percent.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    /// Overall accuracy.
    pub mca: f64,
    /// Mean of per-class accuracies, after the optional class merge.
    pub mpca: f64,
    /// Raw per-class accuracies (no merge applied).
    pub per_class_accuracy: Vec<f64>,
    /// confusion[target][predicted] counts.
    pub confusion: Vec<Vec<u64>>,
}

/// Computes the metrics from predicted and true class indices.
///
/// `merge` optionally maps each class to a coarser id; it affects only the
/// MPCA, mirroring evaluation protocols that pool confusable classes.
pub fn metrics_from_labels(
    predicted: &[usize],
    targets: &[usize],
    classes: usize,
    merge: Option<&[usize]>,
) -> Result<Metrics> {
    if predicted.is_empty() || predicted.len() != targets.len() {
        return Err(TrainError::EmptyData);
    }
    if let Some(m) = merge {
        if m.len() != classes || m.iter().any(|&v| v >= classes) {
            return Err(TrainError::Config(format!(
                "merge table must list {classes} classes with ids < {classes}"
            )));
        }
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predicted.iter().zip(targets) {
        if p >= classes || t >= classes {
            return Err(TrainError::Config(format!(
                "label out of range: predicted {p}, target {t}, classes {classes}"
            )));
        }
        confusion[t][p] += 1;
    }
    let total: u64 = predicted.len() as u64;
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mca = 100.0 * correct as f64 / total as f64;

    let per_class_accuracy: Vec<f64> = (0..classes)
        .map(|c| {
            let row: u64 = confusion[c].iter().sum();
            if row == 0 {
                0.0
            } else {
                100.0 * confusion[c][c] as f64 / row as f64
            }
        })
        .collect();

    // per-class accuracy in the (possibly merged) label space
    let identity: Vec<usize> = (0..classes).collect();
    let map = merge.unwrap_or(&identity);
    let mut merged_total = vec![0u64; classes];
    let mut merged_correct = vec![0u64; classes];
    for t in 0..classes {
        for p in 0..classes {
            let count = confusion[t][p];
            merged_total[map[t]] += count;
            if map[t] == map[p] {
                merged_correct[map[t]] += count;
            }
        }
    }
    let (mut sum, mut seen) = (0.0, 0usize);
    for c in 0..classes {
        if merged_total[c] > 0 {
            sum += 100.0 * merged_correct[c] as f64 / merged_total[c] as f64;
            seen += 1;
        }
    }
    let mpca = if seen == 0 { 0.0 } else { sum / seen as f64 };

    Ok(Metrics {
        mca,
        mpca,
        per_class_accuracy,
        confusion,
    })
}

/// Runs the model over `data` and scores the fused group predictions.
/// The maps are gated by the variant exactly as during training.
pub fn evaluate<T: Scalar>(
    state: &ModelState<T>,
    variant: Variant,
    data: &[SceneSample<T>],
    maps: &KnowledgeMaps<T>,
    merge: Option<&[usize]>,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let (cc, cp) = maps.effective(variant, state.config());
    let mut predicted = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for sample in data {
        let pred = forward(state, sample, &cc, &cp, variant.use_semantic())?;
        predicted.push(argmax(&fuse_scores(&pred)));
        targets.push(sample.group_target);
    }
    metrics_from_labels(&predicted, &targets, state.config().group_classes, merge)
}
