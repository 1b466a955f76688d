//! Training losses and evaluation metrics over masked node sets.

use crate::graph::Labels;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::ModelError;

/// Which scalar summarizes prediction quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    MicroF1,
}

impl MetricKind {
    pub fn id(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MicroF1 => "micro-f1",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// The conventional metric for a task: micro-F1 for multilabel prediction,
/// accuracy otherwise.
pub fn default_metric(labels: &Labels) -> MetricKind {
    if labels.is_multilabel() {
        MetricKind::MicroF1
    } else {
        MetricKind::Accuracy
    }
}

/// Task-appropriate loss over the masked rows: masked mean softmax
/// cross-entropy for single-label tasks, mean sigmoid binary cross-entropy
/// over every label otherwise.
pub fn loss(tape: &mut Tape, logits: Var, labels: &Labels, mask: &[bool]) -> Result<Var, ModelError> {
    match labels {
        Labels::Multiclass { ids, .. } => Ok(tape.masked_softmax_cross_entropy(logits, ids, mask)?),
        Labels::Multilabel { values, .. } => Ok(tape.masked_sigmoid_bce(logits, values, mask)?),
    }
}

fn masked_rows(n: usize, mask: &[bool]) -> Result<Vec<usize>, ModelError> {
    if mask.len() != n {
        return Err(ModelError::Invalid(format!("mask covers {} rows, logits have {n}", mask.len())));
    }
    let rows: Vec<usize> = (0..n).filter(|&v| mask[v]).collect();
    if rows.is_empty() {
        return Err(ModelError::Invalid("metric over an empty mask".into()));
    }
    Ok(rows)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of masked rows whose argmax matches the label. Ties go to the
/// lowest class index.
pub fn accuracy(logits: &Tensor, ids: &[usize], mask: &[bool]) -> Result<f64, ModelError> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if ids.len() != n {
        return Err(ModelError::Invalid(format!("{} labels for {n} logit rows", ids.len())));
    }
    let rows = masked_rows(n, mask)?;
    let data = logits.data();
    let hits = rows.iter().filter(|&&v| argmax(&data[v * c..(v + 1) * c]) == ids[v]).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Global confusion counts `(tp, fp, fn)` over every label of the masked
/// rows, predicting positive at logit >= 0 (sigmoid >= 0.5). Counts from
/// separate graphs can be summed before [`micro_f1`].
pub fn micro_f1_counts(logits: &Tensor, values: &[f64], mask: &[bool]) -> Result<(u64, u64, u64), ModelError> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if values.len() != n * c {
        return Err(ModelError::Invalid(format!("{} label values for [{n}, {c}] logits", values.len())));
    }
    let rows = masked_rows(n, mask)?;
    let data = logits.data();
    let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
    for &v in &rows {
        for j in 0..c {
            let pred = data[v * c + j] >= 0.0;
            let truth = values[v * c + j] >= 0.5;
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                (false, false) => {}
            }
        }
    }
    Ok((tp, fp, fnn))
}

/// Micro-averaged F1 from pooled counts: `2tp / (2tp + fp + fn)`. With no
/// positives anywhere in truth or prediction the score is 1 (perfect
/// agreement on an all-negative task).
pub fn micro_f1(tp: u64, fp: u64, fnn: u64) -> f64 {
    let denom = 2 * tp + fp + fnn;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Metric dispatch. Accuracy requires single-label targets. Micro-F1 on a
/// single-label task scores the argmax prediction, which coincides with
/// accuracy (each row contributes one true and one predicted positive).
pub fn metric(logits: &Tensor, labels: &Labels, mask: &[bool], kind: MetricKind) -> Result<f64, ModelError> {
    match (kind, labels) {
        (MetricKind::Accuracy, Labels::Multiclass { ids, .. }) => accuracy(logits, ids, mask),
        (MetricKind::MicroF1, Labels::Multiclass { ids, .. }) => accuracy(logits, ids, mask),
        (MetricKind::MicroF1, Labels::Multilabel { values, .. }) => {
            let (tp, fp, fnn) = micro_f1_counts(logits, values, mask)?;
            Ok(micro_f1(tp, fp, fnn))
        }
        (MetricKind::Accuracy, Labels::Multilabel { .. }) => {
            Err(ModelError::Invalid("accuracy is defined here for single-label tasks only".into()))
        }
    }
}
