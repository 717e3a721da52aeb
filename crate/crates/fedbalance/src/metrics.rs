//! Evaluation and diagnostics: global and per-class accuracy, the
//! client-averaged per-class accuracy with its confidence interval, KL
//! divergence between local and ensemble outputs, and rounds-to-target.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{infer_logits, Mat, ModelParams};

/// One evaluated round of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub global_accuracy: f64,
    pub mean_per_class_acc: f64,
    pub per_class_acc_ci95: (f64, f64),
    pub kl_local_vs_ensemble: Option<f64>,
    pub elapsed_seconds: f64,
}

const EVAL_CHUNK: usize = 256;

/// Argmax with ties broken toward the lowest class index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn predictions(model: &ModelParams, test: &Dataset) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(test.len());
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = test.batch(chunk)?;
        let logits = infer_logits(model, &batch)?;
        for r in 0..logits.rows() {
            preds.push(argmax(logits.row(r)));
        }
    }
    Ok(preds)
}

/// Fraction of argmax-correct predictions on the test set.
pub fn accuracy(model: &ModelParams, test: &Dataset) -> Result<f64> {
    let preds = predictions(model, test)?;
    let correct = preds
        .iter()
        .zip(test.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Class-conditional accuracies; every class must appear in the test set.
pub fn per_class_accuracy(model: &ModelParams, test: &Dataset) -> Result<Vec<f64>> {
    let histogram = test.label_histogram();
    if let Some(missing) = histogram.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {missing} is absent from the test set"
        )));
    }
    let preds = predictions(model, test)?;
    let mut correct = vec![0usize; test.num_classes()];
    for (p, &l) in preds.iter().zip(test.labels()) {
        if *p == l {
            correct[l] += 1;
        }
    }
    Ok(correct
        .iter()
        .zip(&histogram)
        .map(|(&c, &n)| c as f64 / n as f64)
        .collect())
}

/// Mean per-class accuracy over a set of client models, with a 95% normal
/// confidence interval across the clients' mean-per-class values (so
/// identical models yield a zero-width interval).
pub fn mean_per_class_accuracy(
    client_models: &[ModelParams],
    test: &Dataset,
) -> Result<(f64, (f64, f64))> {
    if client_models.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one client model".into(),
        ));
    }
    let client_means: Vec<f64> = client_models
        .iter()
        .map(|m| {
            per_class_accuracy(m, test)
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect::<Result<_>>()?;
    let k = client_means.len() as f64;
    let mean = client_means.iter().sum::<f64>() / k;
    let std = if client_means.len() < 2 {
        0.0
    } else {
        (client_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    let half = 1.96 * std / k.sqrt();
    Ok((mean, (mean - half, mean + half)))
}

/// Mean over rows of `sum_c p * ln(p / q)`; `q` is clamped below at `1e-12`
/// and zero `p` entries contribute nothing. Rows must sum to 1 within `1e-6`.
pub fn kl_divergence(p: &Mat, q: &Mat) -> Result<f64> {
    if p.rows() != q.rows() || p.cols() != q.cols() {
        return Err(Error::ShapeMismatch(format!(
            "kl between {}x{} and {}x{}",
            p.rows(),
            p.cols(),
            q.rows(),
            q.cols()
        )));
    }
    for (name, m) in [("p", p), ("q", q)] {
        for r in 0..m.rows() {
            let sum: f64 = m.row(r).iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "{name} row {r} sums to {sum}, not a probability row"
                )));
            }
        }
    }
    let mut total = 0.0;
    for r in 0..p.rows() {
        for (&pv, &qv) in p.row(r).iter().zip(q.row(r)) {
            if pv > 0.0 {
                total += pv * (pv / qv.max(1e-12)).ln();
            }
        }
    }
    Ok(total / p.rows() as f64)
}

/// First round whose global accuracy reaches `target`, if any.
pub fn rounds_to_target(history: &[RoundRecord], target: f64) -> Option<usize> {
    history
        .iter()
        .find(|r| r.global_accuracy >= target)
        .map(|r| r.round)
}
