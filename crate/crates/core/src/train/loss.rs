use std::collections::BTreeMap;

use ndarray::Array1;

use crate::data::Binary;
use crate::model::sigmoid;

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` inside the loss.
pub const CLAMP: f64 = 1e-7;

/// Binary cross-entropy of one prediction.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean BCE over the present labels of one task; zero when all are missing.
pub fn masked_task_loss(preds: &Array1<f64>, labels: &[Binary]) -> f64 {
    let (sum, n) = preds
        .iter()
        .zip(labels)
        .filter_map(|(&p, y)| y.map(|y| bce(p, y)))
        .fold((0.0, 0usize), |(s, n), l| (s + l, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Sum over tasks of the mean BCE over non-missing labels.
pub fn masked_multilabel_loss(
    preds: &BTreeMap<String, Array1<f64>>,
    labels: &BTreeMap<String, Vec<Binary>>,
) -> f64 {
    labels
        .iter()
        .filter_map(|(task, y)| preds.get(task).map(|p| masked_task_loss(p, y)))
        .sum()
}

/// Masked multilabel loss from logits and its gradient with respect to them.
pub fn masked_loss_and_grad(
    logits: &BTreeMap<String, Array1<f64>>,
    labels: &BTreeMap<String, Vec<Binary>>,
) -> (f64, BTreeMap<String, Array1<f64>>) {
    let mut total = 0.0;
    let mut grads = BTreeMap::new();
    for (task, z) in logits {
        let Some(y) = labels.get(task) else { continue };
        let p = z.mapv(sigmoid);
        total += masked_task_loss(&p, y);
        let n = y.iter().filter(|v| v.is_some()).count().max(1) as f64;
        let g = Array1::from_iter(
            p.iter()
                .zip(y)
                .map(|(&p, y)| y.map_or(0.0, |y| (p - y as u8 as f64) / n)),
        );
        grads.insert(task.clone(), g);
    }
    (total, grads)
}
