use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auroc_opt, percentile};
use super::predictions::PatientPrediction;
use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const DEFAULT_BOOTSTRAP: usize = 1000;
/// Draw attempts per resample before it is skipped.
const MAX_ATTEMPTS: usize = 10;

/// Point estimate with a percentile confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile interval and bookkeeping of a bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lower: f64,
    pub upper: f64,
    /// Single-class draws that were redrawn.
    pub redrawn: usize,
    /// Resamples abandoned after repeated single-class draws.
    pub skipped: usize,
}

/// Draws one resample of `n` units, retrying while `metric` is undefined.
fn draw<F: Fn(&[usize]) -> Option<f64>>(
    n: usize,
    seed: u64,
    i: usize,
    metric: &F,
    redrawn: &mut usize,
) -> Option<f64> {
    let mut rng = rng_for(seed, i as u64);
    let mut idx = vec![0usize; n];
    for attempt in 0..MAX_ATTEMPTS {
        idx.iter_mut().for_each(|v| *v = rng.random_range(0..n));
        if let Some(v) = metric(&idx) {
            return Some(v);
        }
        if attempt + 1 < MAX_ATTEMPTS {
            *redrawn += 1;
        }
    }
    None
}

/// Percentile bootstrap over `n_units` resampling units (patients).
///
/// `metric` receives the resampled unit indices and returns `None` when the
/// resample is degenerate; such draws are redrawn up to ten times and then
/// skipped. More than 10% skipped resamples is an error.
pub fn bootstrap_ci<F: Fn(&[usize]) -> Option<f64>>(
    n_units: usize,
    metric: F,
    n: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval> {
    if n_units == 0 || n == 0 {
        return Err(Error::BootstrapDegenerate {
            failed: n,
            total: n,
        });
    }
    let mut values = Vec::with_capacity(n);
    let mut redrawn = 0;
    for i in 0..n {
        if let Some(v) = draw(n_units, seed, i, &metric, &mut redrawn) {
            values.push(v);
        }
    }
    let skipped = n - values.len();
    if skipped * 10 > n || values.is_empty() {
        return Err(Error::BootstrapDegenerate {
            failed: skipped,
            total: n,
        });
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapInterval {
        lower: percentile(&values, tail),
        upper: percentile(&values, 1.0 - tail),
        redrawn,
        skipped,
    })
}

/// Patient-level bootstrap interval of AUROC(score, label).
pub fn auroc_ci(
    patients: &[PatientPrediction],
    label: impl Fn(&PatientPrediction) -> Option<bool>,
    n: usize,
    seed: u64,
) -> Result<MetricCi> {
    let kept: Vec<(f64, bool)> = patients
        .iter()
        .filter_map(|p| label(p).map(|l| (p.score, l)))
        .collect();
    let (scores, labels): (Vec<f64>, Vec<bool>) = kept.iter().copied().unzip();
    let point = super::metrics::auroc(&scores, &labels)?;
    let interval = bootstrap_ci(
        kept.len(),
        |idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            auroc_opt(&s, &l)
        },
        n,
        0.95,
        seed,
    )?;
    Ok(MetricCi {
        point,
        // the percentile interval can miss the point estimate on tiny sets
        lower: interval.lower.min(point),
        upper: interval.upper.max(point),
    })
}

/// Paired bootstrap test that model A beats model B on AUROC.
///
/// Both prediction sets must cover the same patients with the same labels.
/// Each resample draws one shared set of patient indices; the p-value is
/// the fraction of resamples where `AUROC_A - AUROC_B <= 0`, so identical
/// models give 1.
pub fn paired_test(
    a: &[PatientPrediction],
    b: &[PatientPrediction],
    n: usize,
    seed: u64,
) -> Result<f64> {
    paired_test_by(a, b, |p| p.label, n, seed)
}

/// [`paired_test`] against an arbitrary per-patient ground truth.
pub fn paired_test_by(
    a: &[PatientPrediction],
    b: &[PatientPrediction],
    truth: impl Fn(&PatientPrediction) -> Option<bool>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if a.len() != b.len()
        || a.iter()
            .zip(b)
            .any(|(x, y)| x.patient_id != y.patient_id || truth(x) != truth(y))
    {
        return Err(Error::PatientMismatch(
            "paired predictions must cover identical patients and labels".into(),
        ));
    }
    let rows: Vec<(f64, f64, bool)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| truth(x).map(|l| (x.score, y.score, l)))
        .collect();
    let mut redrawn = 0;
    let (mut worse, mut valid) = (0usize, 0usize);
    for i in 0..n {
        let diff = draw(
            rows.len(),
            seed,
            i,
            &|idx: &[usize]| {
                let l: Vec<bool> = idx.iter().map(|&k| rows[k].2).collect();
                let sa: Vec<f64> = idx.iter().map(|&k| rows[k].0).collect();
                let sb: Vec<f64> = idx.iter().map(|&k| rows[k].1).collect();
                Some(auroc_opt(&sa, &l)? - auroc_opt(&sb, &l)?)
            },
            &mut redrawn,
        );
        if let Some(d) = diff {
            valid += 1;
            if d <= 0.0 {
                worse += 1;
            }
        }
    }
    if valid == 0 || (n - valid) * 10 > n {
        return Err(Error::BootstrapDegenerate {
            failed: n - valid,
            total: n,
        });
    }
    Ok(worse as f64 / valid as f64)
}
