use serde::{Deserialize, Serialize};

use crate::data::{Contingency, CorrelationSpec};
use crate::error::{Error, Result};

/// Allowed gap between achieved and requested prevalence.
pub const DEFAULT_PREVALENCE_WINDOW: f64 = 0.03;

/// Target cell counts for a resampled task × attribute table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub cells: Contingency,
    pub achieved_phi: Option<f64>,
    pub achieved_prevalence: f64,
    /// Eligible records left out.
    pub dropped_count: u64,
}

impl ResamplePlan {
    /// A plan that keeps exactly `cells` out of the same availability.
    pub fn from_cells(cells: Contingency) -> Self {
        Self {
            cells,
            achieved_phi: cells.phi(),
            achieved_prevalence: cells.row_positive() as f64 / cells.total().max(1) as f64,
            dropped_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cells: Contingency,
    phi: f64,
    phi_err: f64,
    prev_err: f64,
    rate_err: f64,
}

impl Candidate {
    /// Ordering key within one total; smaller is better.
    fn better_than(&self, other: &Candidate) -> bool {
        let key = |c: &Candidate| (c.phi_err, c.prev_err, c.rate_err);
        let (a, b) = (key(self), key(other));
        match a
            .0
            .total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
        {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => {
                let t = |c: &Contingency| (c.n11, c.n10, c.n01, c.n00);
                t(&self.cells) < t(&other.cells)
            }
        }
    }
}

/// Chooses integer cell counts for the largest table that meets the
/// correlation and prevalence targets.
///
/// For a fixed total `t`, label count `p` and attribute count `b`, the phi
/// numerator is `n11 * t - p * b`, so phi is linear in `n11` and the best
/// `n11` is the rounded solution clamped to what availability allows. Totals
/// are scanned from the largest permitted downwards; among tables of the same
/// total the smallest phi error wins, then the smallest prevalence error,
/// then the attribute rate closest to the available rate, then the
/// lexicographically smallest cells.
pub fn plan_cells(
    available: &Contingency,
    spec: &CorrelationSpec,
    prevalence_window: f64,
) -> Result<ResamplePlan> {
    spec.validate()?;
    let a = *available;
    let avail_total = a.total();
    let avail_rate = a.col_positive() as f64 / avail_total.max(1) as f64;
    let t_max = (spec.size_budget as u64).min(avail_total);
    let (mut phi_lo, mut phi_hi) = (f64::INFINITY, f64::NEG_INFINITY);

    for t in (2..=t_max).rev() {
        let tf = t as f64;
        let p_min = ((spec.prevalence_target - prevalence_window) * tf)
            .ceil()
            .max(1.0) as u64;
        let p_max = (((spec.prevalence_target + prevalence_window) * tf).floor() as u64).min(t - 1);
        let mut best: Option<Candidate> = None;
        for p in p_min..=p_max {
            if p > a.row_positive() || t - p > a.n01 + a.n00 {
                continue;
            }
            let prev_err = (p as f64 / tf - spec.prevalence_target).abs();
            for b in 1..t {
                // n11 bounds from the four availability and non-negativity limits
                let lo = [
                    0,
                    (p + b).saturating_sub(t),
                    p.saturating_sub(a.n10),
                    b.saturating_sub(a.n01),
                ]
                .into_iter()
                .max()
                .unwrap();
                let hi = [p, b, a.n11, (a.n00 + p + b).saturating_sub(t)]
                    .into_iter()
                    .min()
                    .unwrap();
                if lo > hi || a.n00 + p + b < t {
                    continue;
                }
                let scale = ((p * (t - p)) as f64 * (b * (t - b)) as f64).sqrt();
                let phi_of = |n11: u64| (n11 as f64 * tf - (p * b) as f64) / scale;
                phi_lo = phi_lo.min(phi_of(lo));
                phi_hi = phi_hi.max(phi_of(hi));
                let ideal = (spec.target_phi * scale + (p * b) as f64) / tf;
                let floor = (ideal.floor().max(lo as f64) as u64).min(hi);
                for n11 in [floor, (floor + 1).min(hi)] {
                    let cells = Contingency::new(n11, p - n11, b - n11, t + n11 - p - b);
                    let phi = cells.phi().expect("non-degenerate marginals");
                    let cand = Candidate {
                        cells,
                        phi,
                        phi_err: (phi - spec.target_phi).abs(),
                        prev_err,
                        rate_err: (b as f64 / tf - avail_rate).abs(),
                    };
                    if cand.phi_err <= spec.tolerance
                        && best.is_none_or(|bst| cand.better_than(&bst))
                    {
                        best = Some(cand);
                    }
                }
            }
        }
        if let Some(c) = best {
            return Ok(ResamplePlan {
                cells: c.cells,
                achieved_phi: Some(c.phi),
                achieved_prevalence: c.cells.row_positive() as f64 / tf,
                dropped_count: avail_total - t,
            });
        }
    }
    if phi_lo > phi_hi {
        return Err(Error::UndefinedCorrelation(
            "no table within the prevalence window has both classes of label and attribute".into(),
        ));
    }
    Err(Error::InfeasiblePhi {
        target: spec.target_phi,
        low: phi_lo,
        high: phi_hi,
    })
}
