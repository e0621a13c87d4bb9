//! Per-example Gaussian-filter bias: the filter width itself becomes a binary
//! attribute that a model can learn to detect.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::filter::gaussian_filter;
use crate::data::{Binary, Contingency, CorrelationSpec, Manifest};
use crate::error::{Error, Result};
use crate::rng::rng_for_str;

/// Named σ pairs ordered by how hard the two filters are to tell apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPreset {
    Difficult,
    Moderate,
    Easy,
}

impl FilterPreset {
    pub const ALL: [FilterPreset; 3] = [
        FilterPreset::Difficult,
        FilterPreset::Moderate,
        FilterPreset::Easy,
    ];

    /// `(sigma_pos, sigma_neg)`.
    pub fn sigmas(self) -> (f64, f64) {
        match self {
            FilterPreset::Difficult => (0.3, 0.4),
            FilterPreset::Moderate => (0.1, 0.2),
            FilterPreset::Easy => (0.4, 0.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterPreset::Difficult => "difficult",
            FilterPreset::Moderate => "moderate",
            FilterPreset::Easy => "easy",
        }
    }
}

impl FromStr for FilterPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter preset '{s}'")))
    }
}

impl std::fmt::Display for FilterPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which Gaussian filter to apply to each image, keyed by a synthetic attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBiasSpec {
    /// Attribute column that records the filter identity.
    pub attribute: String,
    /// σ applied when the attribute is 1.
    pub sigma_pos: f64,
    /// σ applied when the attribute is 0.
    pub sigma_neg: f64,
    /// Fraction of patients whose images get `sigma_pos`.
    pub positive_rate: f64,
    /// Multiplier applied to both σ values (1 keeps them verbatim).
    #[serde(default = "one")]
    pub sigma_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl FilterBiasSpec {
    pub const DEFAULT_ATTRIBUTE: &'static str = "filter";
    pub const DEFAULT_POSITIVE_RATE: f64 = 0.25;

    pub fn new(sigma_pos: f64, sigma_neg: f64) -> Self {
        Self {
            attribute: Self::DEFAULT_ATTRIBUTE.into(),
            sigma_pos,
            sigma_neg,
            positive_rate: Self::DEFAULT_POSITIVE_RATE,
            sigma_scale: 1.0,
        }
    }

    pub fn preset(preset: FilterPreset) -> Self {
        let (s1, s2) = preset.sigmas();
        Self::new(s1, s2)
    }

    pub fn with_positive_rate(mut self, rate: f64) -> Self {
        self.positive_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_pos >= 0.0 && self.sigma_neg >= 0.0 && self.sigma_scale >= 0.0) {
            return Err(Error::Config(
                "filter sigmas and scale must be non-negative".into(),
            ));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config(
                "filter positive_rate must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Contingency table over records when the first `k` of `pos` and the first
/// `q - k` of `neg` patients are assigned b = 1.
fn table_for(pos_prefix: &[u64], neg_prefix: &[u64], k: usize, q: usize) -> Contingency {
    let (p_all, n_all) = (*pos_prefix.last().unwrap(), *neg_prefix.last().unwrap());
    let n11 = pos_prefix[k];
    let n01 = neg_prefix[q - k];
    Contingency::new(n11, p_all - n11, n01, n_all - n01)
}

fn prefix(sizes: &[u64]) -> Vec<u64> {
    std::iter::once(0)
        .chain(sizes.iter().scan(0, |acc, &s| {
            *acc += s;
            Some(*acc)
        }))
        .collect()
}

/// Assigns the filter attribute per patient and blurs every image accordingly.
///
/// Without a correlation the assignment is stratified over the joint label
/// pattern, which keeps the attribute nearly uncorrelated with every task.
/// With a correlation the number of attribute-positive patients stays at
/// `round(positive_rate * patients)` and the split of those between label
/// classes is chosen to bring phi closest to the target.
pub fn inject_filter_bias(
    manifest: &Manifest,
    spec: &FilterBiasSpec,
    correlation: Option<&CorrelationSpec>,
    seed: u64,
) -> Result<Manifest> {
    spec.validate()?;
    let groups = manifest.patient_groups();
    let n = groups.len();
    let mut rng = rng_for_str(seed, "filter-bias");
    let mut assign = vec![false; n];

    match correlation {
        None => {
            // stratified systematic sampling over label patterns
            let pattern = |idx: &[usize]| -> Vec<Binary> {
                manifest
                    .declared_tasks
                    .iter()
                    .map(|t| idx.iter().find_map(|&i| manifest.records[i].label(t)))
                    .collect()
            };
            let mut order: Vec<(Vec<Binary>, u64, usize)> = groups
                .iter()
                .enumerate()
                .map(|(g, (_, idx))| (pattern(idx), rng.random(), g))
                .collect();
            order.sort();
            let offset: f64 = rng.random();
            for (i, (_, _, g)) in order.iter().enumerate() {
                let lo = (offset + i as f64 * spec.positive_rate).floor();
                let hi = (offset + (i + 1) as f64 * spec.positive_rate).floor();
                assign[*g] = hi > lo;
            }
        }
        Some(corr) => {
            if !(-1.0..=1.0).contains(&corr.target_phi) {
                return Err(Error::Config(format!(
                    "target_phi {} outside [-1, 1]",
                    corr.target_phi
                )));
            }
            if !manifest.declared_tasks.contains(&corr.task) {
                return Err(Error::Config(format!("unknown task '{}'", corr.task)));
            }
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            let mut unlabeled = Vec::new();
            for (g, (_, idx)) in groups.iter().enumerate() {
                match idx
                    .iter()
                    .find_map(|&i| manifest.records[i].label(&corr.task))
                {
                    Some(true) => pos.push(g),
                    Some(false) => neg.push(g),
                    None => unlabeled.push(g),
                }
            }
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let labeled = pos.len() + neg.len();
            let q = (spec.positive_rate * labeled as f64).round() as usize;
            let k_lo = q.saturating_sub(neg.len());
            let k_hi = q.min(pos.len());
            let sizes = |gs: &[usize]| {
                gs.iter()
                    .map(|&g| groups[g].1.len() as u64)
                    .collect::<Vec<_>>()
            };
            let (pp, np) = (prefix(&sizes(&pos)), prefix(&sizes(&neg)));
            let phi_at = |k: usize| table_for(&pp, &np, k, q).phi();
            let (lo, hi) = (phi_at(k_lo), phi_at(k_hi));
            let (Some(lo), Some(hi)) = (lo, hi) else {
                return Err(Error::UndefinedCorrelation(format!(
                    "task '{}' or the filter attribute is single-valued",
                    corr.task
                )));
            };
            let best = (k_lo..=k_hi)
                .filter_map(|k| phi_at(k).map(|p| (k, (p - corr.target_phi).abs())))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            if best.1 > corr.tolerance {
                return Err(Error::InfeasiblePhi {
                    target: corr.target_phi,
                    low: lo.min(hi),
                    high: lo.max(hi),
                });
            }
            let k = best.0;
            for &g in pos.iter().take(k) {
                assign[g] = true;
            }
            for &g in neg.iter().take(q - k) {
                assign[g] = true;
            }
            for &g in &unlabeled {
                assign[g] = rng.random::<f64>() < spec.positive_rate;
            }
        }
    }

    let mut out = manifest.clone();
    if !out.declared_attributes.contains(&spec.attribute) {
        out.declared_attributes.push(spec.attribute.clone());
    }
    for (g, (_, idx)) in groups.iter().enumerate() {
        let sigma = if assign[g] {
            spec.sigma_pos
        } else {
            spec.sigma_neg
        } * spec.sigma_scale;
        for &i in idx {
            let record = &mut out.records[i];
            record.pixels = gaussian_filter(&record.pixels, sigma)?;
            record
                .attributes
                .insert(spec.attribute.clone(), Some(assign[g]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_util::record;
    use crate::data::{compute_phi, Field};
    use ndarray::Array2;

    /// `n` single-image patients with `round(prev * n)` label positives and
    /// random pixel content.
    fn labeled(n: usize, prev: f64) -> Manifest {
        let mut m = Manifest::new(vec!["pna".into(), "chf".into()], vec![]);
        let npos = (prev * n as f64).round() as usize;
        for i in 0..n {
            let id = format!("p{i:04}");
            let mut r = record(
                &id,
                &id,
                &[("pna", Some(i < npos)), ("chf", Some(i % 3 == 0))],
                &[],
            );
            r.pixels =
                Array2::from_shape_fn((6, 6), |(y, x)| ((y * 7 + x * 3 + i) % 11) as f64 / 10.0);
            m.records.push(r);
        }
        m
    }

    #[test]
    fn presets_are_verbatim() {
        assert_eq!(FilterPreset::Difficult.sigmas(), (0.3, 0.4));
        assert_eq!(FilterPreset::Moderate.sigmas(), (0.1, 0.2));
        assert_eq!(FilterPreset::Easy.sigmas(), (0.4, 0.5));
        assert_eq!(
            FilterBiasSpec::preset(FilterPreset::Easy).positive_rate,
            0.25
        );
        assert_eq!(
            "moderate".parse::<FilterPreset>().unwrap(),
            FilterPreset::Moderate
        );
        assert!("hard".parse::<FilterPreset>().is_err());
    }

    #[test]
    fn uncorrelated_assignment() {
        let m = labeled(1000, 0.5);
        let out =
            inject_filter_bias(&m, &FilterBiasSpec::preset(FilterPreset::Easy), None, 3).unwrap();
        let rate = out.positive_rate(&Field::attribute("filter")).unwrap();
        assert!((rate - 0.25).abs() <= 0.03, "rate {rate}");
        for task in ["pna", "chf"] {
            let phi = compute_phi(&out.records, task, "filter").unwrap();
            assert!(phi.abs() <= 0.05, "{task} phi {phi}");
        }
    }

    #[test]
    fn phi_one_tags_every_positive() {
        let m = labeled(400, 0.25);
        let corr = CorrelationSpec::new("pna", "filter", 1.0, 400, 0.25);
        let out = inject_filter_bias(
            &m,
            &FilterBiasSpec::preset(FilterPreset::Easy),
            Some(&corr),
            1,
        )
        .unwrap();
        for r in &out.records {
            if r.label("pna") == Some(true) {
                assert_eq!(r.attribute("filter"), Some(true));
            }
        }
        assert_eq!(compute_phi(&out.records, "pna", "filter").unwrap(), 1.0);
    }

    #[test]
    fn intermediate_phi_within_tolerance() {
        let m = labeled(600, 0.5);
        let spec = FilterBiasSpec::preset(FilterPreset::Difficult).with_positive_rate(0.5);
        for target in [-1.0, -0.6, -0.2, 0.0, 0.4, 0.8, 1.0] {
            let corr = CorrelationSpec::new("pna", "filter", target, 600, 0.5);
            let out = inject_filter_bias(&m, &spec, Some(&corr), 9).unwrap();
            let phi = compute_phi(&out.records, "pna", "filter").unwrap();
            assert!((phi - target).abs() <= 0.05, "target {target} got {phi}");
        }
    }

    #[test]
    fn infeasible_phi_reports_interval() {
        let m = labeled(400, 0.5);
        let corr = CorrelationSpec::new("pna", "filter", 1.0, 400, 0.5);
        match inject_filter_bias(
            &m,
            &FilterBiasSpec::preset(FilterPreset::Easy),
            Some(&corr),
            0,
        ) {
            Err(Error::InfeasiblePhi { low, high, .. }) => {
                // rate 0.25 with prevalence 0.5: |phi| <= sqrt(1/3)
                assert!((high - (1.0f64 / 3.0).sqrt()).abs() < 1e-9, "high {high}");
                assert!((low + (1.0f64 / 3.0).sqrt()).abs() < 1e-9, "low {low}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn labels_grouping_and_count_untouched() {
        let m = labeled(50, 0.4);
        let out = inject_filter_bias(&m, &FilterBiasSpec::preset(FilterPreset::Moderate), None, 2)
            .unwrap();
        assert_eq!(out.len(), m.len());
        for (a, b) in m.records.iter().zip(&out.records) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.patient_id, b.patient_id);
            assert_eq!(a.image_id, b.image_id);
            let sigma = if b.attribute("filter") == Some(true) {
                0.1
            } else {
                0.2
            };
            assert_eq!(b.pixels, gaussian_filter(&a.pixels, sigma).unwrap());
        }
        assert_eq!(
            out,
            inject_filter_bias(&m, &FilterBiasSpec::preset(FilterPreset::Moderate), None, 2)
                .unwrap()
        );
    }
}
