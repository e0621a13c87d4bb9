use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Contingency, Field, Manifest};
use crate::error::{Error, Result};

/// Requested patient fractions for train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidFractions(format!(
                "{parts:?} has a negative entry"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(format!("{parts:?} sums to {sum}")));
        }
        Ok(())
    }
}

/// Summary statistics of one split, recomputable from its records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n: usize,
    pub prevalence: BTreeMap<String, Option<f64>>,
    pub attribute_rate: BTreeMap<String, Option<f64>>,
    /// Keyed `task|attribute`; `None` when a marginal is degenerate.
    pub phi: BTreeMap<String, Option<f64>>,
}

impl SplitStats {
    pub fn compute(manifest: &Manifest) -> Self {
        let prevalence = manifest
            .declared_tasks
            .iter()
            .map(|t| (t.clone(), manifest.positive_rate(&Field::label(t))))
            .collect();
        let attribute_rate = manifest
            .declared_attributes
            .iter()
            .map(|a| (a.clone(), manifest.positive_rate(&Field::attribute(a))))
            .collect();
        let mut phi = BTreeMap::new();
        for t in &manifest.declared_tasks {
            for a in &manifest.declared_attributes {
                let table = Contingency::tabulate(
                    &manifest.records,
                    &Field::label(t),
                    &Field::attribute(a),
                );
                phi.insert(format!("{t}|{a}"), table.phi());
            }
        }
        Self {
            n: manifest.len(),
            prevalence,
            attribute_rate,
            phi,
        }
    }
}

/// Patient-disjoint train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub stats: BTreeMap<String, SplitStats>,
}

impl DatasetSplit {
    pub fn parts(&self) -> [(&'static str, &[String]); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    /// The manifest restricted to one named part.
    pub fn materialize(&self, manifest: &Manifest, part: &str) -> Result<Manifest> {
        let ids = match part {
            "train" => &self.train,
            "validation" => &self.validation,
            "test" => &self.test,
            other => return Err(Error::Config(format!("unknown split part `{other}`"))),
        };
        Ok(manifest.subset_patients(ids))
    }

    /// Checks disjointness and that stored stats match the records exactly.
    pub fn verify(&self, manifest: &Manifest) -> Result<()> {
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (name, ids) in self.parts() {
            for id in ids {
                if let Some(prev) = owner.insert(id.as_str(), name) {
                    return Err(Error::Config(format!(
                        "patient `{id}` appears in both {prev} and {name}"
                    )));
                }
            }
        }
        for (name, _) in self.parts() {
            let recomputed = SplitStats::compute(&self.materialize(manifest, name)?);
            if self.stats.get(name) != Some(&recomputed) {
                return Err(Error::Config(format!(
                    "stored stats for `{name}` are stale"
                )));
            }
        }
        Ok(())
    }

    /// Writes `{train, validation, test, stats}` as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Integer counts summing to `total`, each within one of `total * fraction`.
pub(crate) fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut remaining = total.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Largest fractional part first; earlier parts win ties.
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Shuffles patients with `seed` and deals them into three parts.
pub fn partition_by_patient(
    manifest: &Manifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    fractions.validate()?;
    if manifest.is_empty() {
        return Err(Error::InvalidFractions(
            "cannot partition an empty manifest".into(),
        ));
    }
    let mut patients = manifest.patient_ids();
    patients.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let counts = apportion(
        patients.len(),
        &[fractions.train, fractions.validation, fractions.test],
    );
    let mut rest = patients.into_iter();
    let mut take = |n: usize| -> Vec<String> {
        let mut part: Vec<String> = rest.by_ref().take(n).collect();
        part.sort();
        part
    };
    let train = take(counts[0]);
    let validation = take(counts[1]);
    let test = take(counts[2]);

    let stats = [
        ("train", &train),
        ("validation", &validation),
        ("test", &test),
    ]
    .into_iter()
    .map(|(name, ids)| {
        (
            name.to_string(),
            SplitStats::compute(&manifest.subset_patients(ids)),
        )
    })
    .collect();
    let split = DatasetSplit {
        train,
        validation,
        test,
        stats,
    };
    Ok(split)
}
