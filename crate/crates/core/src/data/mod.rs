//! Image records, manifests, patient-level partitioning, and the phi
//! coefficient between binary fields.

mod correlation;
mod manifest;
mod phi;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array2;

use crate::error::{Error, Result};

pub use correlation::CorrelationSpec;
pub use manifest::{load_manifest, write_manifest, BitDepth};
pub use phi::{compute_phi, compute_phi_fields, Contingency};
pub use split::{partition_by_patient, DatasetSplit, SplitFractions, SplitStats};

/// A binary value that may be missing.
pub type Binary = Option<bool>;

/// One grayscale image with its identity and binary annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub patient_id: String,
    pub study_id: String,
    /// Row-major grayscale intensities in `[0, 1]`.
    pub pixels: Array2<f64>,
    pub labels: BTreeMap<String, Binary>,
    pub attributes: BTreeMap<String, Binary>,
}

impl ImageRecord {
    pub fn label(&self, task: &str) -> Binary {
        self.labels.get(task).copied().flatten()
    }

    pub fn attribute(&self, name: &str) -> Binary {
        self.attributes.get(name).copied().flatten()
    }

    pub fn field(&self, field: &Field) -> Binary {
        match field {
            Field::Label(name) => self.label(name),
            Field::Attribute(name) => self.attribute(name),
        }
    }
}

/// Names a binary column of a record: a task label or an attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Label(String),
    Attribute(String),
}

impl Field {
    pub fn label(name: impl Into<String>) -> Self {
        Field::Label(name.into())
    }

    pub fn attribute(name: impl Into<String>) -> Self {
        Field::Attribute(name.into())
    }
}

/// An ordered collection of records with declared label and attribute columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub declared_tasks: Vec<String>,
    pub declared_attributes: Vec<String>,
}

impl Manifest {
    pub fn new(declared_tasks: Vec<String>, declared_attributes: Vec<String>) -> Self {
        Self {
            records: Vec::new(),
            declared_tasks,
            declared_attributes,
        }
    }

    /// Appends a record after checking its keys and id uniqueness.
    pub fn push(&mut self, record: ImageRecord) -> Result<()> {
        self.check_record(&record)?;
        if self.records.iter().any(|r| r.image_id == record.image_id) {
            return Err(Error::DuplicateImage(record.image_id));
        }
        self.records.push(record);
        Ok(())
    }

    /// Builds a manifest from records, validating every invariant.
    pub fn from_records(
        declared_tasks: Vec<String>,
        declared_attributes: Vec<String>,
        records: Vec<ImageRecord>,
    ) -> Result<Self> {
        let manifest = Self {
            records,
            declared_tasks,
            declared_attributes,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for record in &self.records {
            self.check_record(record)?;
            if !seen.insert(record.image_id.as_str()) {
                return Err(Error::DuplicateImage(record.image_id.clone()));
            }
        }
        Ok(())
    }

    fn check_record(&self, record: &ImageRecord) -> Result<()> {
        for key in record.labels.keys() {
            if !self.declared_tasks.contains(key) {
                return Err(Error::Config(format!(
                    "record `{}` carries undeclared task `{key}`",
                    record.image_id
                )));
            }
        }
        for key in record.attributes.keys() {
            if !self.declared_attributes.contains(key) {
                return Err(Error::Config(format!(
                    "record `{}` carries undeclared attribute `{key}`",
                    record.image_id
                )));
            }
        }
        let (h, w) = record.pixels.dim();
        if h != w {
            return Err(Error::Shape(format!(
                "record `{}` is {h}x{w}, expected a square image",
                record.image_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Patient ids in order of first appearance.
    pub fn patient_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.patient_id.as_str()))
            .map(|r| r.patient_id.clone())
            .collect()
    }

    /// Record indices grouped by patient, patients in order of first appearance.
    pub fn patient_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, record) in self.records.iter().enumerate() {
            match index.get(record.patient_id.as_str()) {
                Some(&slot) => order[slot].1.push(i),
                None => {
                    index.insert(record.patient_id.as_str(), order.len());
                    order.push((record.patient_id.clone(), vec![i]));
                }
            }
        }
        order
    }

    /// Records belonging to the given patients, preserving manifest order.
    pub fn subset_patients<S: AsRef<str>>(&self, patients: &[S]) -> Manifest {
        let keep: HashSet<&str> = patients.iter().map(|p| p.as_ref()).collect();
        self.filter(|r| keep.contains(r.patient_id.as_str()))
    }

    pub fn filter(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            declared_tasks: self.declared_tasks.clone(),
            declared_attributes: self.declared_attributes.clone(),
        }
    }

    /// Copies attribute `name` into a task label of the same name so a model
    /// can be trained to predict it.
    pub fn promote_attribute(&self, name: &str) -> Manifest {
        let mut out = self.clone();
        if !out.declared_tasks.iter().any(|t| t == name) {
            out.declared_tasks.push(name.to_string());
        }
        for record in &mut out.records {
            let value = record.attribute(name);
            record.labels.insert(name.to_string(), value);
        }
        out
    }

    /// Keeps only the named labels; other label columns are dropped.
    pub fn restrict_tasks(&self, tasks: &[&str]) -> Manifest {
        let mut out = self.clone();
        out.declared_tasks.retain(|t| tasks.contains(&t.as_str()));
        for record in &mut out.records {
            record.labels.retain(|k, _| tasks.contains(&k.as_str()));
        }
        out
    }

    /// Concatenates two manifests with compatible columns.
    pub fn concat(&self, other: &Manifest) -> Result<Manifest> {
        let mut tasks = self.declared_tasks.clone();
        for t in &other.declared_tasks {
            if !tasks.contains(t) {
                tasks.push(t.clone());
            }
        }
        let mut attrs = self.declared_attributes.clone();
        for a in &other.declared_attributes {
            if !attrs.contains(a) {
                attrs.push(a.clone());
            }
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Manifest::from_records(tasks, attrs, records)
    }

    /// SHA-256 over ids, annotations and pixel values in record order.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for name in self.declared_tasks.iter().chain(&self.declared_attributes) {
            h.update(name.as_bytes());
            h.update([0]);
        }
        let code = |v: Binary| v.map_or(2u8, u8::from);
        for r in &self.records {
            for id in [&r.image_id, &r.patient_id, &r.study_id] {
                h.update(id.as_bytes());
                h.update([0]);
            }
            for (k, v) in r.labels.iter().chain(&r.attributes) {
                h.update(k.as_bytes());
                h.update([0, code(*v)]);
            }
            for v in &r.pixels {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Side length shared by every record, if any.
    pub fn image_side(&self) -> Option<usize> {
        self.records.first().map(|r| r.pixels.nrows())
    }

    /// Fraction of non-missing values of `field` that are positive.
    pub fn positive_rate(&self, field: &Field) -> Option<f64> {
        let (pos, n) = self
            .records
            .iter()
            .filter_map(|r| r.field(field))
            .fold((0usize, 0usize), |(p, n), v| (p + v as usize, n + 1));
        (n > 0).then(|| pos as f64 / n as f64)
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// A record with a constant 4x4 image.
    pub fn record(
        id: &str,
        patient: &str,
        labels: &[(&str, Binary)],
        attrs: &[(&str, Binary)],
    ) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            patient_id: patient.into(),
            study_id: format!("s-{patient}"),
            pixels: Array2::from_elem((4, 4), 0.5),
            labels: labels.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// One single-image patient per contingency cell count.
    pub fn table_manifest(n11: usize, n10: usize, n01: usize, n00: usize) -> Manifest {
        let mut m = Manifest::new(vec!["y".into()], vec!["b".into()]);
        let mut k = 0;
        for (count, y, b) in [
            (n11, true, true),
            (n10, true, false),
            (n01, false, true),
            (n00, false, false),
        ] {
            for _ in 0..count {
                let id = format!("p{k}");
                m.records
                    .push(record(&id, &id, &[("y", Some(y))], &[("b", Some(b))]));
                k += 1;
            }
        }
        m
    }
}
