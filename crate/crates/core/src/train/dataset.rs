use std::collections::BTreeMap;

use ndarray::{Array3, Axis};
use sha2::{Digest, Sha256};

use crate::data::{Binary, Manifest};
use crate::error::{Error, Result};
use crate::model::stack_images;

/// Images stacked into one array with per-task label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub images: Array3<f64>,
    pub labels: BTreeMap<String, Vec<Binary>>,
}

impl TrainSet {
    pub fn from_manifest(manifest: &Manifest, tasks: &[&str]) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::MissingDataset("empty record set".into()));
        }
        let side = manifest.image_side().unwrap();
        if manifest
            .records
            .iter()
            .any(|r| r.pixels.dim() != (side, side))
        {
            return Err(Error::Shape("images differ in size".into()));
        }
        let labels = tasks
            .iter()
            .map(|t| {
                (
                    t.to_string(),
                    manifest.records.iter().map(|r| r.label(t)).collect(),
                )
            })
            .collect();
        Ok(Self {
            images: stack_images(manifest.records.iter().map(|r| &r.pixels)),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tasks(&self) -> Vec<String> {
        self.labels.keys().cloned().collect()
    }

    /// Appends `other`; tasks absent from one side become missing there.
    pub fn concat(&self, other: &TrainSet) -> Result<TrainSet> {
        let images = ndarray::concatenate(Axis(0), &[self.images.view(), other.images.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut labels = BTreeMap::new();
        for task in self.labels.keys().chain(other.labels.keys()) {
            let column = |s: &TrainSet| {
                s.labels
                    .get(task)
                    .cloned()
                    .unwrap_or_else(|| vec![None; s.len()])
            };
            let mut col = column(self);
            col.extend(column(other));
            labels.insert(task.clone(), col);
        }
        Ok(TrainSet { images, labels })
    }

    /// SHA-256 over pixels and label columns.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.images {
            h.update(v.to_le_bytes());
        }
        for (task, col) in &self.labels {
            h.update(task.as_bytes());
            h.update(
                col.iter()
                    .map(|v| v.map_or(2u8, u8::from))
                    .collect::<Vec<u8>>(),
            );
        }
        hex::encode(h.finalize())
    }

    /// Labels restricted to rows `idx`.
    pub fn label_rows(&self, idx: &[usize]) -> BTreeMap<String, Vec<Binary>> {
        self.labels
            .iter()
            .map(|(t, col)| (t.clone(), idx.iter().map(|&i| col[i]).collect()))
            .collect()
    }
}
