//! Manifest CSV plus a directory of grayscale PNG images.
//!
//! Header: `patient_id,study_id,image_id,image_path`, then one `label:<task>`
//! column per task and one `attr:<name>` column per attribute. Binary cells
//! hold `1`, `0`, or nothing for a missing value.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use image::{ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Binary, ImageRecord, Manifest};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["patient_id", "study_id", "image_id", "image_path"];

/// On-disk PNG sample depth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn parse_binary(cell: &str) -> Option<Binary> {
    match cell.trim() {
        "" => Some(None),
        "1" => Some(Some(true)),
        "0" => Some(Some(false)),
        _ => None,
    }
}

fn format_binary(value: Binary) -> &'static str {
    match value {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

/// Reads a grayscale PNG (8- or 16-bit) into `[0, 1]` intensities.
pub fn read_png(path: &Path) -> std::result::Result<Array2<f64>, image::ImageError> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    Ok(Array2::from_shape_vec((h as usize, w as usize), data).expect("buffer matches dimensions"))
}

/// Writes `[0, 1]` intensities as a grayscale PNG at the given depth.
pub fn write_png(path: &Path, pixels: &Array2<f64>, depth: BitDepth) -> Result<()> {
    let (h, w) = pixels.dim();
    let scale = depth.max_value();
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * scale).round();
    match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = pixels.iter().map(|&v| quantize(v) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, raw)
                .expect("buffer matches dimensions")
                .save(path)?;
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = pixels.iter().map(|&v| quantize(v) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, raw)
                .expect("buffer matches dimensions")
                .save(path)?;
        }
    }
    Ok(())
}

/// Loads a manifest CSV; `image_path` cells resolve against `image_root`.
pub fn load_manifest(path: &Path, image_root: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(*expected) {
            return Err(Error::MalformedRow {
                row: 0,
                reason: format!("header column {i} must be `{expected}`"),
            });
        }
    }
    let mut tasks = Vec::new();
    let mut attrs = Vec::new();
    for h in headers.iter().skip(FIXED_COLUMNS.len()) {
        if let Some(name) = h.strip_prefix("label:") {
            tasks.push(name.to_string());
        } else if let Some(name) = h.strip_prefix("attr:") {
            attrs.push(name.to_string());
        } else {
            return Err(Error::MalformedRow {
                row: 0,
                reason: format!("unrecognised column `{h}`"),
            });
        }
    }

    let mut manifest = Manifest::new(tasks.clone(), attrs.clone());
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        let image_id = row[2].to_string();
        if image_id.is_empty() {
            return Err(Error::MalformedRow {
                row: row_no,
                reason: "empty image_id".into(),
            });
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateImage(image_id));
        }
        let mut labels = BTreeMap::new();
        let mut attributes = BTreeMap::new();
        for (j, h) in headers.iter().enumerate().skip(FIXED_COLUMNS.len()) {
            let value = parse_binary(&row[j]).ok_or_else(|| Error::MalformedRow {
                row: row_no,
                reason: format!("column `{h}` holds `{}`, expected 0, 1, or blank", &row[j]),
            })?;
            if let Some(name) = h.strip_prefix("label:") {
                labels.insert(name.to_string(), value);
            } else if let Some(name) = h.strip_prefix("attr:") {
                attributes.insert(name.to_string(), value);
            }
        }
        let pixels = read_png(&image_root.join(&row[3])).map_err(|e| Error::UnreadableImage {
            image_id: image_id.clone(),
            reason: e.to_string(),
        })?;
        manifest.records.push(ImageRecord {
            image_id,
            patient_id: row[0].to_string(),
            study_id: row[1].to_string(),
            pixels,
            labels,
            attributes,
        });
    }
    Ok(manifest)
}

/// Writes `manifest.csv`-style output at `csv_path` and one PNG per record
/// under `image_dir`. CSV paths are relative to the CSV's directory when
/// `image_dir` lies inside it, so the pair can be moved together.
pub fn write_manifest(
    manifest: &Manifest,
    csv_path: &Path,
    image_dir: &Path,
    depth: BitDepth,
) -> Result<()> {
    std::fs::create_dir_all(image_dir)?;
    let csv_dir = csv_path.parent().unwrap_or(Path::new(""));
    let prefix = image_dir.strip_prefix(csv_dir).unwrap_or(image_dir);
    let mut writer = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(manifest.declared_tasks.iter().map(|t| format!("label:{t}")));
    header.extend(
        manifest
            .declared_attributes
            .iter()
            .map(|a| format!("attr:{a}")),
    );
    writer.write_record(&header)?;
    for record in &manifest.records {
        let file = format!("{}.png", record.image_id);
        write_png(&image_dir.join(&file), &record.pixels, depth)?;
        let mut row = vec![
            record.patient_id.clone(),
            record.study_id.clone(),
            record.image_id.clone(),
            prefix.join(&file).to_string_lossy().into_owned(),
        ];
        row.extend(
            manifest
                .declared_tasks
                .iter()
                .map(|t| format_binary(record.label(t)).to_string()),
        );
        row.extend(
            manifest
                .declared_attributes
                .iter()
                .map(|a| format_binary(record.attribute(a)).to_string()),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
