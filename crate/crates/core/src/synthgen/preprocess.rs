//! Border trim, histogram equalization, aspect-preserving resize, and
//! crop/rotation augmentation.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::filter::reflect;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    /// Smaller-axis length after resizing.
    pub resize: usize,
    /// Output side `c`.
    pub crop: usize,
    /// Rotation drawn uniformly from `[-r, r]` degrees in train mode.
    pub max_rotation_deg: f64,
}

impl PreprocessParams {
    pub fn new(crop: usize) -> Self {
        Self {
            resize: crop,
            crop,
            max_rotation_deg: 15.0,
        }
    }
}

/// Drops all-zero rows and columns at the image edges.
pub fn trim_border(image: &Array2<f64>) -> Array2<f64> {
    let (h, w) = image.dim();
    let row_zero = |r: usize| image.row(r).iter().all(|&v| v == 0.0);
    let col_zero = |c: usize| image.column(c).iter().all(|&v| v == 0.0);
    let Some(top) = (0..h).find(|&r| !row_zero(r)) else {
        return image.clone();
    };
    let bottom = (0..h).rev().find(|&r| !row_zero(r)).unwrap();
    let left = (0..w).find(|&c| !col_zero(c)).unwrap();
    let right = (0..w).rev().find(|&c| !col_zero(c)).unwrap();
    image.slice(s![top..=bottom, left..=right]).to_owned()
}

/// 256-bin histogram equalization on `[0, 1]`.
///
/// Uses `(cdf(v) - cdf_min) / (N - cdf_min)`; an image occupying a single
/// bin is returned unchanged.
pub fn equalize_histogram(image: &Array2<f64>) -> Array2<f64> {
    const BINS: usize = 256;
    let bin = |v: f64| ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
    let mut hist = [0usize; BINS];
    for &v in image {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0usize; BINS];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let total = image.len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if total == cdf_min {
        return image.clone();
    }
    let denom = (total - cdf_min) as f64;
    image.mapv(|v| (cdf[bin(v)] - cdf_min) as f64 / denom)
}

/// Bilinear sample with half-sample symmetric boundary handling.
fn sample(image: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = image.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |r: i64, c: i64| image[[reflect(r, h), reflect(c, w)]];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
        + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
}

/// Bilinear resize to `(out_h, out_w)` using pixel-center alignment.
pub fn resize(image: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = image.dim();
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        sample(image, y, x)
    })
}

/// Resizes so the smaller axis equals `side`, preserving aspect ratio.
pub fn resize_smaller_axis(image: &Array2<f64>, side: usize) -> Array2<f64> {
    let (h, w) = image.dim();
    if h <= w {
        let new_w = ((w as f64 * side as f64 / h as f64).round() as usize).max(side);
        resize(image, side, new_w)
    } else {
        let new_h = ((h as f64 * side as f64 / w as f64).round() as usize).max(side);
        resize(image, new_h, side)
    }
}

pub fn center_crop(image: &Array2<f64>, side: usize) -> Array2<f64> {
    let (h, w) = image.dim();
    let top = (h - side) / 2;
    let left = (w - side) / 2;
    image
        .slice(s![top..top + side, left..left + side])
        .to_owned()
}

/// Rotates about the image center; corners are filled by reflection.
pub fn rotate(image: &Array2<f64>, degrees: f64) -> Array2<f64> {
    if degrees == 0.0 {
        return image.clone();
    }
    let (h, w) = image.dim();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        // inverse mapping: output pixel -> source location
        let y = cos * dy - sin * dx + cy;
        let x = sin * dy + cos * dx + cx;
        sample(image, y, x)
    })
}

/// Full pipeline: trim, equalize, resize, then crop (and rotate in train mode).
pub fn preprocess(
    image: &Array2<f64>,
    mode: Mode,
    params: &PreprocessParams,
    seed: u64,
) -> Result<Array2<f64>> {
    if params.crop == 0 || image.is_empty() {
        return Err(Error::Shape(
            "cannot preprocess an empty image or to a zero crop".into(),
        ));
    }
    if params.resize < params.crop {
        return Err(Error::Shape(format!(
            "image smaller than crop after resize ({} < {})",
            params.resize, params.crop
        )));
    }
    let trimmed = trim_border(image);
    let equalized = equalize_histogram(&trimmed);
    let resized = resize_smaller_axis(&equalized, params.resize);
    let (h, w) = resized.dim();
    if h < params.crop || w < params.crop {
        return Err(Error::Shape(format!(
            "image smaller than crop after resize ({h}x{w} < {})",
            params.crop
        )));
    }
    match mode {
        Mode::Eval => Ok(center_crop(&resized, params.crop)),
        Mode::Train => {
            let mut rng = rng_for(seed, 0);
            let top = rng.random_range(0..=h - params.crop);
            let left = rng.random_range(0..=w - params.crop);
            let cropped = resized
                .slice(s![top..top + params.crop, left..left + params.crop])
                .to_owned();
            let r = params.max_rotation_deg;
            let angle = if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            };
            Ok(rotate(&cropped, angle))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(r, c)| {
            0.05 + 0.9 * ((r * w + c) as f64 / (h * w) as f64).sqrt()
        })
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Array2::from_elem((12, 12), 0.42);
        let out = preprocess(&img, Mode::Eval, &PreprocessParams::new(12), 0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn eval_mode_is_pure() {
        let img = gradient(20, 26);
        let p = PreprocessParams::new(16);
        assert_eq!(
            preprocess(&img, Mode::Eval, &p, 1).unwrap(),
            preprocess(&img, Mode::Eval, &p, 2).unwrap()
        );
    }

    #[test]
    fn train_identity_when_no_crop_or_rotation() {
        let img = gradient(16, 16);
        let p = PreprocessParams {
            resize: 16,
            crop: 16,
            max_rotation_deg: 0.0,
        };
        let out = preprocess(&img, Mode::Train, &p, 7).unwrap();
        assert_eq!(out, equalize_histogram(&img));
    }

    #[test]
    fn train_mode_is_seeded() {
        let img = gradient(24, 30);
        let p = PreprocessParams::new(20);
        let a = preprocess(&img, Mode::Train, &p, 3).unwrap();
        assert_eq!(a, preprocess(&img, Mode::Train, &p, 3).unwrap());
        assert_eq!(a.dim(), (20, 20));
    }

    #[test]
    fn border_is_trimmed() {
        let mut img = Array2::zeros((10, 12));
        img.slice_mut(s![2..8, 3..10]).fill(0.5);
        img[[4, 5]] = 0.9;
        assert_eq!(trim_border(&img).dim(), (6, 7));
        assert_eq!(trim_border(&Array2::zeros((3, 3))).dim(), (3, 3));
    }

    #[test]
    fn resize_preserves_aspect() {
        let img = gradient(40, 60);
        assert_eq!(resize_smaller_axis(&img, 20).dim(), (20, 30));
        let img = gradient(60, 40);
        assert_eq!(resize_smaller_axis(&img, 20).dim(), (30, 20));
    }

    #[test]
    fn too_small_resize_is_error() {
        let p = PreprocessParams {
            resize: 8,
            crop: 10,
            max_rotation_deg: 0.0,
        };
        assert!(preprocess(&gradient(20, 20), Mode::Eval, &p, 0).is_err());
    }

    #[test]
    fn equalization_spreads_values() {
        let img = gradient(16, 16);
        let eq = equalize_histogram(&img);
        assert_eq!(eq.iter().cloned().fold(f64::MAX, f64::min), 0.0);
        assert_eq!(eq.iter().cloned().fold(f64::MIN, f64::max), 1.0);
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let img = gradient(9, 9);
        assert_eq!(rotate(&img, 0.0), img);
        let r = rotate(&img, 90.0);
        assert!((r[[4, 4]] - img[[4, 4]]).abs() < 1e-12);
    }
}
