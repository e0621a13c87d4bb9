//! Gradient-weighted class activation maps.

use ndarray::{Array2, Array3, Axis};

use super::network::ModelState;
use crate::error::Result;
use crate::synthgen::preprocess::resize;

/// Saliency map for one image and task, upscaled to the input size and
/// min-max normalized to `[0, 1]` (a constant map becomes all zeros).
///
/// Channel weights are the spatially averaged gradients of the task logit
/// with respect to the final feature maps. With global average pooling
/// followed by a linear head, that gradient is `w_c / (h * w)` at every
/// position.
pub fn gradcam(state: &ModelState, image: &Array2<f64>, task: &str) -> Result<Array2<f64>> {
    let head = state.head(task)?;
    let d = image.nrows();
    let batch = image.clone().insert_axis(Axis(0));
    let (maps, _) = state.feature_maps(&Array3::from(batch))?;
    let (_, _, h, w) = maps.dim();
    let area = (h * w) as f64;
    let mut cam = Array2::<f64>::zeros((h, w));
    for (c, alpha) in head.weight.iter().enumerate() {
        cam.scaled_add(
            alpha / area,
            &maps.index_axis(Axis(0), c).index_axis(Axis(0), 0),
        );
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let up = upscale(&cam, d);
    Ok(min_max_normalize(up))
}

/// Bilinear resize of a coarse map to `side x side` (pixel centres aligned).
pub fn upscale(map: &Array2<f64>, side: usize) -> Array2<f64> {
    resize(map, side, side)
}

pub fn min_max_normalize(mut map: Array2<f64>) -> Array2<f64> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        map.fill(0.0);
    } else {
        map.mapv_inplace(|v| (v - lo) / (hi - lo));
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn shape_and_range() {
        let mut state = ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["b"], 3).unwrap();
        state.heads.get_mut("b").unwrap().weight.fill(1.0);
        let image = Array2::from_shape_fn((16, 16), |(y, x)| ((y * x) % 7) as f64 / 7.0);
        let cam = gradcam(&state, &image, "b").unwrap();
        assert_eq!(cam.dim(), (16, 16));
        assert!(cam.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(gradcam(&state, &image, "missing").is_err());
    }

    #[test]
    fn zero_encoder_gives_zero_map() {
        let mut state = ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["b"], 3).unwrap();
        for b in &mut state.blocks {
            b.weight.fill(0.0);
        }
        state.heads.get_mut("b").unwrap().weight.fill(1.0);
        let cam = gradcam(&state, &Array2::from_elem((16, 16), 0.7), "b").unwrap();
        assert!(cam.iter().all(|&v| v == 0.0));
    }
}
