use ndarray::Array2;

use crate::error::{Error, Result};

/// Normalized 1-D Gaussian weights on `[-R, R]` with `R = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn convolve_axis(src: &Array2<f64>, kernel: &[f64], along_rows: bool) -> Array2<f64> {
    let (h, w) = src.dim();
    let radius = (kernel.len() / 2) as i64;
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let off = k as i64 - radius;
                acc += wk
                    * if along_rows {
                        src[[r, reflect(c as i64 + off, w)]]
                    } else {
                        src[[reflect(r as i64 + off, h), c]]
                    };
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with reflect-padded borders; `sigma = 0` is the identity.
pub fn gaussian_filter(image: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "gaussian sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 || image.is_empty() {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_axis(image, &kernel, true);
    Ok(convolve_axis(&rows, &kernel, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Array2::from_shape_fn((5, 7), |(r, c)| (r * 7 + c) as f64 / 35.0);
        assert_eq!(gaussian_filter(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_filter(&Array2::zeros((3, 3)), -0.1).is_err());
    }

    #[test]
    fn constant_image_is_fixed() {
        let img = Array2::from_elem((9, 9), 0.37);
        for sigma in [0.3, 1.0, 3.5] {
            let out = gaussian_filter(&img, sigma).unwrap();
            assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn impulse_response_is_the_discrete_gaussian() {
        let sigma = 0.3;
        let mut img = Array2::zeros((11, 11));
        img[[5, 5]] = 1.0;
        let out = gaussian_filter(&img, sigma).unwrap();
        // direct 2-D evaluation over the truncated window
        let radius = (4.0f64 * sigma).ceil() as i64;
        let mut z = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                z += (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        for r in 0..11i64 {
            for c in 0..11i64 {
                let (dy, dx) = (r - 5, c - 5);
                let expected = if dy.abs() <= radius && dx.abs() <= radius {
                    (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp() / z
                } else {
                    0.0
                };
                assert!(
                    (out[[r as usize, c as usize]] - expected).abs() < 1e-15,
                    "({r},{c})"
                );
            }
        }
    }

    #[test]
    fn impulse_peak_decreases_with_sigma() {
        let mut img = Array2::zeros((15, 15));
        img[[7, 7]] = 1.0;
        let peaks: Vec<f64> = [0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .map(|&s| gaussian_filter(&img, s).unwrap()[[7, 7]])
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] < w[0]), "{peaks:?}");
    }

    #[test]
    fn reflect_maps_into_range() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(9, 4), 1);
        assert_eq!(reflect(-9, 2), 0);
    }

    proptest! {
        #[test]
        fn mean_is_preserved(
            side in 3usize..20,
            sigma in 0.05f64..6.0,
            seed in any::<u64>(),
        ) {
            let mut state = seed | 1;
            let img = Array2::from_shape_fn((side, side + 1), |_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state % 10_000) as f64 / 10_000.0
            });
            let out = gaussian_filter(&img, sigma).unwrap();
            prop_assert_eq!(out.dim(), img.dim());
            prop_assert!((out.mean().unwrap() - img.mean().unwrap()).abs() <= 1e-6);
        }
    }
}
