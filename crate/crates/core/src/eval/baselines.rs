//! Classical obfuscation baselines: blurring, additive noise, color quantization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{clamp_image, ImageTensor, CHANNELS};

pub const DEFAULT_BLUR_KERNEL: [usize; 2] = [3, 3];
pub const DEFAULT_NOISE_FACTOR: f64 = 0.02;
pub const DEFAULT_QUANTIZE_LEVELS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurKind {
    #[default]
    Gaussian,
    Box,
}

/// `0.3 * ((k - 1) / 2 - 1) + 0.8`
pub fn gaussian_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D kernel of odd size `k`.
pub fn kernel_1d(k: usize, kind: BlurKind) -> Vec<f64> {
    let r = (k / 2) as isize;
    let raw: Vec<f64> = match kind {
        BlurKind::Box => vec![1.0; k],
        BlurKind::Gaussian => {
            let s = gaussian_sigma(k);
            (-r..=r)
                .map(|i| (-(i * i) as f64 / (2.0 * s * s)).exp())
                .collect()
        }
    };
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable blur with `kernel = [kx, ky]`, edge-replicated borders.
pub fn blur(image: &ImageTensor, kernel: [usize; 2], kind: BlurKind) -> Result<ImageTensor> {
    let [kx, ky] = kernel;
    if kx % 2 == 0 || ky % 2 == 0 {
        return Err(Error::Argument(format!(
            "blur kernel {kx}x{ky} must have odd dimensions"
        )));
    }
    let (h, w) = (image.height(), image.width());
    let (gx, gy) = (kernel_1d(kx, kind), kernel_1d(ky, kind));
    let (rx, ry) = ((kx / 2) as isize, (ky / 2) as isize);
    let src = image.values();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (i, g) in gx.iter().enumerate() {
                    let xx = clampi(x as isize + i as isize - rx, w);
                    acc += g * src[(y * w + xx) * CHANNELS + c];
                }
                tmp[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (i, g) in gy.iter().enumerate() {
                    let yy = clampi(y as isize + i as isize - ry, h);
                    acc += g * tmp[(yy * w + x) * CHANNELS + c];
                }
                out[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    clamp_image(h, w, CHANNELS, out)
}

/// Adds zero-mean Gaussian noise with standard deviation `noise_factor`
/// (the dynamic range is 1) and clips back into `[0, 1]`.
pub fn add_noise(image: &ImageTensor, noise_factor: f64, seed: u64) -> Result<ImageTensor> {
    if !(noise_factor >= 0.0 && noise_factor.is_finite()) {
        return Err(Error::Argument(format!(
            "noise factor {noise_factor} must be finite and non-negative"
        )));
    }
    if noise_factor == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, noise_factor).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = image
        .values()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    clamp_image(image.height(), image.width(), CHANNELS, values)
}

/// Uniform per-channel quantization to `levels` values: `round(v (L - 1)) / (L - 1)`.
pub fn quantize(image: &ImageTensor, levels: usize) -> Result<ImageTensor> {
    if levels < 2 {
        return Err(Error::Argument(format!(
            "quantization needs at least 2 levels, got {levels}"
        )));
    }
    let steps = (levels - 1) as f64;
    let values = image
        .values()
        .iter()
        .map(|v| (v * steps).round() / steps)
        .collect();
    clamp_image(image.height(), image.width(), CHANNELS, values)
}
