//! Full-reference similarity metrics at unit dynamic range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ImageTensor, CHANNELS};

fn check_pair(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Structural(format!(
            "cannot compare {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.values().len() as f64)
}

/// `-10 log10(mse)` for unit range; `+inf` when the error is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean local SSIM over every full `window x window` uniform window,
/// computed per channel and averaged over channels.
///
/// Local variances and covariance use the sample (N - 1) normalization.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, cfg: &SsimConfig) -> Result<f64> {
    check_pair(a, b)?;
    let win = cfg.window;
    if win < 2 || a.height() < win || a.width() < win {
        return Err(Error::Argument(format!(
            "SSIM window {win} does not fit a {}x{} image",
            a.height(),
            a.width()
        )));
    }
    let total: f64 = (0..CHANNELS)
        .map(|c| ssim_plane(&a.channel_plane(c), &b.channel_plane(c), a.height(), a.width(), cfg))
        .sum();
    Ok(total / CHANNELS as f64)
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let win = cfg.window;
    let c1 = cfg.k1 * cfg.k1;
    let c2 = cfg.k2 * cfg.k2;
    let n = (win * win) as f64;
    let cov_norm = n / (n - 1.0);
    let sx = SummedArea::new(x, h, w, |a, _| a);
    let sy = SummedArea::new(y, h, w, |_, b| b);
    let sxx = SummedArea::pair(x, x, h, w);
    let syy = SummedArea::pair(y, y, h, w);
    let sxy = SummedArea::pair(x, y, h, w);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let mx = sx.window(y0, x0, win) / n;
            let my = sy.window(y0, x0, win) / n;
            let vx = cov_norm * (sxx.window(y0, x0, win) / n - mx * mx);
            let vy = cov_norm * (syy.window(y0, x0, win) / n - my * my);
            let vxy = cov_norm * (sxy.window(y0, x0, win) / n - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * vxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Integral image with one row/column of zero padding.
struct SummedArea {
    w1: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(x: &[f64], h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::build(h, w, |i| f(x[i], x[i]))
    }

    fn pair(x: &[f64], y: &[f64], h: usize, w: usize) -> Self {
        Self::build(h, w, |i| x[i] * y[i])
    }

    fn build(h: usize, w: usize, value: impl Fn(usize) -> f64) -> Self {
        let w1 = w + 1;
        let mut table = vec![0.0; (h + 1) * w1];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += value(r * w + c);
                table[(r + 1) * w1 + c + 1] = table[r * w1 + c + 1] + row;
            }
        }
        Self { w1, table }
    }

    fn window(&self, y0: usize, x0: usize, win: usize) -> f64 {
        let t = &self.table;
        let (y1, x1) = (y0 + win, x0 + win);
        t[y1 * self.w1 + x1] - t[y0 * self.w1 + x1] - t[y1 * self.w1 + x0] + t[y0 * self.w1 + x0]
    }
}

/// Studholme normalized mutual information `(H(A) + H(B)) / H(A, B)` on
/// luma-converted frames, `bins` equal-width bins over `[0, 1]`, natural log.
///
/// Two constant frames have zero joint entropy; that case returns 2.
pub fn nmi(a: &ImageTensor, b: &ImageTensor, bins: usize) -> Result<f64> {
    check_pair(a, b)?;
    if bins < 2 {
        return Err(Error::Argument(format!("NMI needs at least 2 bins, got {bins}")));
    }
    let (la, lb) = (a.luma(), b.luma());
    let mut joint = vec![0u64; bins * bins];
    for (x, y) in la.iter().zip(&lb) {
        joint[bin_of(*x, bins) * bins + bin_of(*y, bins)] += 1;
    }
    let total = la.len() as f64;
    let mut pa = vec![0u64; bins];
    let mut pb = vec![0u64; bins];
    for i in 0..bins {
        for j in 0..bins {
            pa[i] += joint[i * bins + j];
            pb[j] += joint[i * bins + j];
        }
    }
    let entropy = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum()
    };
    let hab = entropy(&joint);
    if hab == 0.0 {
        return Ok(2.0);
    }
    Ok((entropy(&pa) + entropy(&pb)) / hab)
}

/// Bin index of a value in `[0, 1]`; 1.0 falls into the last bin.
pub(crate) fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub ssim: f64,
    pub mse: f64,
    /// `None` stands for +inf (identical frames) in serialized form.
    #[serde(with = "inf_as_null")]
    pub psnr: f64,
    pub nmi: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub ssim: SsimConfig,
    pub nmi_bins: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            nmi_bins: 100,
        }
    }
}

pub fn similarity(a: &ImageTensor, b: &ImageTensor, cfg: &MetricConfig) -> Result<SimilarityReport> {
    let m = mse(a, b)?;
    Ok(SimilarityReport {
        ssim: ssim(a, b, &cfg.ssim)?,
        mse: m,
        psnr: psnr_from_mse(m),
        nmi: nmi(a, b, cfg.nmi_bins)?,
    })
}

/// Mean of each metric over frame pairs. PSNR is recomputed from the mean MSE.
pub fn mean_similarity(
    originals: &[ImageTensor],
    transformed: &[ImageTensor],
    cfg: &MetricConfig,
) -> Result<SimilarityReport> {
    if originals.len() != transformed.len() || originals.is_empty() {
        return Err(Error::Structural(format!(
            "need equally many non-zero frames, got {} and {}",
            originals.len(),
            transformed.len()
        )));
    }
    let n = originals.len() as f64;
    let (mut s, mut m, mut i) = (0.0, 0.0, 0.0);
    for (a, b) in originals.iter().zip(transformed) {
        let r = similarity(a, b, cfg)?;
        s += r.ssim;
        m += r.mse;
        i += r.nmi;
    }
    Ok(SimilarityReport {
        ssim: s / n,
        mse: m / n,
        psnr: psnr_from_mse(m / n),
        nmi: i / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn identical_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(16, 16, &mut rng);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        assert!((ssim(&x, &x, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmi(&x, &x, 100).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mse_unit_range_examples() {
        let zero = ImageTensor::filled(8, 8, 0.0).unwrap();
        let one = ImageTensor::filled(8, 8, 1.0).unwrap();
        let half = ImageTensor::filled(8, 8, 0.5).unwrap();
        assert_eq!(mse(&zero, &one).unwrap(), 1.0);
        assert_eq!(mse(&zero, &half).unwrap(), 0.25);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
    }

    #[test]
    fn psnr_matches_published_mse_pairs() {
        assert!((psnr_from_mse(0.1191) - 9.24).abs() < 0.01);
        assert!((psnr_from_mse(0.0008) - 30.97).abs() < 0.01);
    }

    #[test]
    fn ssim_of_opposite_constants_is_c1_limit() {
        let zero = ImageTensor::filled(8, 8, 0.0).unwrap();
        let one = ImageTensor::filled(8, 8, 1.0).unwrap();
        let c1 = 0.01f64 * 0.01;
        // numerator (c1)(c2), denominator (1 + c1)(c2)
        let expect = c1 / (1.0 + c1);
        let got = ssim(&zero, &one, &SsimConfig::default()).unwrap();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    }

    #[test]
    fn errors() {
        let a = ImageTensor::filled(8, 8, 0.0).unwrap();
        let b = ImageTensor::filled(8, 9, 0.0).unwrap();
        assert!(matches!(mse(&a, &b), Err(Error::Structural(_))));
        let cfg = SsimConfig {
            window: 9,
            ..Default::default()
        };
        assert!(matches!(ssim(&a, &a, &cfg), Err(Error::Argument(_))));
        assert!(matches!(nmi(&a, &a, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn metrics_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random(12, 10, &mut rng), random(12, 10, &mut rng));
        let cfg = MetricConfig::default();
        let ab = similarity(&a, &b, &cfg).unwrap();
        let ba = similarity(&b, &a, &cfg).unwrap();
        assert_eq!(ab.mse, ba.mse);
        assert_eq!(ab.psnr, ba.psnr);
        assert!((ab.ssim - ba.ssim).abs() < 1e-12);
        assert!((ab.nmi - ba.nmi).abs() < 1e-12);
    }

    #[test]
    fn nmi_of_independent_noise_is_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (a, b) = (random(512, 512, &mut rng), random(512, 512, &mut rng));
        let v = nmi(&a, &b, 100).unwrap();
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn report_serializes_infinite_psnr_as_null() {
        let r = SimilarityReport {
            ssim: 1.0,
            mse: 0.0,
            psnr: f64::INFINITY,
            nmi: 2.0,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"psnr\":null"));
        let back: SimilarityReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
