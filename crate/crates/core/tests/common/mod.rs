//! Naive reference implementations used as oracles by several test targets.
#![allow(dead_code)]

use advobf::types::{BoundingBox, Detection, ImageTensor};
use rand::Rng;

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageTensor {
    ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn naive_mse(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w) = (a.height(), a.width());
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let d = a.get(y, x, c) - b.get(y, x, c);
                s += d * d;
            }
        }
    }
    s / (h * w * 3) as f64
}

/// Direct SSIM formula on every full window, per channel, then averaged.
pub fn naive_ssim(a: &ImageTensor, b: &ImageTensor, win: usize, k1: f64, k2: f64) -> f64 {
    let (h, w) = (a.height(), a.width());
    let (c1, c2) = (k1 * k1, k2 * k2);
    let n = (win * win) as f64;
    let mut per_channel = 0.0;
    for c in 0..3 {
        let mut acc = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let px: Vec<f64> = (0..win * win).map(|i| a.get(y0 + i / win, x0 + i % win, c)).collect();
                let py: Vec<f64> = (0..win * win).map(|i| b.get(y0 + i / win, x0 + i % win, c)).collect();
                let mx = px.iter().sum::<f64>() / n;
                let my = py.iter().sum::<f64>() / n;
                let vx = px.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / (n - 1.0);
                let vy = py.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / (n - 1.0);
                let cov = px.iter().zip(&py).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
                acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        per_channel += acc / count;
    }
    per_channel / 3.0
}

fn luma(img: &ImageTensor, y: usize, x: usize) -> f64 {
    0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2)
}

/// Normalized mutual information from an explicit joint histogram.
pub fn naive_nmi(a: &ImageTensor, b: &ImageTensor, bins: usize) -> f64 {
    let bin = |v: f64| -> usize {
        let v = v.clamp(0.0, 1.0);
        let i = (v * bins as f64).floor() as usize;
        if i >= bins {
            bins - 1
        } else {
            i
        }
    };
    let mut joint = vec![vec![0.0f64; bins]; bins];
    let (h, w) = (a.height(), a.width());
    for y in 0..h {
        for x in 0..w {
            joint[bin(luma(a, y, x))][bin(luma(b, y, x))] += 1.0;
        }
    }
    let total = (h * w) as f64;
    let ent = |ps: &[f64]| -> f64 { ps.iter().filter(|&&p| p > 0.0).map(|&p| -(p / total) * (p / total).ln()).sum() };
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..bins).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    let hab = ent(&flat);
    if hab == 0.0 {
        return 2.0;
    }
    (ent(&rows) + ent(&cols)) / hab
}

/// 2-D Gaussian convolution with an explicit kernel and clamped coordinates.
pub fn naive_gaussian_blur(img: &ImageTensor, kx: usize, ky: usize) -> ImageTensor {
    let sigma = |k: usize| 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let weights = |k: usize| -> Vec<f64> {
        let s = sigma(k);
        let r = (k / 2) as i64;
        let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * s * s)).exp()).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|v| v / t).collect()
    };
    let (wx, wy) = (weights(kx), weights(ky));
    let (h, w) = (img.height() as i64, img.width() as i64);
    let (rx, ry) = ((kx / 2) as i64, (ky / 2) as i64);
    let mut out = Vec::with_capacity((h * w * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut s = 0.0;
                for dy in -ry..=ry {
                    for dx in -rx..=rx {
                        let yy = (y + dy).clamp(0, h - 1) as usize;
                        let xx = (x + dx).clamp(0, w - 1) as usize;
                        s += wy[(dy + ry) as usize] * wx[(dx + rx) as usize] * img.get(yy, xx, c);
                    }
                }
                out.push(s.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(h as usize, w as usize, out).unwrap()
}

fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let iy = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Greedy matching of the first `k` ranked detections, recomputed from scratch.
fn tp_in_prefix(ranked: &[(usize, Detection)], gt: &[Vec<BoundingBox>], k: usize, thr: f64) -> usize {
    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0;
    for (f, d) in &ranked[..k] {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt[*f].iter().enumerate() {
            let v = box_iou(&d.bbox, g);
            if used[*f][j] || v < thr {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[*f][j] = true;
            tp += 1;
        }
    }
    tp
}

/// All-point interpolated AP (percent) from a PR curve built prefix by prefix.
pub fn brute_force_ap(dets: &[Vec<Detection>], gt: &[Vec<BoundingBox>], thr: f64) -> f64 {
    let total: usize = gt.iter().map(Vec::len).sum();
    let mut ranked: Vec<(usize, Detection)> = Vec::new();
    for (f, ds) in dets.iter().enumerate() {
        for d in ds {
            ranked.push((f, *d));
        }
    }
    ranked.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
    let points: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = tp_in_prefix(&ranked, gt, k, thr);
            (tp as f64 / total as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for k in 0..points.len() {
        let best = points[k..].iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        ap += (points[k].0 - prev) * best;
        prev = points[k].0;
    }
    100.0 * ap
}

/// Small random AP instance: up to 5 GT boxes and 10 detections over 1-3 frames.
pub fn random_ap_instance(rng: &mut impl Rng) -> (Vec<Vec<Detection>>, Vec<Vec<BoundingBox>>) {
    let frames = rng.random_range(1..=3);
    let rand_box = |rng: &mut dyn rand::RngCore| {
        let x0 = rng.random_range(0.0..40.0);
        let y0 = rng.random_range(0.0..40.0);
        BoundingBox::new(x0, y0, x0 + rng.random_range(4.0..20.0), y0 + rng.random_range(4.0..20.0)).unwrap()
    };
    let mut gt: Vec<Vec<BoundingBox>> = vec![Vec::new(); frames];
    let n_gt = rng.random_range(1..=5);
    for _ in 0..n_gt {
        let f = rng.random_range(0..frames);
        gt[f].push(rand_box(rng));
    }
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); frames];
    let n_det = rng.random_range(0..=10);
    for _ in 0..n_det {
        let f = rng.random_range(0..frames);
        // half the detections jitter a GT box so matches actually occur
        let b = if !gt[f].is_empty() && rng.random_bool(0.5) {
            let g = gt[f][rng.random_range(0..gt[f].len())];
            let j = |rng: &mut dyn rand::RngCore| rng.random_range(-3.0..3.0);
            let (x0, y0) = (g.x_min() + j(rng), g.y_min() + j(rng));
            BoundingBox::new(x0, y0, x0 + g.width() + j(rng).abs() + 0.5, y0 + g.height() + j(rng).abs() + 0.5).unwrap()
        } else {
            rand_box(rng)
        };
        dets[f].push(Detection::new(b, 1, rng.random_range(0.0..1.0)).unwrap());
    }
    (dets, gt)
}
