//! Single-stage person detector small enough to train in seconds.
//!
//! Four 3x3 convolutions (strides 2, 2, 2, 1) feed a 1x1 head predicting five
//! values per cell of an 8-pixel grid: objectness, the box centre offset inside
//! the cell (through a sigmoid) and log-scale width and height relative to one
//! anchor, the median training box size.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nms, Capabilities, DetectorAdapter};
use crate::error::{Error, Result};
use crate::nn::blob::{BlobReader, BlobWriter};
use crate::nn::{sigmoid, state_checksum, AdamW, Conv2d, Layer, Mode, Sequential, Tensor};
use crate::types::{clamp_image, BoundingBox, Detection, ImageTensor, CHANNELS, PERSON_CLASS};

/// Cell size of the prediction grid in pixels.
pub const GRID: usize = 8;
const OUTPUTS: usize = 5;
const CHANNEL_PLAN: [(usize, usize); 4] = [(16, 2), (32, 2), (32, 2), (32, 1)];
const NMS_IOU: f64 = 0.5;
const MAX_LOG_SCALE: f64 = 4.0;
/// Largest reported score; keeps every score strictly below 1.
const MAX_SCORE: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    id: String,
    net: Sequential,
    /// Anchor (width, height) in pixels.
    anchor: (f64, f64),
    /// Hash of the configuration that produced the weights, if known.
    pub config_hash: Option<String>,
}

struct CellTarget {
    tx: f64,
    ty: f64,
    tw: f64,
    th: f64,
}

impl ToyDetector {
    pub fn new(id: impl Into<String>, anchor: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = CHANNELS;
        for (cout, stride) in CHANNEL_PLAN {
            layers.push(Layer::Conv(Conv2d::new(cin, cout, 3, stride, false, true, &mut rng)));
            layers.push(Layer::Relu);
            cin = cout;
        }
        let mut head = Conv2d::new(cin, OUTPUTS, 1, 1, false, true, &mut rng);
        head.weight.data.iter_mut().for_each(|w| *w *= 0.1);
        // start with a low objectness prior
        head.bias.as_mut().expect("head has bias").data[0] = -4.0;
        layers.push(Layer::Conv(head));
        Self {
            id: id.into(),
            net: Sequential::new(layers),
            anchor,
            config_hash: None,
        }
    }

    pub fn anchor(&self) -> (f64, f64) {
        self.anchor
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != CHANNELS || x.h % GRID != 0 || x.w % GRID != 0 {
            return Err(Error::Structural(format!(
                "toy detector needs 3-channel frames with sides divisible by {GRID}, got {}x{}x{}",
                x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    fn targets(&self, boxes: &[BoundingBox], gh: usize, gw: usize) -> Vec<Option<CellTarget>> {
        let mut cells: Vec<Option<CellTarget>> = (0..gh * gw).map(|_| None).collect();
        let g = GRID as f64;
        for b in boxes {
            let (cx, cy) = b.center();
            let gx = ((cx / g).floor().max(0.0) as usize).min(gw - 1);
            let gy = ((cy / g).floor().max(0.0) as usize).min(gh - 1);
            let cell = &mut cells[gy * gw + gx];
            if cell.is_none() {
                *cell = Some(CellTarget {
                    tx: (cx / g - gx as f64).clamp(0.0, 1.0),
                    ty: (cy / g - gy as f64).clamp(0.0, 1.0),
                    tw: (b.width() / self.anchor.0).ln(),
                    th: (b.height() / self.anchor.1).ln(),
                });
            }
        }
        cells
    }

    /// Loss of raw head outputs against boxes, and its gradient.
    fn head_loss(&self, out: &Tensor, targets: &[Vec<BoundingBox>]) -> (f64, Tensor) {
        let (gh, gw) = (out.h, out.w);
        let plane = gh * gw;
        let mut grad = Tensor::zeros(out.n, out.c, gh, gw);
        let mut total = 0.0;
        for (i, boxes) in targets.iter().enumerate() {
            let cells = self.targets(boxes, gh, gw);
            let npos = cells.iter().filter(|c| c.is_some()).count();
            let norm = npos.max(1) as f64 * out.n as f64;
            let o = out.sample(i);
            let g = grad.sample_mut(i);
            let mut loss = 0.0;
            for (k, cell) in cells.iter().enumerate() {
                let logit = o[k];
                let t = if cell.is_some() { 1.0 } else { 0.0 };
                loss += logit.max(0.0) + (-logit.abs()).exp().ln_1p() - t * logit;
                g[k] = (sigmoid(logit) - t) / norm;
                if let Some(c) = cell {
                    let sx = sigmoid(o[plane + k]);
                    let sy = sigmoid(o[2 * plane + k]);
                    let dw = o[3 * plane + k] - c.tw;
                    let dh = o[4 * plane + k] - c.th;
                    loss += (sx - c.tx).powi(2) + (sy - c.ty).powi(2) + dw * dw + dh * dh;
                    g[plane + k] = 2.0 * (sx - c.tx) * sx * (1.0 - sx) / norm;
                    g[2 * plane + k] = 2.0 * (sy - c.ty) * sy * (1.0 - sy) / norm;
                    g[3 * plane + k] = 2.0 * dw / norm;
                    g[4 * plane + k] = 2.0 * dh / norm;
                }
            }
            total += loss / norm;
        }
        (total, grad)
    }

    fn decode(&self, out: &Tensor, i: usize, score_threshold: f64) -> Vec<Detection> {
        let (gh, gw) = (out.h, out.w);
        let plane = gh * gw;
        let (img_w, img_h) = (gw * GRID, gh * GRID);
        let o = out.sample(i);
        let g = GRID as f64;
        let mut dets = Vec::new();
        for gy in 0..gh {
            for gx in 0..gw {
                let k = gy * gw + gx;
                let score = sigmoid(o[k]).min(MAX_SCORE);
                if score < score_threshold {
                    continue;
                }
                let cx = (gx as f64 + sigmoid(o[plane + k])) * g;
                let cy = (gy as f64 + sigmoid(o[2 * plane + k])) * g;
                let w = self.anchor.0 * o[3 * plane + k].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
                let h = self.anchor.1 * o[4 * plane + k].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
                let Ok(b) = BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0) else {
                    continue;
                };
                if let Some(b) = b.clip(img_w, img_h) {
                    dets.push(Detection {
                        bbox: b,
                        class_id: PERSON_CLASS,
                        score,
                    });
                }
            }
        }
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        nms(dets, NMS_IOU)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BlobWriter::new(MAGIC, VERSION);
        w.str(&self.id);
        w.str(self.config_hash.as_deref().unwrap_or(""));
        w.array(&[2], &[self.anchor.0, self.anchor.1]);
        let params = self.net.params();
        w.u32(params.len() as u32);
        for p in params {
            w.array(&p.shape, &p.data);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = BlobReader::open(bytes, path, MAGIC, VERSION)?;
        let fail = |check: String| Error::Integrity {
            path: path.to_path_buf(),
            check,
        };
        let id = r.str()?;
        let hash = r.str()?;
        let (_, anchor) = r.array()?;
        if anchor.len() != 2 {
            return Err(fail("anchor must have two entries".into()));
        }
        let mut det = ToyDetector::new(id, (anchor[0], anchor[1]), 0);
        det.config_hash = (!hash.is_empty()).then_some(hash);
        let n = r.u32()? as usize;
        let mut params = det.net.params_mut();
        if n != params.len() {
            return Err(fail(format!("{n} parameter tensors, expected {}", params.len())));
        }
        for p in params.iter_mut() {
            let (shape, data) = r.array()?;
            if shape != p.shape {
                return Err(fail(format!("parameter shape {shape:?}, expected {:?}", p.shape)));
            }
            p.data = data;
        }
        if !r.finished() {
            return Err(fail("trailing bytes".into()));
        }
        Ok(det)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

const MAGIC: &[u8; 4] = b"AOBD";
const VERSION: u32 = 1;

impl DetectorAdapter for ToyDetector {
    fn detector_id(&self) -> &str {
        &self.id
    }

    fn person_class_id(&self) -> u32 {
        PERSON_CLASS
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            detect: true,
            loss: true,
        }
    }

    fn detect_batch(&self, images: &Tensor, score_threshold: f64) -> Result<Vec<Vec<Detection>>> {
        self.check_input(images)?;
        let out = self.net.infer(images.clone(), Mode::Eval);
        Ok((0..images.n).map(|i| self.decode(&out, i, score_threshold)).collect())
    }

    fn loss_batch(&self, images: &Tensor, targets: &[Vec<BoundingBox>]) -> Result<(f64, Tensor)> {
        self.check_input(images)?;
        if targets.len() != images.n {
            return Err(Error::Structural(format!(
                "{} label sets for {} frames",
                targets.len(),
                images.n
            )));
        }
        let (out, trace) = self.net.forward(images.clone(), Mode::Eval);
        let (loss, dout) = self.head_loss(&out, targets);
        let dx = self.net.backward(&trace, dout, None);
        Ok((loss, dx))
    }

    fn parameter_checksum(&self) -> String {
        state_checksum(&self.net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub horizontal_flip: bool,
    /// Frames are scaled by a factor drawn from `[1 - b, 1 + b]`.
    pub brightness_jitter: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            lr: 3e-3,
            weight_decay: 1e-4,
            horizontal_flip: true,
            brightness_jitter: 0.3,
            seed: 0,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn flip(img: &ImageTensor, boxes: &[BoundingBox]) -> Result<(ImageTensor, Vec<BoundingBox>)> {
    let (h, w) = (img.height(), img.width());
    let src = img.values();
    let mut v = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            v.extend_from_slice(&src[(y * w + x) * CHANNELS..(y * w + x + 1) * CHANNELS]);
        }
    }
    let wf = w as f64;
    let boxes = boxes
        .iter()
        .map(|b| BoundingBox::new(wf - b.x_max(), b.y_min(), wf - b.x_min(), b.y_max()))
        .collect::<Result<_>>()?;
    Ok((ImageTensor::new(h, w, v)?, boxes))
}

/// Trains a toy detector; returns it with the mean loss of every epoch.
pub fn train_toy_detector(
    id: &str,
    frames: &[ImageTensor],
    boxes: &[Vec<BoundingBox>],
    cfg: &DetectorTrainConfig,
) -> Result<(ToyDetector, Vec<f64>)> {
    if frames.len() != boxes.len() || frames.is_empty() {
        return Err(Error::Argument("need one box list per frame and at least one frame".into()));
    }
    let all: Vec<&BoundingBox> = boxes.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::Argument("training frames contain no person boxes".into()));
    }
    let anchor = (
        median(all.iter().map(|b| b.width()).collect()),
        median(all.iter().map(|b| b.height()).collect()),
    );
    let mut det = ToyDetector::new(id, anchor, cfg.seed);
    let mut opt = AdamW::for_params(&det.net.params(), cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_de7e);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut imgs = Vec::with_capacity(chunk.len());
            let mut tgts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (mut img, mut bx) = (frames[i].clone(), boxes[i].clone());
                if cfg.horizontal_flip && rng.random_bool(0.5) {
                    (img, bx) = flip(&img, &bx)?;
                }
                if cfg.brightness_jitter > 0.0 {
                    let f = 1.0 + rng.random_range(-cfg.brightness_jitter..=cfg.brightness_jitter);
                    let v = img.values().iter().map(|v| v * f).collect();
                    img = clamp_image(img.height(), img.width(), CHANNELS, v)?;
                }
                imgs.push(img);
                tgts.push(bx);
            }
            let refs: Vec<&ImageTensor> = imgs.iter().collect();
            let x = Tensor::from_images(&refs)?;
            det.check_input(&x)?;
            let (out, trace) = det.net.forward(x, Mode::Train);
            let (loss, dout) = det.head_loss(&out, &tgts);
            if !loss.is_finite() {
                return Err(Error::numerical(
                    format!("detector training epoch {epoch}"),
                    format!("loss {loss}"),
                ));
            }
            let mut grads = det.net.zero_grads();
            det.net.backward(&trace, dout, Some(&mut grads));
            opt.apply(det.net.params_mut(), &grads, cfg.lr);
            sum += loss;
            batches += 1;
        }
        losses.push(sum / batches as f64);
    }
    Ok((det, losses))
}
