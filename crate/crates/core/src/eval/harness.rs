use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{average_precision, mean_similarity, MetricConfig, Obfuscation, SimilarityReport};
use crate::detector::{detect_all, DetectorAdapter};
use crate::error::{Error, Result};
use crate::types::{BoundingBox, FrameManifest, ImageTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub person_ap: Option<f64>,
    pub similarity: Option<SimilarityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thumbnails: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3 {
    pub detector: String,
    pub iou_threshold: f64,
    pub metrics: MetricConfig,
    pub frames: usize,
    pub rows: Vec<MethodRow>,
}

impl Table3 {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| method | person AP | SSIM | MSE | PSNR | NMI |\n|---|---|---|---|---|---|\n");
        let num = |v: Option<f64>, p: usize| v.map_or("n/a".to_string(), |v| format!("{v:.p$}"));
        for r in &self.rows {
            let sim = r.similarity.as_ref();
            s += &format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                r.method,
                num(r.person_ap, 2),
                num(sim.map(|m| m.ssim), 4),
                num(sim.map(|m| m.mse), 4),
                num(sim.map(|m| m.psnr), 4),
                num(sim.map(|m| m.nmi), 4),
            );
        }
        s += &format!(
            "\nSSIM window {}, NMI bins {}, AP at IoU {} over {} frames, detector {}.\n",
            self.metrics.ssim.window, self.metrics.nmi_bins, self.iou_threshold, self.frames, self.detector
        );
        s
    }
}

/// Loads the frames and person boxes of a labelled manifest.
pub fn labelled_frames(manifest: &FrameManifest) -> Result<(Vec<ImageTensor>, Vec<Vec<BoundingBox>>)> {
    let mut frames = Vec::with_capacity(manifest.len());
    let mut gt = Vec::with_capacity(manifest.len());
    for e in manifest.entries() {
        let labels = e.labels.as_ref().ok_or_else(|| {
            Error::Dependency(format!("labels for frame `{}` (run pseudo-gt first)", e.frame_id))
        })?;
        frames.push(manifest.load_frame(e).map_err(|err| err.in_frame(&e.frame_id))?);
        gt.push(labels.person_boxes());
    }
    Ok((frames, gt))
}

fn evaluate(
    method: &dyn Obfuscation,
    frames: &[ImageTensor],
    gt: &[Vec<BoundingBox>],
    adapter: &dyn DetectorAdapter,
    metrics: &MetricConfig,
    iou_threshold: f64,
) -> Result<(Vec<ImageTensor>, f64, SimilarityReport)> {
    let out = method.apply(frames, 0)?;
    let dets = detect_all(adapter, &out, 0.0)?;
    let ap = average_precision(&dets, gt, iou_threshold)?;
    let sim = mean_similarity(frames, &out, metrics)?;
    Ok((out, ap.person_ap, sim))
}

/// Person AP and mean similarity to the originals for every method. Failed
/// methods are recorded and the remaining ones still run. With `thumbs`, the
/// first `n` transformed frames of each method are written as PNG.
pub fn table3_harness(
    methods: &[&dyn Obfuscation],
    frames: &[ImageTensor],
    gt: &[Vec<BoundingBox>],
    adapter: &dyn DetectorAdapter,
    metrics: &MetricConfig,
    iou_threshold: f64,
    thumbs: Option<(&Path, usize)>,
) -> Result<Table3> {
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let name = m.name();
        match evaluate(*m, frames, gt, adapter, metrics, iou_threshold) {
            Ok((out, ap, sim)) => {
                let mut thumbnails = Vec::new();
                if let Some((dir, n)) = thumbs {
                    let slug: String = name
                        .chars()
                        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                        .collect();
                    for (i, img) in out.iter().take(n).enumerate() {
                        let file = format!("thumb-{slug}-{i}.png");
                        img.save_png(dir.join(&file), &[("method", &name)])?;
                        thumbnails.push(file);
                    }
                }
                rows.push(MethodRow {
                    method: name,
                    person_ap: Some(ap),
                    similarity: Some(sim),
                    error: None,
                    thumbnails,
                });
            }
            Err(e) => rows.push(MethodRow {
                method: name,
                person_ap: None,
                similarity: None,
                error: Some(e.to_string()),
                thumbnails: Vec::new(),
            }),
        }
    }
    Ok(Table3 {
        detector: adapter.detector_id().to_string(),
        iou_threshold,
        metrics: *metrics,
        frames: frames.len(),
        rows,
    })
}
