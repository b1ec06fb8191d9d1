use serde::{Deserialize, Serialize};

use super::{detect_all, DetectorAdapter};
use crate::error::Result;
use crate::eval::{average_precision, Obfuscation};
use crate::types::{FrameManifest, ImageTensor};

/// Person AP of every (obfuscator, detector) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[r][c]`; `None` when that cell failed.
    pub cells: Vec<Vec<Option<f64>>>,
    /// One message per failed cell.
    pub failures: Vec<String>,
    pub gt_source: String,
    pub footer: String,
}

impl CrossModelMatrix {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| obfuscator | {} |\n", self.columns.join(" | "));
        s += &format!("|---|{}\n", "---|".repeat(self.columns.len()));
        for (name, row) in self.rows.iter().zip(&self.cells) {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map_or("n/a".to_string(), |v| format!("{v:.2}")))
                .collect();
            s += &format!("| {name} | {} |\n", cells.join(" | "));
        }
        s += &format!("\n{}\n", self.footer);
        s
    }
}

/// Fills the grid. Ground truth is `gt_source`'s thresholded detections on
/// the clean frames; each cell evaluates one detector on one obfuscator's
/// output. Failed cells are recorded and the run continues.
pub fn cross_model_matrix(
    obfuscators: &[&dyn Obfuscation],
    adapters: &[&dyn DetectorAdapter],
    manifest: &FrameManifest,
    gt_source: &dyn DetectorAdapter,
    pseudo_threshold: f64,
    iou_threshold: f64,
) -> Result<CrossModelMatrix> {
    let frames: Vec<ImageTensor> = manifest
        .entries()
        .iter()
        .map(|e| manifest.load_frame(e).map_err(|err| err.in_frame(&e.frame_id)))
        .collect::<Result<_>>()?;
    let gt: Vec<_> = detect_all(gt_source, &frames, pseudo_threshold)?
        .into_iter()
        .map(|ds| ds.into_iter().map(|d| d.bbox).collect::<Vec<_>>())
        .collect();
    let mut cells = Vec::with_capacity(obfuscators.len());
    let mut failures = Vec::new();
    for ob in obfuscators {
        let transformed = ob.apply(&frames, 0);
        let mut row = Vec::with_capacity(adapters.len());
        for ad in adapters {
            let cell = transformed.as_ref().map_err(|e| e.to_string()).and_then(|t| {
                detect_all(*ad, t, 0.0)
                    .and_then(|d| average_precision(&d, &gt, iou_threshold))
                    .map_err(|e| e.to_string())
            });
            match cell {
                Ok(r) => row.push(Some(r.person_ap)),
                Err(msg) => {
                    failures.push(format!("{} x {}: {msg}", ob.name(), ad.detector_id()));
                    row.push(None);
                }
            }
        }
        cells.push(row);
    }
    Ok(CrossModelMatrix {
        rows: obfuscators.iter().map(|o| o.name()).collect(),
        columns: adapters.iter().map(|a| a.detector_id().to_string()).collect(),
        cells,
        failures,
        gt_source: gt_source.detector_id().to_string(),
        footer: format!(
            "Cells are absolute person AP percentages at IoU {iou_threshold}, not ratios to a clean-frame baseline. \
             Ground truth: detections of {} on clean frames at score >= {pseudo_threshold}.",
            gt_source.detector_id()
        ),
    })
}
