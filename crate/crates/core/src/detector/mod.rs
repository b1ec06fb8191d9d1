//! Detector adapters: detections for evaluation and pseudo labels, and a
//! differentiable detection loss for adversarial training.
//!
//! Large pretrained detectors are registered by id but have no backend in this
//! build; every call on them fails with [`Error::Unavailable`]. The trainable
//! [`ToyDetector`] serves desk-scale runs.

mod cross_model;
mod toy;

pub use cross_model::{cross_model_matrix, CrossModelMatrix};
pub use toy::{train_toy_detector, DetectorTrainConfig, ToyDetector, GRID};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::types::{
    BoundingBox, Detection, FrameManifest, ImageTensor, Label, LabelSet, Provenance, PERSON_CLASS,
};

pub const DEFAULT_PSEUDO_GT_THRESHOLD: f64 = 0.5;

/// Pretrained detectors known by id. Their weights are never fetched implicitly.
pub const EXTERNAL_DETECTORS: [(&str, u32); 5] = [
    ("frcnn-resnet50", 1),
    ("frcnn-mnv3-large", 1),
    ("frcnn-mnv3-large-320", 1),
    ("mask-rcnn", 1),
    ("yolo-s", 0),
];

/// Prefix of the ids served by [`ToyDetector`] weights files.
pub const TOY_PREFIX: &str = "toy-conv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub detect: bool,
    pub loss: bool,
}

pub trait DetectorAdapter {
    fn detector_id(&self) -> &str;

    /// Person category in the detector's native label space. Detections
    /// returned by adapters are already mapped to [`PERSON_CLASS`].
    fn person_class_id(&self) -> u32;

    fn capabilities(&self) -> Capabilities;

    /// Person detections per image, scores at or above `score_threshold`,
    /// clipped to the image and sorted by descending score.
    fn detect_batch(&self, images: &Tensor, score_threshold: f64) -> Result<Vec<Vec<Detection>>>;

    /// Mean per-image loss over the batch and its gradient with respect to
    /// `images`. Never updates the detector.
    fn loss_batch(&self, images: &Tensor, targets: &[Vec<BoundingBox>]) -> Result<(f64, Tensor)>;

    /// Digest of every detector parameter.
    fn parameter_checksum(&self) -> String;
}

/// A registered pretrained detector without a backend in this build.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    id: String,
    person_class_id: u32,
}

impl ExternalDetector {
    fn unavailable(&self) -> Error {
        Error::Unavailable(self.id.clone())
    }
}

impl DetectorAdapter for ExternalDetector {
    fn detector_id(&self) -> &str {
        &self.id
    }

    fn person_class_id(&self) -> u32 {
        self.person_class_id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            detect: true,
            loss: true,
        }
    }

    fn detect_batch(&self, _images: &Tensor, _t: f64) -> Result<Vec<Vec<Detection>>> {
        Err(self.unavailable())
    }

    fn loss_batch(&self, _images: &Tensor, _targets: &[Vec<BoundingBox>]) -> Result<(f64, Tensor)> {
        Err(self.unavailable())
    }

    fn parameter_checksum(&self) -> String {
        String::new()
    }
}

/// Resolves a detector id. Toy ids load `<weights_dir>/<id>.bin`.
pub fn open_detector(id: &str, weights_dir: &Path) -> Result<Box<dyn DetectorAdapter>> {
    if let Some(&(name, person)) = EXTERNAL_DETECTORS.iter().find(|(n, _)| *n == id) {
        return Ok(Box::new(ExternalDetector {
            id: name.to_string(),
            person_class_id: person,
        }));
    }
    if id.starts_with(TOY_PREFIX) {
        let path = toy_weights_path(id, weights_dir);
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "detector weights {} (train them with `train-detector`)",
                path.display()
            )));
        }
        return Ok(Box::new(ToyDetector::load(&path)?));
    }
    Err(Error::Config(format!("unknown detector id `{id}`")))
}

pub fn toy_weights_path(id: &str, weights_dir: &Path) -> std::path::PathBuf {
    weights_dir.join(format!("{id}.bin"))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!("score threshold {t} outside [0, 1]")));
    }
    Ok(())
}

/// Person detections on one frame.
pub fn detect(
    adapter: &dyn DetectorAdapter,
    image: &ImageTensor,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    check_threshold(score_threshold)?;
    let x = Tensor::from_images(&[image])?;
    Ok(adapter.detect_batch(&x, score_threshold)?.remove(0))
}

/// Detections for many frames, batched.
pub fn detect_all(
    adapter: &dyn DetectorAdapter,
    frames: &[ImageTensor],
    score_threshold: f64,
) -> Result<Vec<Vec<Detection>>> {
    check_threshold(score_threshold)?;
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(16) {
        let refs: Vec<&ImageTensor> = chunk.iter().collect();
        out.extend(adapter.detect_batch(&Tensor::from_images(&refs)?, score_threshold)?);
    }
    Ok(out)
}

/// Detection loss of one frame against its person labels, with the gradient
/// with respect to the frame.
pub fn detection_loss(
    adapter: &dyn DetectorAdapter,
    image: &ImageTensor,
    labels: &LabelSet,
) -> Result<(f64, Tensor)> {
    if !adapter.capabilities().loss {
        return Err(Error::Argument(format!(
            "detector `{}` has no loss capability",
            adapter.detector_id()
        )));
    }
    let x = Tensor::from_images(&[image])?;
    let (loss, grad) = adapter
        .loss_batch(&x, &[labels.person_boxes()])
        .map_err(|e| e.in_frame(&labels.frame_id))?;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::numerical("detection loss", format!("value {loss}")).in_frame(&labels.frame_id));
    }
    Ok((loss, grad))
}

/// Labels every frame with the adapter's person detections. Frames without
/// detections get an empty label set.
pub fn generate_pseudo_ground_truth(
    adapter: &dyn DetectorAdapter,
    manifest: &FrameManifest,
    score_threshold: f64,
) -> Result<FrameManifest> {
    check_threshold(score_threshold)?;
    let provenance = Provenance::Pseudo {
        detector_id: adapter.detector_id().to_string(),
        score_threshold,
    };
    let mut out = manifest.clone();
    for entry in out.entries_mut() {
        let id = entry.frame_id.clone();
        let frame = manifest.load_frame(entry).map_err(|e| e.in_frame(&id))?;
        let dets = detect(adapter, &frame, score_threshold).map_err(|e| e.in_frame(&id))?;
        let boxes = dets
            .iter()
            .filter(|d| d.class_id == PERSON_CLASS)
            .map(|d| Label {
                bbox: d.bbox,
                class_id: PERSON_CLASS,
                score: Some(d.score),
            })
            .collect();
        entry.labels = Some(LabelSet::new(id, boxes, provenance.clone()));
    }
    Ok(out)
}

/// Greedy non-maximum suppression over score-sorted detections.
pub(crate) fn nms(sorted: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept
            .iter()
            .all(|k| crate::types::iou(&k.bbox, &d.bbox) <= iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_ids_resolve_but_are_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let det = open_detector("frcnn-resnet50", dir.path()).unwrap();
        assert_eq!(det.person_class_id(), 1);
        let img = ImageTensor::filled(16, 16, 0.5).unwrap();
        assert!(matches!(detect(det.as_ref(), &img, 0.5), Err(Error::Unavailable(_))));
        assert!(matches!(
            open_detector("toy-conv", dir.path()),
            Err(Error::Dependency(_))
        ));
        assert!(matches!(open_detector("resnet", dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn threshold_must_be_a_probability() {
        let det = ExternalDetector {
            id: "x".into(),
            person_class_id: 1,
        };
        let img = ImageTensor::filled(16, 16, 0.5).unwrap();
        assert!(matches!(detect(&det, &img, 1.5), Err(Error::Argument(_))));
    }
}
