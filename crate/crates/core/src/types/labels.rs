use serde::{Deserialize, Serialize};

use super::geometry::BoundingBox;
use crate::error::{Error, Result};

/// Category id used for people throughout the crate.
pub const PERSON_CLASS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "class")]
    pub class_id: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class_id: u32, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Argument(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            class_id,
            score,
        })
    }
}

/// Where a set of labels came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticExact,
    Pseudo {
        detector_id: String,
        score_threshold: f64,
    },
}

/// One labelled box. `score` is kept for pseudo labels and absent for exact ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "class")]
    pub class_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub frame_id: String,
    pub boxes: Vec<Label>,
    pub provenance: Provenance,
}

impl LabelSet {
    pub fn new(frame_id: impl Into<String>, boxes: Vec<Label>, provenance: Provenance) -> Self {
        Self {
            frame_id: frame_id.into(),
            boxes,
            provenance,
        }
    }

    pub fn persons(&self) -> impl Iterator<Item = &BoundingBox> {
        self.boxes
            .iter()
            .filter(|l| l.class_id == PERSON_CLASS)
            .map(|l| &l.bbox)
    }

    pub fn person_boxes(&self) -> Vec<BoundingBox> {
        self.persons().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}
