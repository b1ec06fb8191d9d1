//! Domain data model shared by every other module.

mod geometry;
mod image;
mod labels;
mod manifest;

pub use geometry::{iou, BoundingBox};
pub use image::{clamp_image, ImageTensor, CHANNELS, MIN_SIDE};
pub use labels::{Detection, Label, LabelSet, Provenance, PERSON_CLASS};
pub use manifest::{FrameEntry, FrameManifest, Split};
