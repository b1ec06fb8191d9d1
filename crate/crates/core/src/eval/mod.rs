//! Privacy and utility evaluation: similarity metrics, person AP, classical
//! obfuscation baselines and the method comparison harness.

mod ap;
mod baselines;
mod harness;
mod metrics;

pub use ap::{average_precision, person_ap, ApResult, PrPoint, DEFAULT_IOU_THRESHOLD};
pub use baselines::{
    add_noise, blur, gaussian_sigma, kernel_1d, quantize, BlurKind, DEFAULT_BLUR_KERNEL,
    DEFAULT_NOISE_FACTOR, DEFAULT_QUANTIZE_LEVELS,
};
pub use harness::{labelled_frames, table3_harness, MethodRow, Table3};
pub use metrics::{
    mean_similarity, mse, nmi, psnr, psnr_from_mse, similarity, ssim, MetricConfig, SimilarityReport,
    SsimConfig,
};

use crate::error::Result;
use crate::models::ModelHandle;
use crate::types::ImageTensor;

/// A frame transformation under evaluation.
pub trait Obfuscation {
    fn name(&self) -> String;

    /// Transforms frames; `offset` is the index of `frames[0]` within the full
    /// evaluation set, so seeded methods stay independent of chunking.
    fn apply(&self, frames: &[ImageTensor], offset: usize) -> Result<Vec<ImageTensor>>;
}

pub struct Identity;

impl Obfuscation for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn apply(&self, frames: &[ImageTensor], _offset: usize) -> Result<Vec<ImageTensor>> {
        Ok(frames.to_vec())
    }
}

pub struct Blur {
    pub kernel: [usize; 2],
    pub kind: BlurKind,
}

impl Obfuscation for Blur {
    fn name(&self) -> String {
        format!("blur[{},{}]", self.kernel[0], self.kernel[1])
    }

    fn apply(&self, frames: &[ImageTensor], _offset: usize) -> Result<Vec<ImageTensor>> {
        frames.iter().map(|f| blur(f, self.kernel, self.kind)).collect()
    }
}

pub struct Noise {
    pub factor: f64,
    pub seed: u64,
}

impl Obfuscation for Noise {
    fn name(&self) -> String {
        format!("noise {}%", self.factor * 100.0)
    }

    fn apply(&self, frames: &[ImageTensor], offset: usize) -> Result<Vec<ImageTensor>> {
        frames
            .iter()
            .enumerate()
            .map(|(i, f)| add_noise(f, self.factor, self.seed.wrapping_add((offset + i) as u64)))
            .collect()
    }
}

pub struct Quantize {
    pub levels: usize,
}

impl Obfuscation for Quantize {
    fn name(&self) -> String {
        format!("quantize {}", self.levels)
    }

    fn apply(&self, frames: &[ImageTensor], _offset: usize) -> Result<Vec<ImageTensor>> {
        frames.iter().map(|f| quantize(f, self.levels)).collect()
    }
}

/// A trained obfuscator, always run with frozen normalization statistics.
pub struct Learned<'a> {
    pub label: String,
    pub model: &'a ModelHandle,
}

impl Obfuscation for Learned<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn apply(&self, frames: &[ImageTensor], _offset: usize) -> Result<Vec<ImageTensor>> {
        self.model.clone().eval().transform_all(frames, 16)
    }
}
