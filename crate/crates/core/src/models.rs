//! Obfuscator and deobfuscator autoencoders.
//!
//! Both roles share one architecture family: a strided 3x3 convolution stem,
//! depthwise-separable encoder blocks, and a mirrored decoder that upsamples
//! with nearest-neighbour 2x steps before each block and ends in a 3-channel
//! projection squashed into `[0, 1]` by a sigmoid. There are no skip
//! connections between encoder and decoder.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::blob::{BlobReader, BlobWriter};
use crate::nn::{state_checksum, BatchNorm2d, Conv2d, Layer, Mode, Sequential, Tensor};
use crate::types::{ImageTensor, CHANNELS};

/// Floor on the scaled channel count of any stage.
pub const MIN_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// Output channels at width multiplier 1.
    pub channels: usize,
    /// 1 or 2.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSpec {
    pub width_multiplier: f64,
    /// Stage 0 is the standard-convolution stem, the rest are depthwise-separable blocks.
    pub encoder: Vec<Stage>,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            width_multiplier: 1.0,
            encoder: vec![
                Stage { channels: 32, stride: 2 },
                Stage { channels: 64, stride: 2 },
                Stage { channels: 128, stride: 2 },
                Stage { channels: 256, stride: 1 },
            ],
            input_height: 200,
            input_width: 320,
        }
    }
}

/// Kind of a planned convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

/// One convolution of the network with its resolved geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedConv {
    pub name: String,
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub bias: bool,
    pub batch_norm: bool,
    pub upsample_before: bool,
}

impl AutoencoderSpec {
    pub fn with_resolution(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn with_width_multiplier(mut self, alpha: f64) -> Self {
        self.width_multiplier = alpha;
        self
    }

    pub fn stride_product(&self) -> usize {
        self.encoder.iter().map(|s| s.stride).product()
    }

    /// `max(8, round(alpha * base))`
    pub fn scaled_channels(&self, base: usize) -> usize {
        ((self.width_multiplier * base as f64).round() as usize).max(MIN_CHANNELS)
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.encoder.iter().map(|s| self.scaled_channels(s.channels)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let alpha = self.width_multiplier;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!(
                "width multiplier {alpha} outside (0, 1]"
            )));
        }
        if self.encoder.is_empty() {
            return Err(Error::Config("encoder needs at least the stem stage".into()));
        }
        if let Some(s) = self.encoder.iter().find(|s| s.stride != 1 && s.stride != 2) {
            return Err(Error::Config(format!("stage stride {} is not 1 or 2", s.stride)));
        }
        if self.encoder.iter().any(|s| s.channels == 0) {
            return Err(Error::Config("stage with zero channels".into()));
        }
        self.check_resolution(self.input_height, self.input_width)
    }

    pub fn check_resolution(&self, height: usize, width: usize) -> Result<()> {
        let p = self.stride_product();
        if height < crate::types::MIN_SIDE || width < crate::types::MIN_SIDE {
            return Err(Error::Config(format!(
                "resolution {height}x{width} below the 8x8 minimum"
            )));
        }
        if height % p != 0 || width % p != 0 {
            return Err(Error::Config(format!(
                "stride product {p} does not divide resolution {height}x{width}"
            )));
        }
        Ok(())
    }

    /// Every convolution of the network at the spec's input resolution.
    pub fn layer_plan(&self) -> Result<Vec<PlannedConv>> {
        self.layer_plan_at(self.input_height, self.input_width)
    }

    pub fn layer_plan_at(&self, height: usize, width: usize) -> Result<Vec<PlannedConv>> {
        self.validate()?;
        self.check_resolution(height, width)?;
        let ch = self.stage_channels();
        let mut plan = Vec::new();
        let (mut h, mut w) = (height, width);
        let stem = self.encoder[0];
        h /= stem.stride;
        w /= stem.stride;
        plan.push(conv("enc0.conv", ConvKind::Standard, CHANNELS, ch[0], 3, stem.stride, h, w, false, true, false));
        for (i, stage) in self.encoder.iter().enumerate().skip(1) {
            h /= stage.stride;
            w /= stage.stride;
            plan.push(conv(&format!("enc{i}.dw"), ConvKind::Depthwise, ch[i - 1], ch[i - 1], 3, stage.stride, h, w, false, true, false));
            plan.push(conv(&format!("enc{i}.pw"), ConvKind::Pointwise, ch[i - 1], ch[i], 1, 1, h, w, false, true, false));
        }
        for (i, stage) in self.encoder.iter().enumerate().skip(1).rev() {
            let up = stage.stride == 2;
            if up {
                h *= 2;
                w *= 2;
            }
            plan.push(conv(&format!("dec{i}.dw"), ConvKind::Depthwise, ch[i], ch[i], 3, 1, h, w, false, true, up));
            plan.push(conv(&format!("dec{i}.pw"), ConvKind::Pointwise, ch[i], ch[i - 1], 1, 1, h, w, false, true, false));
        }
        let up = stem.stride == 2;
        if up {
            h *= 2;
            w *= 2;
        }
        plan.push(conv("dec0.proj", ConvKind::Standard, ch[0], CHANNELS, 3, 1, h, w, true, false, up));
        debug_assert_eq!((h, w), (height, width));
        Ok(plan)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv(
    name: &str,
    kind: ConvKind,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    out_height: usize,
    out_width: usize,
    bias: bool,
    batch_norm: bool,
    upsample_before: bool,
) -> PlannedConv {
    PlannedConv {
        name: name.to_string(),
        kind,
        in_channels,
        out_channels,
        kernel,
        stride,
        out_height,
        out_width,
        bias,
        batch_norm,
        upsample_before,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Obfuscator,
    Deobfuscator,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Obfuscator => 0,
            Role::Deobfuscator => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Role::Obfuscator),
            1 => Some(Role::Deobfuscator),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Obfuscator => "obfuscator",
            Role::Deobfuscator => "deobfuscator",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obfuscator" => Ok(Role::Obfuscator),
            "deobfuscator" => Ok(Role::Deobfuscator),
            other => Err(Error::Argument(format!("unknown role `{other}`"))),
        }
    }
}

/// A built autoencoder with its spec, role and normalization mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle {
    spec: AutoencoderSpec,
    role: Role,
    pub mode: Mode,
    pub net: Sequential,
    /// Hash of the configuration that produced the weights, if known.
    pub config_hash: Option<String>,
}

/// Deterministically initialised autoencoder.
pub fn build_autoencoder(spec: &AutoencoderSpec, role: Role, seed: u64) -> Result<ModelHandle> {
    let plan = spec.layer_plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let last = plan.len() - 1;
    for (i, pc) in plan.iter().enumerate() {
        if pc.upsample_before {
            layers.push(Layer::Upsample2x);
        }
        let depthwise = pc.kind == ConvKind::Depthwise;
        layers.push(Layer::Conv(Conv2d::new(
            pc.in_channels,
            pc.out_channels,
            pc.kernel,
            pc.stride,
            depthwise,
            pc.bias,
            &mut rng,
        )));
        if pc.batch_norm {
            layers.push(Layer::BatchNorm(BatchNorm2d::new(pc.out_channels)));
        }
        layers.push(if i == last { Layer::Sigmoid } else { Layer::Relu });
    }
    Ok(ModelHandle {
        spec: spec.clone(),
        role,
        mode: Mode::Train,
        net: Sequential::new(layers),
        config_hash: None,
    })
}

impl ModelHandle {
    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn eval(mut self) -> Self {
        self.mode = Mode::Eval;
        self
    }

    pub fn train(mut self) -> Self {
        self.mode = Mode::Train;
        self
    }

    pub fn checksum(&self) -> String {
        state_checksum(&self.net)
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h != self.spec.input_height || w != self.spec.input_width {
            return Err(Error::Structural(format!(
                "{} expects {}x{} frames, got {h}x{w}",
                self.role, self.spec.input_height, self.spec.input_width
            )));
        }
        Ok(())
    }

    /// Runs a tensor batch through the network without keeping caches.
    pub fn forward_tensor(&self, x: Tensor) -> Result<Tensor> {
        self.check_input(x.h, x.w)?;
        if x.c != CHANNELS {
            return Err(Error::Structural(format!("expected 3 channels, got {}", x.c)));
        }
        Ok(self.net.infer(x, self.mode))
    }

    /// Transforms a batch of frames. Outputs have the inputs' shape and lie in `[0, 1]`.
    pub fn forward(&self, batch: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&ImageTensor> = batch.iter().collect();
        let x = Tensor::from_images(&refs)?;
        self.forward_tensor(x)?.to_images()
    }

    /// Eval-mode transform processed in fixed-size chunks.
    pub fn transform_all(&self, frames: &[ImageTensor], chunk: usize) -> Result<Vec<ImageTensor>> {
        let mut out = Vec::with_capacity(frames.len());
        for c in frames.chunks(chunk.max(1)) {
            out.extend(self.forward(c)?);
        }
        Ok(out)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"AOBM";
const MODEL_VERSION: u32 = 1;

impl ModelHandle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = BlobWriter::new(MODEL_MAGIC, MODEL_VERSION);
        w.str(&serde_json::to_string(&self.spec)?);
        w.u8(self.role.tag());
        w.u8(match self.mode {
            Mode::Train => 0,
            Mode::Eval => 1,
        });
        w.str(self.config_hash.as_deref().unwrap_or(""));
        let params = self.net.params();
        w.u32(params.len() as u32);
        for p in params {
            w.array(&p.shape, &p.data);
        }
        let buffers = self.net.buffers();
        w.u32(buffers.len() as u32);
        for b in buffers {
            w.array(&[b.len()], b);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, expected_role: Option<Role>) -> Result<Self> {
        let fail = |check: String| Error::Integrity {
            path: path.to_path_buf(),
            check,
        };
        let mut r = BlobReader::open(bytes, path, MODEL_MAGIC, MODEL_VERSION)?;
        let spec: AutoencoderSpec = serde_json::from_str(&r.str()?)
            .map_err(|e| fail(format!("spec header does not parse: {e}")))?;
        let role = Role::from_tag(r.u8()?).ok_or_else(|| fail("unknown role tag".into()))?;
        if let Some(expected) = expected_role {
            if expected != role {
                return Err(Error::RoleMismatch {
                    expected: expected.to_string(),
                    found: role.to_string(),
                });
            }
        }
        let mode = match r.u8()? {
            0 => Mode::Train,
            1 => Mode::Eval,
            t => return Err(fail(format!("unknown mode tag {t}"))),
        };
        let hash = r.str()?;
        let mut model = build_autoencoder(&spec, role, 0)
            .map_err(|e| fail(format!("stored spec is invalid: {e}")))?;
        model.mode = mode;
        model.config_hash = (!hash.is_empty()).then_some(hash);
        let n = r.u32()? as usize;
        let mut params = model.net.params_mut();
        if n != params.len() {
            return Err(fail(format!(
                "file has {n} parameter tensors, spec needs {}",
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            let (shape, data) = r.array()?;
            if shape != p.shape {
                return Err(fail(format!(
                    "parameter {i} has shape {shape:?}, spec needs {:?}",
                    p.shape
                )));
            }
            p.data = data;
        }
        let nb = r.u32()? as usize;
        let mut buffers = model.net.buffers_mut();
        if nb != buffers.len() {
            return Err(fail(format!(
                "file has {nb} buffers, spec needs {}",
                buffers.len()
            )));
        }
        for b in buffers.iter_mut() {
            let (shape, data) = r.array()?;
            if shape != [b.len()] {
                return Err(fail("buffer length mismatch".into()));
            }
            **b = data;
        }
        if !r.finished() {
            return Err(fail("trailing bytes after parameters".into()));
        }
        Ok(model)
    }
}

pub fn save_model(model: &ModelHandle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// Loads a model file; with `expected_role` set, a file of the other role is refused.
pub fn load_model(path: impl AsRef<Path>, expected_role: Option<Role>) -> Result<ModelHandle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelHandle::from_bytes(&bytes, path, expected_role)
}
