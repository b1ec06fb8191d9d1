use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of color channels carried by every frame.
pub const CHANNELS: usize = 3;

/// Smallest accepted frame side, the floor of the autoencoder's downsampling stack.
pub const MIN_SIDE: usize = 8;

/// A normalized RGB frame with values in `[0, 1]`.
///
/// Pixels are stored row-major and channel-interleaved: the value of channel
/// `c` at row `y`, column `x` lives at `(y * width + x) * 3 + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(height, width, CHANNELS, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Argument(format!(
                "pixel value {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Constant-valued frame.
    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[self.index(y, x, c)]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Returns one channel as a row-major plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(CHANNELS).copied().collect()
    }

    /// Luma (0.299 R + 0.587 G + 0.114 B) as a row-major plane.
    pub fn luma(&self) -> Vec<f64> {
        self.values
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Reads an 8-bit PNG (any color type the decoder understands) and divides by 255.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_rgb8(&img.to_rgb8())
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let values = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(h as usize, w as usize, values)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.values.iter().map(|&v| to_u8(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Writes a lossless 8-bit PNG. `text` entries are stored as tEXt chunks.
    pub fn save_png(&self, path: impl AsRef<Path>, text: &[(&str, &str)]) -> Result<()> {
        write_png_rgb8(
            path.as_ref(),
            self.width as u32,
            self.height as u32,
            self.to_rgb8().as_raw(),
            text,
        )
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn write_png_rgb8(
    path: &Path,
    width: u32,
    height: u32,
    raw: &[u8],
    text: &[(&str, &str)],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let codec = |e: png::EncodingError| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    for (k, v) in text {
        encoder
            .add_text_chunk((*k).to_string(), (*v).to_string())
            .map_err(codec)?;
    }
    let mut writer = encoder.write_header().map_err(codec)?;
    writer.write_image_data(raw).map_err(codec)?;
    writer.finish().map_err(codec)
}

fn check_shape(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if channels != CHANNELS {
        return Err(Error::Structural(format!(
            "expected {CHANNELS} channels, got {channels}"
        )));
    }
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::Structural(format!(
            "frame {height}x{width} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    if len != height * width * channels {
        return Err(Error::Structural(format!(
            "buffer of {len} values does not match {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

/// Clips an interleaved `height x width x channels` array into a valid frame.
///
/// NaN values map to 0.
pub fn clamp_image(
    height: usize,
    width: usize,
    channels: usize,
    mut values: Vec<f64>,
) -> Result<ImageTensor> {
    check_shape(height, width, channels, values.len())?;
    for v in &mut values {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
    Ok(ImageTensor {
        height,
        width,
        values,
    })
}
