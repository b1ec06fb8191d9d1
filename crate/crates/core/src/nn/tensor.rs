use crate::error::{Error, Result};
use crate::types::{clamp_image, ImageTensor, CHANNELS};

/// Dense NCHW activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Structural(format!(
                "buffer of {} values does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &Tensor, k: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks frames of identical size into an `N x 3 x H x W` tensor.
    pub fn from_images(images: &[&ImageTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("empty image batch".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut t = Tensor::zeros(images.len(), CHANNELS, h, w);
        for (i, img) in images.iter().enumerate() {
            if img.height() != h || img.width() != w {
                return Err(Error::Structural(format!(
                    "batch mixes {h}x{w} and {}x{} frames",
                    img.height(),
                    img.width()
                )));
            }
            let plane = h * w;
            let dst = t.sample_mut(i);
            for (p, px) in img.values().chunks_exact(CHANNELS).enumerate() {
                for c in 0..CHANNELS {
                    dst[c * plane + p] = px[c];
                }
            }
        }
        Ok(t)
    }

    /// Splits a 3-channel tensor back into frames, clipping into `[0, 1]`.
    pub fn to_images(&self) -> Result<Vec<ImageTensor>> {
        if self.c != CHANNELS {
            return Err(Error::Structural(format!(
                "expected {CHANNELS} channels, got {}",
                self.c
            )));
        }
        (0..self.n)
            .map(|i| clamp_image(self.h, self.w, CHANNELS, self.interleaved(i)))
            .collect()
    }

    /// Sample `i` in channel-interleaved (HWC) order.
    pub fn interleaved(&self, i: usize) -> Vec<f64> {
        let plane = self.plane_len();
        let src = self.sample(i);
        let mut out = vec![0.0; plane * self.c];
        for c in 0..self.c {
            for p in 0..plane {
                out[p * self.c + c] = src[c * plane + p];
            }
        }
        out
    }
}
