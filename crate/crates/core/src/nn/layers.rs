//! Layers with hand-written backward passes.
//!
//! Forward passes never mutate a layer. Batch-norm statistics gathered in
//! training mode travel in the [`Trace`] and are folded into the running
//! averages only when the caller asks for it, so a network can be run in
//! training mode while staying frozen.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::gemm;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![v; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// One filter per input channel (`in_channels == out_channels`).
    pub depthwise: bool,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv2d {
    /// He-normal initialised convolution with `padding = kernel / 2`.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        depthwise: bool,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(!depthwise || in_channels == out_channels);
        let per_filter = if depthwise { 1 } else { in_channels };
        let fan_in = (per_filter * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let shape = vec![out_channels, per_filter, kernel, kernel];
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            depthwise,
            weight: Param { shape, data },
            bias: bias.then(|| Param::zeros(vec![out_channels])),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |x: usize| (x + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn is_pointwise(&self) -> bool {
        !self.depthwise && self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            *o = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Range of output columns whose input column `ox * s + kx - p` is inside `[0, w)`.
    fn valid_range(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let kx = kx as isize;
        let lo = ((p - kx).max(0) + s - 1) / s;
        let hi = ((w as isize - 1 + p - kx) / s + 1).clamp(0, wo as isize);
        (lo as usize, (hi as usize).max(lo as usize))
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(x.h, x.w);
        let mut out = Tensor::zeros(x.n, self.out_channels, ho, wo);
        let mut cols = if self.depthwise || self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; self.col_rows() * ho * wo]
        };
        for i in 0..x.n {
            let xi = x.sample(i);
            let yi = out.sample_mut(i);
            if self.depthwise {
                self.depthwise_forward(xi, x.h, x.w, ho, wo, yi);
            } else if self.is_pointwise() {
                gemm(
                    self.out_channels,
                    self.in_channels,
                    ho * wo,
                    &self.weight.data,
                    false,
                    xi,
                    false,
                    0.0,
                    yi,
                );
            } else {
                self.im2col(xi, x.h, x.w, ho, wo, &mut cols);
                gemm(
                    self.out_channels,
                    self.col_rows(),
                    ho * wo,
                    &self.weight.data,
                    false,
                    &cols,
                    false,
                    0.0,
                    yi,
                );
            }
            if let Some(b) = &self.bias {
                for (o, &bv) in b.data.iter().enumerate() {
                    yi[o * ho * wo..(o + 1) * ho * wo]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        out
    }

    fn depthwise_forward(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, y: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.in_channels {
            let xp = &x[c * h * w..(c + 1) * h * w];
            let yp = &mut y[c * ho * wo..(c + 1) * ho * wo];
            let wk = &self.weight.data[c * k * k..(c + 1) * k * k];
            for oy in 0..ho {
                let yrow = &mut yp[oy * wo..(oy + 1) * wo];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xp[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (lo, hi) = self.valid_range(kx, w, wo);
                        for ox in lo..hi {
                            yrow[ox] += wv * xrow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }

    fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f64>]>) -> Tensor {
        let (ho, wo) = (dy.h, dy.w);
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let (mut dw, mut db) = match grads {
            Some(slots) => {
                let (w, rest) = slots.split_at_mut(1);
                (Some(&mut w[0]), rest.first_mut())
            }
            None => (None, None),
        };
        let mut cols = if self.depthwise || self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; self.col_rows() * ho * wo]
        };
        let mut dcols = cols.clone();
        for i in 0..x.n {
            let xi = x.sample(i);
            let dyi = dy.sample(i);
            if let Some(db) = db.as_deref_mut() {
                for (o, g) in db.iter_mut().enumerate() {
                    *g += dyi[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
                }
            }
            let dxi = dx.sample_mut(i);
            if self.depthwise {
                self.depthwise_backward(xi, x.h, x.w, dyi, ho, wo, dxi, dw.as_deref_mut());
                continue;
            }
            let (rows, pointwise) = (self.col_rows(), self.is_pointwise());
            if !pointwise {
                self.im2col(xi, x.h, x.w, ho, wo, &mut cols);
            }
            let cols_ref: &[f64] = if pointwise { xi } else { &cols };
            if let Some(dw) = dw.as_deref_mut() {
                gemm(
                    self.out_channels,
                    ho * wo,
                    rows,
                    dyi,
                    false,
                    cols_ref,
                    true,
                    1.0,
                    dw,
                );
            }
            if pointwise {
                gemm(
                    rows,
                    self.out_channels,
                    ho * wo,
                    &self.weight.data,
                    true,
                    dyi,
                    false,
                    0.0,
                    dxi,
                );
            } else {
                gemm(
                    rows,
                    self.out_channels,
                    ho * wo,
                    &self.weight.data,
                    true,
                    dyi,
                    false,
                    0.0,
                    &mut dcols,
                );
                self.col2im(&dcols, x.h, x.w, ho, wo, dxi);
            }
        }
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn depthwise_backward(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        dy: &[f64],
        ho: usize,
        wo: usize,
        dx: &mut [f64],
        mut dw: Option<&mut Vec<f64>>,
    ) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.in_channels {
            let xp = &x[c * h * w..(c + 1) * h * w];
            let dxp = &mut dx[c * h * w..(c + 1) * h * w];
            let dyp = &dy[c * ho * wo..(c + 1) * ho * wo];
            let wk = &self.weight.data[c * k * k..(c + 1) * k * k];
            for oy in 0..ho {
                let dyrow = &dyp[oy * wo..(oy + 1) * wo];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = iy as usize * w;
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (lo, hi) = self.valid_range(kx, w, wo);
                        let mut acc = 0.0;
                        for ox in lo..hi {
                            let ix = row + ox * s + kx - p;
                            dxp[ix] += wv * dyrow[ox];
                            acc += dyrow[ox] * xp[ix];
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[c * k * k + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], 1.0),
            beta: Param::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Cache) {
        let (n, c, plane) = (x.n, x.c, x.plane_len());
        assert_eq!(c, self.channels(), "batch-norm channels");
        let mut y = x.clone();
        match mode {
            Mode::Eval => {
                let invstd: Vec<f64> = self
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + BN_EPS).sqrt())
                    .collect();
                let mut xhat = x.clone();
                for i in 0..n {
                    let (xs, ys) = (xhat.sample_mut(i), y.sample_mut(i));
                    for ch in 0..c {
                        let (g, b, m) = (self.gamma.data[ch], self.beta.data[ch], self.running_mean[ch]);
                        for p in ch * plane..(ch + 1) * plane {
                            xs[p] = (xs[p] - m) * invstd[ch];
                            ys[p] = g * xs[p] + b;
                        }
                    }
                }
                (y, Cache::BnEval { xhat, invstd })
            }
            Mode::Train => {
                let count = (n * plane) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for i in 0..n {
                        sum += x.sample(i)[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                    }
                    let m = sum / count;
                    let mut sq = 0.0;
                    for i in 0..n {
                        sq += x.sample(i)[ch * plane..(ch + 1) * plane]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / count;
                }
                let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = x.clone();
                for i in 0..n {
                    let xs = xhat.sample_mut(i);
                    for ch in 0..c {
                        for v in &mut xs[ch * plane..(ch + 1) * plane] {
                            *v = (*v - mean[ch]) * invstd[ch];
                        }
                    }
                }
                for i in 0..n {
                    let (src, dst) = (xhat.sample(i), y.sample_mut(i));
                    for ch in 0..c {
                        let (g, b) = (self.gamma.data[ch], self.beta.data[ch]);
                        for p in ch * plane..(ch + 1) * plane {
                            dst[p] = g * src[p] + b;
                        }
                    }
                }
                let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let var_unbiased = var.iter().map(|v| v * unbiased).collect();
                (
                    y,
                    Cache::BnTrain {
                        xhat,
                        invstd,
                        mean,
                        var_unbiased,
                    },
                )
            }
        }
    }

    fn backward(&self, cache: &Cache, dy: &Tensor, grads: Option<&mut [Vec<f64>]>) -> Tensor {
        let (n, c, plane) = (dy.n, dy.c, dy.plane_len());
        let mut dx = dy.clone();
        match cache {
            Cache::BnEval { xhat, invstd } => {
                if let Some(slots) = grads {
                    for i in 0..n {
                        let (d, xh) = (dy.sample(i), xhat.sample(i));
                        for ch in 0..c {
                            for p in ch * plane..(ch + 1) * plane {
                                slots[0][ch] += d[p] * xh[p];
                                slots[1][ch] += d[p];
                            }
                        }
                    }
                }
                for i in 0..n {
                    let s = dx.sample_mut(i);
                    for ch in 0..c {
                        let k = self.gamma.data[ch] * invstd[ch];
                        s[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v *= k);
                    }
                }
            }
            Cache::BnTrain { xhat, invstd, .. } => {
                let count = (n * plane) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for i in 0..n {
                    let (d, xh) = (dy.sample(i), xhat.sample(i));
                    for ch in 0..c {
                        for p in ch * plane..(ch + 1) * plane {
                            sum_dy[ch] += d[p];
                            sum_dy_xhat[ch] += d[p] * xh[p];
                        }
                    }
                }
                if let Some(slots) = grads {
                    for ch in 0..c {
                        slots[0][ch] += sum_dy_xhat[ch];
                        slots[1][ch] += sum_dy[ch];
                    }
                }
                for i in 0..n {
                    let (d, xh) = (dy.sample(i), xhat.sample(i));
                    let out = dx.sample_mut(i);
                    for ch in 0..c {
                        let k = self.gamma.data[ch] * invstd[ch] / count;
                        for p in ch * plane..(ch + 1) * plane {
                            out[p] = k * (count * d[p] - sum_dy[ch] - xh[p] * sum_dy_xhat[ch]);
                        }
                    }
                }
            }
            _ => unreachable!("batch-norm cache"),
        }
        dx
    }

    fn commit(&mut self, cache: &Cache) {
        if let Cache::BnTrain {
            mean, var_unbiased, ..
        } = cache
        {
            for ch in 0..self.channels() {
                self.running_mean[ch] =
                    (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * mean[ch];
                self.running_var[ch] =
                    (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * var_unbiased[ch];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    Sigmoid,
    /// Nearest-neighbour 2x upsampling.
    Upsample2x,
}

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv { input: Tensor },
    BnTrain {
        xhat: Tensor,
        invstd: Vec<f64>,
        mean: Vec<f64>,
        var_unbiased: Vec<f64>,
    },
    BnEval { xhat: Tensor, invstd: Vec<f64> },
    Relu { output: Tensor },
    Sigmoid { output: Tensor },
    Upsample,
}

impl Layer {
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => 1 + usize::from(c.bias.is_some()),
            Layer::BatchNorm(_) => 2,
            _ => 0,
        }
    }

    pub fn forward(&self, x: Tensor, mode: Mode) -> (Tensor, Cache) {
        match self {
            Layer::Conv(conv) => {
                let y = conv.forward(&x);
                (y, Cache::Conv { input: x })
            }
            Layer::BatchNorm(bn) => bn.forward(&x, mode),
            Layer::Relu => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                (y.clone(), Cache::Relu { output: y })
            }
            Layer::Sigmoid => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
                (y.clone(), Cache::Sigmoid { output: y })
            }
            Layer::Upsample2x => (upsample2x(&x), Cache::Upsample),
        }
    }

    /// Forward pass without keeping anything for backward.
    pub fn infer(&self, x: Tensor, mode: Mode) -> Tensor {
        match self {
            Layer::Conv(conv) => conv.forward(&x),
            Layer::BatchNorm(bn) => bn.forward(&x, mode).0,
            Layer::Relu | Layer::Sigmoid | Layer::Upsample2x => self.forward(x, mode).0,
        }
    }

    pub fn backward(&self, cache: &Cache, dy: Tensor, grads: Option<&mut [Vec<f64>]>) -> Tensor {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { input }) => conv.backward(input, &dy, grads),
            (Layer::BatchNorm(bn), c) => bn.backward(c, &dy, grads),
            (Layer::Relu, Cache::Relu { output }) => {
                let mut dx = dy;
                for (d, &o) in dx.data.iter_mut().zip(&output.data) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
                dx
            }
            (Layer::Sigmoid, Cache::Sigmoid { output }) => {
                let mut dx = dy;
                for (d, &o) in dx.data.iter_mut().zip(&output.data) {
                    *d *= o * (1.0 - o);
                }
                dx
            }
            (Layer::Upsample2x, Cache::Upsample) => downsample_sum2x(&dy),
            _ => unreachable!("cache does not belong to layer"),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn upsample2x(x: &Tensor) -> Tensor {
    let (h, w) = (x.h, x.w);
    let mut y = Tensor::zeros(x.n, x.c, 2 * h, 2 * w);
    for (src, dst) in x
        .data
        .chunks_exact(h * w)
        .zip(y.data.chunks_exact_mut(4 * h * w))
    {
        for yy in 0..2 * h {
            let srow = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            let drow = &mut dst[yy * 2 * w..(yy + 1) * 2 * w];
            for (xx, d) in drow.iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    y
}

fn downsample_sum2x(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for (src, dst) in dy
        .data
        .chunks_exact(4 * h * w)
        .zip(dx.data.chunks_exact_mut(h * w))
    {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
            }
        }
    }
    dx
}

/// Forward caches for a whole [`Sequential`].
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
}

/// One gradient buffer per parameter, in [`Sequential::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: Tensor, mode: Mode) -> (Tensor, Trace) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for layer in &self.layers {
            let (y, cache) = layer.forward(cur, mode);
            caches.push(cache);
            cur = y;
        }
        (cur, Trace { caches })
    }

    pub fn infer(&self, x: Tensor, mode: Mode) -> Tensor {
        self.layers.iter().fold(x, |cur, l| l.infer(cur, mode))
    }

    /// Back-propagates `dy` and returns the gradient with respect to the input.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// network itself is never touched.
    pub fn backward(&self, trace: &Trace, dy: Tensor, mut grads: Option<&mut Gradients>) -> Tensor {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut cur = dy;
        for (idx, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let slots = grads.as_deref_mut().map(|g| {
                let start = offsets[idx];
                &mut g.0[start..start + layer.param_count()]
            });
            cur = layer.backward(cache, cur, slots);
        }
        cur
    }

    /// Folds the batch statistics of a training-mode trace into the running averages.
    pub fn commit_running_stats(&mut self, trace: &Trace) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let Layer::BatchNorm(bn) = layer {
                bn.commit(cache);
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([&b.running_mean, &b.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([&mut b.running_mean, &mut b.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
