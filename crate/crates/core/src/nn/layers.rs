use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tensor::{axpy, dot, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-pass context: mode plus the generator that draws dropout masks.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn train(seed: u64) -> Self {
        Self {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn infer() -> Self {
        Self {
            mode: Mode::Infer,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub trait Layer<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>>;

    /// Accumulates parameter gradients and, when asked, returns the gradient
    /// with respect to the last forward input.
    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-trainable state that still belongs in a checkpoint.
    fn buffers(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

fn not_ready(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called before forward"))
}

fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
    t
}

/// Valid cross-correlation over `[B, C_in, H, W]` inputs.
///
/// Each sample is unrolled into a `(C_in*fH*fW) x (H'*W')` column matrix.
/// All-zero rows of that matrix are dropped before the product, which is
/// what makes masked inputs cheap.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: (usize, usize),
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    in_shape: Vec<usize>,
    out_hw: (usize, usize),
    samples: Vec<Columns<T>>,
}

/// Nonzero rows of one sample's column matrix.
#[derive(Debug, Clone)]
struct Columns<T> {
    rows: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: (usize, usize), stride: (usize, usize), rng: &mut ChaCha8Rng) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        Self::from_params(
            he_uniform(&[c_out, c_in, kernel.0, kernel.1], fan_in, rng),
            Tensor::zeros(&[c_out]),
            stride,
        )
        .expect("consistent shapes")
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>, stride: (usize, usize)) -> Result<Self> {
        if weight.rank() != 4 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Size(format!(
                "conv weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Range("conv stride must be positive".into()));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            cache: None,
        })
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (_, _, fh, fw) = self.dims();
        if fh > h || fw > w {
            return Err(Error::Size(format!("{fh}x{fw} filter on {h}x{w} input")));
        }
        Ok(((h - fh) / self.stride.0 + 1, (w - fw) / self.stride.1 + 1))
    }

    fn unroll(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Columns<T> {
        let (_, c_in, fh, fw) = self.dims();
        let n = oh * ow;
        let (sh, sw) = self.stride;
        let mut rows = Vec::new();
        let mut data = Vec::new();
        let mut line = vec![T::zero(); n];
        for ci in 0..c_in {
            for dh in 0..fh {
                for dw in 0..fw {
                    let mut any = false;
                    for oy in 0..oh {
                        let src = &x[(ci * h + oy * sh + dh) * w..];
                        let dst = &mut line[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let v = src[ox * sw + dw];
                            any |= v != T::zero();
                            *d = v;
                        }
                    }
                    if any {
                        rows.push((ci * fh + dh) * fw + dw);
                        data.extend_from_slice(&line);
                    }
                }
            }
        }
        Columns { rows, data }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let (c_out, c_in, fh, fw) = self.dims();
        if x.rank() != 4 || x.shape()[1] != c_in {
            return Err(Error::Size(format!(
                "conv expects [B, {c_in}, H, W], got {:?}",
                x.shape()
            )));
        }
        let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.output_hw(h, w)?;
        let n = oh * ow;
        let k = c_in * fh * fw;
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        let this = &*self;
        let per_sample: Vec<(Columns<T>, Vec<T>)> = (0..b)
            .into_par_iter()
            .map(|s| {
                let cols = this.unroll(x.sample(s), h, w, oh, ow);
                let mut out = vec![T::zero(); c_out * n];
                for co in 0..c_out {
                    let y = &mut out[co * n..(co + 1) * n];
                    y.iter_mut().for_each(|v| *v = bias[co]);
                    let wrow = &weight[co * k..(co + 1) * k];
                    for (r, &kk) in cols.rows.iter().enumerate() {
                        let wv = wrow[kk];
                        if wv != T::zero() {
                            axpy(wv, &cols.data[r * n..(r + 1) * n], y);
                        }
                    }
                }
                (cols, out)
            })
            .collect();
        let mut out = Vec::with_capacity(b * c_out * n);
        let mut samples = Vec::with_capacity(b);
        for (cols, o) in per_sample {
            samples.push(cols);
            out.extend(o);
        }
        self.cache = Some(ConvCache {
            in_shape: x.shape().to_vec(),
            out_hw: (oh, ow),
            samples,
        });
        Tensor::from_vec(&[b, c_out, oh, ow], out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| not_ready("conv2d"))?;
        let (c_out, c_in, fh, fw) = self.dims();
        let b = cache.in_shape[0];
        let (h, w) = (cache.in_shape[2], cache.in_shape[3]);
        let (oh, ow) = cache.out_hw;
        grad.ensure_shape(&[b, c_out, oh, ow], "conv2d backward")?;
        let n = oh * ow;
        let k = c_in * fh * fw;
        let (sh, sw) = self.stride;
        let weight = self.weight.value.data();
        let partial: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = (0..b)
            .into_par_iter()
            .map(|s| {
                let cols = &cache.samples[s];
                let dy = grad.sample(s);
                let mut dw = vec![T::zero(); c_out * k];
                let mut db = vec![T::zero(); c_out];
                for co in 0..c_out {
                    let g = &dy[co * n..(co + 1) * n];
                    db[co] = g.iter().copied().sum();
                    for (r, &kk) in cols.rows.iter().enumerate() {
                        dw[co * k + kk] = dot(g, &cols.data[r * n..(r + 1) * n]);
                    }
                }
                let dx = need_input_grad.then(|| {
                    let mut dx = vec![T::zero(); c_in * h * w];
                    let mut line = vec![T::zero(); n];
                    for kk in 0..k {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        for co in 0..c_out {
                            let wv = weight[co * k + kk];
                            if wv != T::zero() {
                                axpy(wv, &dy[co * n..(co + 1) * n], &mut line);
                            }
                        }
                        let (ci, rem) = (kk / (fh * fw), kk % (fh * fw));
                        let (dh, dw_) = (rem / fw, rem % fw);
                        for oy in 0..oh {
                            let base = (ci * h + oy * sh + dh) * w;
                            for ox in 0..ow {
                                dx[base + ox * sw + dw_] += line[oy * ow + ox];
                            }
                        }
                    }
                    dx
                });
                (dw, db, dx)
            })
            .collect();
        let mut dx_all = need_input_grad.then(|| Vec::with_capacity(b * c_in * h * w));
        for (dw, db, dx) in partial {
            axpy(T::one(), &dw, self.weight.grad.data_mut());
            axpy(T::one(), &db, self.bias.grad.data_mut());
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend(dx);
            }
        }
        dx_all
            .map(|d| Tensor::from_vec(&cache.in_shape, d))
            .transpose()
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-channel normalization over the batch and all trailing axes of a
/// `[B, C, ...]` input.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let c = self.channels();
        if x.rank() < 2 || x.shape()[1] != c {
            return Err(Error::Size(format!(
                "batch norm over {c} channels got {:?}",
                x.shape()
            )));
        }
        let b = x.shape()[0];
        let l: usize = x.shape()[2..].iter().product();
        let count = b * l;
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match ctx.mode {
            Mode::Train => {
                let nf = T::from_f64(count as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += xd[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter().copied().sum();
                    }
                    let mu = s / nf;
                    let mut q = T::zero();
                    for bi in 0..b {
                        for &v in &xd[(bi * c + ch) * l..(bi * c + ch + 1) * l] {
                            q += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / nf;
                }
                let m = T::from_f64(self.momentum);
                let unbias = if count > 1 {
                    T::from_f64(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * var[ch] * unbias;
                }
            }
            Mode::Infer => {
                mean.copy_from_slice(self.running_mean.data());
                var.copy_from_slice(self.running_var.data());
            }
        }
        let eps = T::from_f64(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let (g, be) = (self.gamma.value.data(), self.beta.value.data());
        for bi in 0..b {
            for ch in 0..c {
                let span = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                for i in span {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + be[ch];
                }
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode: ctx.mode,
        });
        Tensor::from_vec(x.shape(), out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| not_ready("batch_norm"))?;
        grad.ensure_shape(&cache.shape, "batch norm backward")?;
        let c = self.channels();
        let b = cache.shape[0];
        let l: usize = cache.shape[2..].iter().product();
        let dy = grad.data();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let span = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                sum_dy[ch] += dy[span.clone()].iter().copied().sum();
                sum_dy_xhat[ch] += dot(&dy[span.clone()], &cache.xhat[span]);
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat[ch];
            self.beta.grad.data_mut()[ch] += sum_dy[ch];
        }
        if !need_input_grad {
            return Ok(None);
        }
        let g = self.gamma.value.data();
        let mut dx = vec![T::zero(); dy.len()];
        let nf = T::from_f64((b * l) as f64);
        for bi in 0..b {
            for ch in 0..c {
                let span = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                let k = g[ch] * cache.inv_std[ch];
                for i in span {
                    dx[i] = match cache.mode {
                        Mode::Infer => k * dy[i],
                        Mode::Train => {
                            k * (dy[i] - sum_dy[ch] / nf - cache.xhat[i] * sum_dy_xhat[ch] / nf)
                        }
                    };
                }
            }
        }
        Tensor::from_vec(&cache.shape, dx).map(Some)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Layer<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.mask = Some((x.shape().to_vec(), mask));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (shape, mask) = self.mask.as_ref().ok_or_else(|| not_ready("relu"))?;
        grad.ensure_shape(shape, "relu backward")?;
        if !need_input_grad {
            return Ok(None);
        }
        let d = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(shape, d).map(Some)
    }
}

/// Average over every axis after the channel axis: `[B, C, ...] -> [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct MeanPool {
    shape: Option<Vec<usize>>,
}

impl MeanPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Layer<T> for MeanPool {
    fn name(&self) -> &'static str {
        "mean_pool"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        if x.rank() < 3 {
            return Err(Error::Size(format!("mean pool needs [B, C, ...], got {:?}", x.shape())));
        }
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let l: usize = x.shape()[2..].iter().product();
        let inv = T::one() / T::from_f64(l as f64);
        let out = x
            .data()
            .chunks_exact(l)
            .map(|s| s.iter().copied().sum::<T>() * inv)
            .collect();
        self.shape = Some(x.shape().to_vec());
        Tensor::from_vec(&[b, c], out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let shape = self.shape.as_ref().ok_or_else(|| not_ready("mean_pool"))?;
        grad.ensure_shape(&shape[..2], "mean pool backward")?;
        if !need_input_grad {
            return Ok(None);
        }
        let l: usize = shape[2..].iter().product();
        let inv = T::one() / T::from_f64(l as f64);
        let d = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat(g * inv).take(l))
            .collect();
        Tensor::from_vec(shape, d).map(Some)
    }
}

/// Non-overlapping max pooling on `[B, C, H, W]`; trailing rows/columns that
/// do not fill a window are dropped. Ties go to the first element.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub size: (usize, usize),
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(size: (usize, usize)) -> Self {
        Self { size, cache: None }
    }
}

impl<T: Real> Layer<T> for MaxPool2d {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let (ph, pw) = self.size;
        if x.rank() != 4 || x.shape()[2] < ph || x.shape()[3] < pw {
            return Err(Error::Size(format!("{ph}x{pw} max pool on {:?}", x.shape())));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h / ph, w / pw);
        let xd = x.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * ph * w + ox * pw;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let i = base + (oy * ph + dy) * w + ox * pw + dx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        self.cache = Some((x.shape().to_vec(), arg));
        Tensor::from_vec(&[b, c, oh, ow], out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(|| not_ready("max_pool2d"))?;
        if grad.len() != arg.len() {
            return Err(Error::Size("max pool backward gradient size".into()));
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad.data()) {
            d[i] += g;
        }
        Ok(Some(dx))
    }
}

/// Maximum over axis 1 of a `[B, P, C]` input, giving `[B, C]`.
/// Ties go to the lowest index.
#[derive(Debug, Clone, Default)]
pub struct MaxOver {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxOver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Winning index along axis 1 for each `(sample, column)` of the last pass.
    pub fn argmax(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|(_, a)| a.as_slice())
    }
}

impl<T: Real> Layer<T> for MaxOver {
    fn name(&self) -> &'static str {
        "max_over"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.shape()[1] == 0 {
            return Err(Error::Size(format!("max over axis 1 needs [B, P, C], got {:?}", x.shape())));
        }
        let (b, p, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let xd = x.data();
        let mut out = Vec::with_capacity(b * c);
        let mut arg = Vec::with_capacity(b * c);
        for bi in 0..b {
            for ci in 0..c {
                let mut best = 0;
                for pi in 1..p {
                    if xd[(bi * p + pi) * c + ci] > xd[(bi * p + best) * c + ci] {
                        best = pi;
                    }
                }
                out.push(xd[(bi * p + best) * c + ci]);
                arg.push(best);
            }
        }
        self.cache = Some((x.shape().to_vec(), arg));
        Tensor::from_vec(&[b, c], out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(|| not_ready("max_over"))?;
        let (b, p, c) = (shape[0], shape[1], shape[2]);
        grad.ensure_shape(&[b, c], "max over backward")?;
        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for bi in 0..b {
            for ci in 0..c {
                d[(bi * p + arg[bi * c + ci]) * c + ci] = grad.data()[bi * c + ci];
            }
        }
        Ok(Some(dx))
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` in training so
/// inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    cache: Option<(Vec<usize>, Option<Vec<f64>>)>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Range(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl<T: Real> Layer<T> for Dropout {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        if ctx.mode == Mode::Infer || self.rate == 0.0 {
            self.cache = Some((x.shape().to_vec(), None));
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if ctx.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let out = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * T::from_f64(m))
            .collect();
        self.cache = Some((x.shape().to_vec(), Some(mask)));
        Tensor::from_vec(x.shape(), out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (shape, mask) = self.cache.as_ref().ok_or_else(|| not_ready("dropout"))?;
        grad.ensure_shape(shape, "dropout backward")?;
        if !need_input_grad {
            return Ok(None);
        }
        Ok(Some(match mask {
            None => grad.clone(),
            Some(m) => Tensor::from_vec(
                shape,
                grad.data().iter().zip(m).map(|(&g, &k)| g * T::from_f64(k)).collect(),
            )?,
        }))
    }
}

/// Fully connected `[B, in] -> [B, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(he_uniform(&[n_out, n_in], n_in, rng)),
            bias: Param::new(Tensor::zeros(&[n_out])),
            input: None,
        }
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Size(format!(
                "linear weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        })
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.value.shape()[0], self.weight.value.shape()[1])
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let (n_out, n_in) = self.dims();
        if x.rank() != 2 || x.shape()[1] != n_in {
            return Err(Error::Size(format!("linear expects [B, {n_in}], got {:?}", x.shape())));
        }
        let b = x.shape()[0];
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(b * n_out);
        for s in 0..b {
            let xs = x.sample(s);
            for o in 0..n_out {
                out.push(bias[o] + dot(&w[o * n_in..(o + 1) * n_in], xs));
            }
        }
        self.input = Some(x.clone());
        Tensor::from_vec(&[b, n_out], out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = self.input.as_ref().ok_or_else(|| not_ready("linear"))?;
        let (n_out, n_in) = self.dims();
        let b = x.shape()[0];
        grad.ensure_shape(&[b, n_out], "linear backward")?;
        for s in 0..b {
            let g = grad.sample(s);
            let xs = x.sample(s);
            for o in 0..n_out {
                axpy(g[o], xs, &mut self.weight.grad.data_mut()[o * n_in..(o + 1) * n_in]);
                self.bias.grad.data_mut()[o] += g[o];
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let w = self.weight.value.data();
        let mut dx = Tensor::zeros(&[b, n_in]);
        for s in 0..b {
            let g = grad.sample(s).to_vec();
            let d = dx.sample_mut(s);
            for o in 0..n_out {
                axpy(g[o], &w[o * n_in..(o + 1) * n_in], d);
            }
        }
        Ok(Some(dx))
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fixed per-row scaling of `[B, C, H, W]` along `H`; used to apply a
/// frequency mask ahead of a convolution.
#[derive(Debug, Clone)]
pub struct RowScale<T> {
    pub weights: Tensor<T>,
    shape: Option<Vec<usize>>,
}

impl<T: Real> RowScale<T> {
    pub fn new(weights: Vec<T>) -> Self {
        let n = weights.len();
        Self {
            weights: Tensor::from_vec(&[n], weights).expect("rank-1 shape"),
            shape: None,
        }
    }

    fn scale(&self, shape: &[usize], data: &[T]) -> Vec<T> {
        let (h, w) = (shape[2], shape[3]);
        let k = self.weights.data();
        data.chunks_exact(w)
            .enumerate()
            .flat_map(|(r, row)| {
                let f = k[r % h];
                row.iter().map(move |&v| v * f)
            })
            .collect()
    }
}

impl<T: Real> Layer<T> for RowScale<T> {
    fn name(&self) -> &'static str {
        "row_scale"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[2] != self.weights.len() {
            return Err(Error::Size(format!(
                "row scale of height {} got {:?}",
                self.weights.len(),
                x.shape()
            )));
        }
        self.shape = Some(x.shape().to_vec());
        Tensor::from_vec(x.shape(), self.scale(x.shape(), x.data()))
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let shape = self.shape.as_ref().ok_or_else(|| not_ready("row_scale"))?;
        grad.ensure_shape(shape, "row scale backward")?;
        if !need_input_grad {
            return Ok(None);
        }
        Tensor::from_vec(shape, self.scale(shape, grad.data())).map(Some)
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        vec![&self.weights]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weights]
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn name(&self) -> &'static str {
        "sequential"
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, ctx)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let mut g = grad.clone();
        let n = self.layers.len();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            let need = i > 0 || need_input_grad;
            match l.backward(&g, need)? {
                Some(next) => g = next,
                None => {
                    debug_assert!(!need);
                    return Ok(None);
                }
            }
        }
        Ok((n == 0 || need_input_grad).then_some(g))
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn naive_conv(x: &[f64], c_in: usize, h: usize, w: usize, wt: &Tensor<f64>, bias: &[f64], s: (usize, usize)) -> Vec<f64> {
        let (co, fh, fw) = (wt.shape()[0], wt.shape()[2], wt.shape()[3]);
        let (oh, ow) = ((h - fh) / s.0 + 1, (w - fw) / s.1 + 1);
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for dy in 0..fh {
                            for dx in 0..fw {
                                acc += wt.data()[((o * c_in + c) * fh + dy) * fw + dx]
                                    * x[(c * h + y * s.0 + dy) * w + xx * s.1 + dx];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn unit_filter_doubles() {
        let mut conv = Conv2d::from_params(
            Tensor::<f32>::full(&[1, 1, 1, 1], 2.0),
            Tensor::zeros(&[1]),
            (1, 1),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, -2.0, 0.0, 3.5, 4.0, 0.25]).unwrap();
        let y = conv.forward(&x, &mut Ctx::infer()).unwrap();
        assert_eq!(y.data(), &[2.0, -4.0, 0.0, 7.0, 8.0, 0.5]);
    }

    #[test]
    fn full_height_filter_collapses_rows() {
        let mut conv = Conv2d::<f32>::new(1, 3, (256, 1), (1, 1), &mut rng());
        let y = conv
            .forward(&Tensor::full(&[1, 1, 256, 517], 0.5), &mut Ctx::infer())
            .unwrap();
        assert_eq!(y.shape(), &[1, 3, 1, 517]);
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let mut r = rng();
        for &(stride, c_in) in &[((1, 1), 1), ((1, 2), 2), ((2, 1), 3)] {
            let mut conv = Conv2d::<f64>::new(c_in, 2, (2, 2), stride, &mut r);
            conv.bias.value = Tensor::from_vec(&[2], vec![0.3, -0.1]).unwrap();
            let x: Vec<f64> = (0..2 * c_in * 20).map(|_| r.random_range(-1.0..1.0)).collect();
            let xt = Tensor::from_vec(&[2, c_in, 4, 5], x.clone()).unwrap();
            let y = conv.forward(&xt, &mut Ctx::infer()).unwrap();
            for s in 0..2 {
                let want = naive_conv(
                    &x[s * c_in * 20..(s + 1) * c_in * 20],
                    c_in,
                    4,
                    5,
                    &conv.weight.value,
                    conv.bias.value.data(),
                    stride,
                );
                for (a, b) in y.sample(s).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_filter() {
        let mut conv = Conv2d::<f32>::new(1, 1, (5, 1), (1, 1), &mut rng());
        let r = conv.forward(&Tensor::zeros(&[1, 1, 4, 4]), &mut Ctx::infer());
        assert!(matches!(r, Err(Error::Size(_))));
        let r = conv.forward(&Tensor::zeros(&[1, 2, 8, 8]), &mut Ctx::infer());
        assert!(matches!(r, Err(Error::Size(_))));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let g = Tensor::<f32>::zeros(&[1, 1]);
        let mut layers: Vec<Box<dyn Layer<f32>>> = vec![
            Box::new(Conv2d::<f32>::new(1, 1, (1, 1), (1, 1), &mut rng())),
            Box::new(BatchNorm::<f32>::new(1)),
            Box::new(Relu::new()),
            Box::new(MeanPool::new()),
            Box::new(MaxPool2d::new((2, 2))),
            Box::new(MaxOver::new()),
            Box::new(Dropout::new(0.5).unwrap()),
            Box::new(Linear::<f32>::new(1, 1, &mut rng())),
            Box::new(RowScale::new(vec![1.0f32])),
        ];
        for l in &mut layers {
            assert!(matches!(l.backward(&g, true), Err(Error::State(_))), "{}", l.name());
        }
    }

    #[test]
    fn relu_blocks_negative_gradient() {
        let mut r = Relu::new();
        let x = Tensor::from_vec(&[1, 3], vec![-1.0f64, 2.0, -0.5]).unwrap();
        r.forward(&x, &mut Ctx::infer()).unwrap();
        let g = Layer::<f64>::backward(&mut r, &Tensor::full(&[1, 3], 1.0), true).unwrap().unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn mean_pool_spreads_gradient() {
        let mut p = MeanPool::new();
        p.forward(&Tensor::<f64>::zeros(&[1, 2, 1, 4]), &mut Ctx::infer()).unwrap();
        let g = Layer::<f64>::backward(&mut p, &Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(), true)
            .unwrap()
            .unwrap();
        assert_eq!(g.data(), &[0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn dropout_modes() {
        let mut d = Dropout::new(0.25).unwrap();
        let x = Tensor::<f64>::full(&[1, 20_000], 1.0);
        let y = d.forward(&x, &mut Ctx::infer()).unwrap();
        assert_eq!(y, x);
        let y = d.forward(&x, &mut Ctx::train(3)).unwrap();
        let mean = y.sum() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn batch_norm_infer_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.running_mean = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        bn.running_var = Tensor::from_vec(&[2], vec![4.0, 1.0]).unwrap();
        bn.eps = 0.0;
        let x = Tensor::from_vec(&[1, 2, 1], vec![3.0, 0.0]).unwrap();
        let y1 = bn.forward(&x, &mut Ctx::infer()).unwrap();
        let y2 = bn.forward(&x, &mut Ctx::infer()).unwrap();
        assert_eq!(y1.data(), &[1.0, 1.0]);
        assert_eq!(y1, y2);
        assert_eq!(bn.running_mean.data(), &[1.0, -1.0]);
    }

    #[test]
    fn batch_norm_train_standardizes() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::from_vec(&[4, 1, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = bn.forward(&x, &mut Ctx::train(0)).unwrap();
        let m: f64 = y.data().iter().sum::<f64>() / 4.0;
        let v: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-5);
        assert!(bn.running_var.data()[0] >= 0.0);
    }

    #[test]
    fn max_over_picks_first_maximum() {
        let mut m = MaxOver::new();
        let x = Tensor::from_vec(&[1, 3, 2], vec![1.0f64, 5.0, 4.0, 5.0, 4.0, 0.0]).unwrap();
        let y = m.forward(&x, &mut Ctx::infer()).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0]);
        assert_eq!(m.argmax().unwrap(), &[1, 0]);
    }

    #[test]
    fn max_pool_floor_shape() {
        let mut p = MaxPool2d::new((2, 2));
        let y = p
            .forward(&Tensor::<f32>::zeros(&[2, 3, 5, 7]), &mut Ctx::infer())
            .unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
    }

    #[test]
    fn zero_rows_do_not_change_output() {
        let mut r = rng();
        let mut conv = Conv2d::<f64>::new(1, 4, (6, 1), (1, 1), &mut r);
        let mut x: Vec<f64> = (0..6 * 9).map(|_| r.random_range(-1.0..1.0)).collect();
        for v in &mut x[9..27] {
            *v = 0.0;
        }
        let xt = Tensor::from_vec(&[1, 1, 6, 9], x.clone()).unwrap();
        let y = conv.forward(&xt, &mut Ctx::infer()).unwrap();
        let want = naive_conv(&x, 1, 6, 9, &conv.weight.value, conv.bias.value.data(), (1, 1));
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
