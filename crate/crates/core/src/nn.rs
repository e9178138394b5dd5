//! Minimal CPU layers with hand-written backward passes.
//!
//! Tensors are dense NCHW. Each layer caches what its backward pass needs
//! during a training-mode forward pass; inference passes cache nothing.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point element type of a network.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn to_le(self, out: &mut Vec<u8>);
    fn from_le(bytes: [u8; 4]) -> Self;
}

impl Real for f32 {
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
    ) {
        // SAFETY: `gemm` checks every slice against the extents implied by its strides.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1)
        }
    }

    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: [u8; 4]) -> Self {
        f32::from_le_bytes(bytes)
    }
}

impl Real for f64 {
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
    ) {
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1)
        }
    }

    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self as f32).to_le_bytes());
    }

    fn from_le(bytes: [u8; 4]) -> Self {
        f32::from_le_bytes(bytes) as f64
    }
}

/// `C (m x n) = op(A) op(B) [+ C]`. `A` is stored `m x k` (or `k x m` when
/// `a_t`), `B` is stored `k x n` (or `n x k` when `b_t`); all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, c: &mut [T], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn per_sample(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn checksum(&self) -> f64 {
        self.data.iter().enumerate().map(|(i, v)| v.to_f64_lossy() * (1.0 + (i % 7) as f64)).sum()
    }
}

/// Concatenates along channels.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.shape[0], a.shape[2], a.shape[3]), (b.shape[0], b.shape[2], b.shape[3]));
    let [n, ca, h, w] = a.shape;
    let cb = b.shape[1];
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut data = Vec::with_capacity(n * (sa + sb));
    for i in 0..n {
        data.extend_from_slice(&a.data[i * sa..(i + 1) * sa]);
        data.extend_from_slice(&b.data[i * sb..(i + 1) * sb]);
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Real>(t: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = t.shape;
    let cb = c - ca;
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut a = Vec::with_capacity(n * sa);
    let mut b = Vec::with_capacity(n * sb);
    for i in 0..n {
        let base = i * (sa + sb);
        a.extend_from_slice(&t.data[base..base + sa]);
        b.extend_from_slice(&t.data[base + sa..base + sa + sb]);
    }
    (Tensor::from_vec([n, ca, h, w], a), Tensor::from_vec([n, cb, h, w], b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active, caches kept for backward.
    Train,
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics accumulated into the running estimates; no dropout, no caches.
    Calibrate,
}

pub struct Ctx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }
}

/// Receives every trainable parameter (with its gradient) and every
/// non-trainable buffer, in a fixed order.
pub trait Visitor<T> {
    fn param(&mut self, value: &mut [T], grad: &mut [T]);
    fn buffer(&mut self, _value: &mut [T]) {}
}

pub trait Layer<T: Real>: Send {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T>;
    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T>;
    fn visit(&mut self, _v: &mut dyn Visitor<T>) {}
    fn finish_calibration(&mut self) {}
}

fn he_normal<T: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, slope: f64) -> Vec<T> {
    let sd = (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * sd)
        })
        .collect()
}

/// 3x3 convolution, stride 1, zero padding 1.
pub struct Conv3x3<T> {
    pub cin: usize,
    pub cout: usize,
    weight: Vec<T>,
    bias: Option<Vec<T>>,
    grad_w: Vec<T>,
    grad_b: Vec<T>,
    input: Option<Tensor<T>>,
    col: Vec<T>,
}

impl<T: Real> Conv3x3<T> {
    pub fn new(cin: usize, cout: usize, bias: bool, slope: f64, rng: &mut ChaCha8Rng) -> Self {
        let k = cin * 9;
        Self {
            cin,
            cout,
            weight: he_normal(rng, cout * k, k, slope),
            bias: bias.then(|| vec![T::zero(); cout]),
            grad_w: vec![T::zero(); cout * k],
            grad_b: vec![T::zero(); if bias { cout } else { 0 }],
            input: None,
            col: Vec::new(),
        }
    }

    pub fn parameter_count(cin: usize, cout: usize, bias: bool) -> usize {
        cout * cin * 9 + if bias { cout } else { 0 }
    }
}

/// Unfolds one `(cin, h, w)` sample into a `(cin * 9) x (h * w)` matrix.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = c * 9 + ky * 3 + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into one sample.
fn col2im<T: Real>(col: &[T], cin: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = c * 9 + ky * 3 + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let g = &src[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&g[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(g).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&g[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for Conv3x3<T> {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let [n, cin, h, w] = x.shape;
        assert_eq!(cin, self.cin, "conv input channels");
        let hw = h * w;
        let k = cin * 9;
        self.col.resize(k * hw, T::zero());
        let mut y = Tensor::zeros([n, self.cout, h, w]);
        for b in 0..n {
            im2col(&x.data[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut self.col);
            let out = &mut y.data[b * self.cout * hw..(b + 1) * self.cout * hw];
            if let Some(bias) = &self.bias {
                for (o, &bv) in bias.iter().enumerate() {
                    out[o * hw..(o + 1) * hw].fill(bv);
                }
            }
            gemm(self.cout, k, hw, &self.weight, false, &self.col, false, out, self.bias.is_some());
        }
        if ctx.mode == Mode::Train {
            self.input = Some(x);
        }
        y
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without forward");
        let [n, cin, h, w] = x.shape;
        let hw = h * w;
        let k = cin * 9;
        self.col.resize(k * hw, T::zero());
        let mut dx = Tensor::zeros(x.shape);
        for b in 0..n {
            let g = &grad.data[b * self.cout * hw..(b + 1) * self.cout * hw];
            if self.bias.is_some() {
                for o in 0..self.cout {
                    self.grad_b[o] += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
                }
            }
            im2col(&x.data[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut self.col);
            gemm(self.cout, hw, k, g, false, &self.col, true, &mut self.grad_w, true);
            gemm(k, self.cout, hw, &self.weight, true, g, false, &mut self.col, false);
            col2im(&self.col, cin, h, w, &mut dx.data[b * cin * hw..(b + 1) * cin * hw]);
        }
        dx
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        v.param(&mut self.weight, &mut self.grad_w);
        if let Some(b) = &mut self.bias {
            v.param(b, &mut self.grad_b);
        }
    }
}

pub struct BatchNorm2d<T> {
    gamma: Vec<T>,
    beta: Vec<T>,
    grad_gamma: Vec<T>,
    grad_beta: Vec<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
    eps: f64,
    cache: Option<(Tensor<T>, Vec<f64>)>,
    calib_mean: Vec<f64>,
    calib_var: Vec<f64>,
    calib_batches: usize,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            grad_gamma: vec![T::zero(); c],
            grad_beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            eps: 1e-5,
            cache: None,
            calib_mean: vec![0.0; c],
            calib_var: vec![0.0; c],
            calib_batches: 0,
        }
    }

    pub fn parameter_count(c: usize) -> usize {
        2 * c
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut means = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if ctx.mode == Mode::Eval {
                (self.running_mean[ch].to_f64_lossy(), self.running_var[ch].to_f64_lossy())
            } else {
                let (mut s, mut sq) = (0.0, 0.0);
                for b in 0..n {
                    for &v in &x.data[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        let v = v.to_f64_lossy();
                        s += v;
                        sq += v * v;
                    }
                }
                let mean = s / m;
                let var = (sq / m - mean * mean).max(0.0);
                if ctx.mode == Mode::Calibrate {
                    self.calib_mean[ch] += mean;
                    self.calib_var[ch] += if m > 1.0 { var * m / (m - 1.0) } else { var };
                }
                (mean, var)
            };
            means[ch] = mean;
            inv_std[ch] = 1.0 / (var + self.eps).sqrt();
        }
        if ctx.mode == Mode::Calibrate {
            self.calib_batches += 1;
        }
        // normalize in place; x becomes x-hat
        for b in 0..n {
            for ch in 0..c {
                let (mu, is) = (T::of(means[ch]), T::of(inv_std[ch]));
                for v in &mut x.data[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    *v = (*v - mu) * is;
                }
            }
        }
        let mut y = x.clone();
        for b in 0..n {
            for ch in 0..c {
                let (g, be) = (self.gamma[ch], self.beta[ch]);
                for v in &mut y.data[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    *v = *v * g + be;
                }
            }
        }
        if ctx.mode == Mode::Train {
            self.cache = Some((x, inv_std));
        }
        y
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without forward");
        let [n, c, h, w] = grad.shape;
        let hw = h * w;
        let m = (n * hw) as f64;
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for (&g, &xh) in grad.data[range.clone()].iter().zip(&xhat.data[range]) {
                    let g = g.to_f64_lossy();
                    sum_dy += g;
                    sum_dy_xhat += g * xh.to_f64_lossy();
                }
            }
            self.grad_gamma[ch] += T::of(sum_dy_xhat);
            self.grad_beta[ch] += T::of(sum_dy);
            let scale = self.gamma[ch].to_f64_lossy() * inv_std[ch] / m;
            let (a, b0, b1) = (T::of(scale * m), T::of(scale * sum_dy), T::of(scale * sum_dy_xhat));
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for (g, &xh) in grad.data[range.clone()].iter_mut().zip(&xhat.data[range]) {
                    *g = a * *g - b0 - xh * b1;
                }
            }
        }
        grad
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        v.param(&mut self.gamma, &mut self.grad_gamma);
        v.param(&mut self.beta, &mut self.grad_beta);
        v.buffer(&mut self.running_mean);
        v.buffer(&mut self.running_var);
    }

    fn finish_calibration(&mut self) {
        if self.calib_batches == 0 {
            return;
        }
        let k = self.calib_batches as f64;
        for ch in 0..self.gamma.len() {
            self.running_mean[ch] = T::of(self.calib_mean[ch] / k);
            self.running_var[ch] = T::of(self.calib_var[ch] / k);
        }
        self.calib_mean.iter_mut().for_each(|v| *v = 0.0);
        self.calib_var.iter_mut().for_each(|v| *v = 0.0);
        self.calib_batches = 0;
    }
}

pub struct LeakyRelu<T> {
    slope: T,
    input: Option<Tensor<T>>,
}

impl<T: Real> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        Self {
            slope: T::of(slope),
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for LeakyRelu<T> {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let mut y = x.clone();
        let s = self.slope;
        y.data.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = *v * s
            }
        });
        if ctx.mode == Mode::Train {
            self.input = Some(x);
        }
        y
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("leaky relu backward without forward");
        let s = self.slope;
        grad.data.iter_mut().zip(&x.data).for_each(|(g, &v)| {
            if v < T::zero() {
                *g = *g * s
            }
        });
        grad
    }
}

/// 2x2 max pooling, stride 2.
pub struct MaxPool2<T> {
    argmax: Vec<u32>,
    in_shape: [usize; 4],
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> MaxPool2<T> {
    pub fn new() -> Self {
        Self {
            argmax: Vec::new(),
            in_shape: [0; 4],
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Real> Default for MaxPool2<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Layer<T> for MaxPool2<T> {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let train = ctx.mode == Mode::Train;
        if train {
            self.argmax = vec![0; n * c * oh * ow];
            self.in_shape = x.shape;
        }
        for p in 0..n * c {
            let plane = &x.data[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if plane[cand] > plane[best] {
                            best = cand;
                        }
                    }
                    let o = p * oh * ow + oy * ow + ox;
                    y.data[o] = plane[best];
                    if train {
                        self.argmax[o] = best as u32;
                    }
                }
            }
        }
        y
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = self.in_shape;
        let per_out = grad.plane();
        let mut dx = Tensor::zeros(self.in_shape);
        for p in 0..n * c {
            for o in 0..per_out {
                let idx = p * per_out + o;
                dx.data[p * h * w + self.argmax[idx] as usize] += grad.data[idx];
            }
        }
        dx
    }
}

pub struct Dropout<T> {
    p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }
}

impl<T: Real> Layer<T> for Dropout<T> {
    fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        if ctx.mode != Mode::Train || self.p == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let scale = T::of(1.0 / keep);
        let mask: Vec<T> = (0..x.data.len())
            .map(|_| if ctx.rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        x.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
        self.mask = Some(mask);
        x
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        if let Some(mask) = self.mask.take() {
            grad.data.iter_mut().zip(&mask).for_each(|(g, &m)| *g = *g * m);
        }
        grad
    }
}

/// Nearest-neighbour 2x upsampling.
pub struct Upsample2;

impl<T: Real> Layer<T> for Upsample2 {
    fn forward(&mut self, x: Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for p in 0..n * c {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            let dst = &mut y.data[p * 4 * h * w..(p + 1) * 4 * h * w];
            for yy in 0..2 * h {
                for xx in 0..2 * w {
                    dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
                }
            }
        }
        y
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let [n, c, h2, w2] = grad.shape;
        let (h, w) = (h2 / 2, w2 / 2);
        let mut dx = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            let src = &grad.data[p * h2 * w2..(p + 1) * h2 * w2];
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for yy in 0..h2 {
                for xx in 0..w2 {
                    dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
                }
            }
        }
        dx
    }
}

pub struct GlobalAvgPool {
    in_shape: [usize; 4],
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { in_shape: [0; 4] }
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        self.in_shape = x.shape;
        let hw = h * w;
        let inv = 1.0 / hw as f64;
        let data = (0..n * c)
            .map(|p| T::of(x.data[p * hw..(p + 1) * hw].iter().map(|v| v.to_f64_lossy()).sum::<f64>() * inv))
            .collect();
        Tensor::from_vec([n, c, 1, 1], data)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = self.in_shape;
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let mut dx = Tensor::zeros(self.in_shape);
        for p in 0..n * c {
            let g = grad.data[p] * inv;
            dx.data[p * hw..(p + 1) * hw].fill(g);
        }
        dx
    }
}

/// Fully connected layer over the flattened per-sample input.
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    weight: Vec<T>,
    bias: Vec<T>,
    grad_w: Vec<T>,
    grad_b: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let sd = (1.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * sd)
            })
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![T::zero(); outputs],
            grad_w: vec![T::zero(); inputs * outputs],
            grad_b: vec![T::zero(); outputs],
            input: None,
        }
    }

    pub fn parameter_count(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }

    pub fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(x.per_sample(), self.inputs, "dense input width");
        let mut y = vec![T::zero(); n * self.outputs];
        for b in 0..n {
            y[b * self.outputs..(b + 1) * self.outputs].copy_from_slice(&self.bias);
        }
        gemm(n, self.inputs, self.outputs, &x.data, false, &self.weight, true, &mut y, true);
        if ctx.mode == Mode::Train {
            self.input = Some(x);
        }
        Tensor::from_vec([n, self.outputs, 1, 1], y)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("dense backward without forward");
        let n = x.batch();
        gemm(self.outputs, n, self.inputs, &grad.data, true, &x.data, false, &mut self.grad_w, true);
        for b in 0..n {
            for o in 0..self.outputs {
                self.grad_b[o] += grad.data[b * self.outputs + o];
            }
        }
        let mut dx = vec![T::zero(); n * self.inputs];
        gemm(n, self.outputs, self.inputs, &grad.data, false, &self.weight, false, &mut dx, false);
        Tensor::from_vec(x.shape, dx)
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        v.param(&mut self.weight, &mut self.grad_w);
        v.param(&mut self.bias, &mut self.grad_b);
    }
}

/// Output stage: `leaky_relu(shift + scale * z)`. `shift` and `scale` are
/// fixed buffers that put the raw dense output on the target's scale.
pub struct OutputHead<T> {
    pub shift: T,
    pub scale: T,
    slope: T,
    pre: Option<Vec<T>>,
}

impl<T: Real> OutputHead<T> {
    pub fn new(slope: f64) -> Self {
        Self {
            shift: T::zero(),
            scale: T::one(),
            slope: T::of(slope),
            pre: None,
        }
    }
}

impl<T: Real> Layer<T> for OutputHead<T> {
    fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let pre: Vec<T> = x.data.iter().map(|&z| self.shift + self.scale * z).collect();
        for (y, &p) in x.data.iter_mut().zip(&pre) {
            *y = if p < T::zero() { p * self.slope } else { p };
        }
        if ctx.mode == Mode::Train {
            self.pre = Some(pre);
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        let pre = self.pre.take().expect("head backward without forward");
        for (g, &p) in grad.data.iter_mut().zip(&pre) {
            let d = if p < T::zero() { self.slope } else { T::one() };
            *g = *g * d * self.scale;
        }
        grad
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        let mut buf = [self.shift, self.scale];
        v.buffer(&mut buf);
        self.shift = buf[0];
        self.scale = buf[1];
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        for l in &mut self.layers {
            x = l.forward(x, ctx);
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        for l in self.layers.iter_mut().rev() {
            grad = l.backward(grad);
        }
        grad
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        for l in &mut self.layers {
            l.visit(v);
        }
    }

    fn finish_calibration(&mut self) {
        for l in &mut self.layers {
            l.finish_calibration();
        }
    }
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam<T> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, layer: &mut dyn FnMut(&mut dyn Visitor<T>)) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut visitor = AdamVisitor {
            opt: self,
            index: 0,
            lr_t: 0.0,
        };
        visitor.lr_t = visitor.opt.lr * bc2.sqrt() / bc1;
        layer(&mut visitor);
    }
}

struct AdamVisitor<'a, T> {
    opt: &'a mut Adam<T>,
    index: usize,
    lr_t: f64,
}

impl<T: Real> Visitor<T> for AdamVisitor<'_, T> {
    fn param(&mut self, value: &mut [T], grad: &mut [T]) {
        if self.opt.m.len() <= self.index {
            self.opt.m.push(vec![T::zero(); value.len()]);
            self.opt.v.push(vec![T::zero(); value.len()]);
        }
        let (b1, b2) = (T::of(self.opt.beta1), T::of(self.opt.beta2));
        let (one, lr_t, eps) = (T::one(), T::of(self.lr_t), T::of(self.opt.eps));
        let m = &mut self.opt.m[self.index];
        let v = &mut self.opt.v[self.index];
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            value[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
        }
        self.index += 1;
    }
}

/// Zeroes every gradient.
pub struct ZeroGrad;

impl<T: Real> Visitor<T> for ZeroGrad {
    fn param(&mut self, _value: &mut [T], grad: &mut [T]) {
        grad.fill(T::zero());
    }
}

/// Counts trainable scalars.
#[derive(Default)]
pub struct CountParams(pub usize);

impl<T: Real> Visitor<T> for CountParams {
    fn param(&mut self, value: &mut [T], _grad: &mut [T]) {
        self.0 += value.len();
    }
}

/// Copies out parameters and buffers (or just parameters) in visit order.
#[derive(Default)]
pub struct Snapshot<T> {
    pub params: Vec<T>,
    pub grads: Vec<T>,
    pub buffers: Vec<T>,
}

impl<T: Real> Visitor<T> for Snapshot<T> {
    fn param(&mut self, value: &mut [T], grad: &mut [T]) {
        self.params.extend_from_slice(value);
        self.grads.extend_from_slice(grad);
    }

    fn buffer(&mut self, value: &mut [T]) {
        self.buffers.extend_from_slice(value);
    }
}

/// Writes parameters and buffers back in visit order.
pub struct Restore<'a, T> {
    pub params: &'a [T],
    pub buffers: &'a [T],
    pub p_at: usize,
    pub b_at: usize,
}

impl<'a, T: Real> Restore<'a, T> {
    pub fn new(params: &'a [T], buffers: &'a [T]) -> Self {
        Self {
            params,
            buffers,
            p_at: 0,
            b_at: 0,
        }
    }

    pub fn complete(&self) -> bool {
        self.p_at == self.params.len() && self.b_at == self.buffers.len()
    }
}

impl<T: Real> Visitor<T> for Restore<'_, T> {
    fn param(&mut self, value: &mut [T], _grad: &mut [T]) {
        let end = (self.p_at + value.len()).min(self.params.len());
        let src = &self.params[self.p_at..end];
        value[..src.len()].copy_from_slice(src);
        self.p_at += value.len();
    }

    fn buffer(&mut self, value: &mut [T]) {
        let end = (self.b_at + value.len()).min(self.buffers.len());
        let src = &self.buffers[self.b_at..end];
        value[..src.len()].copy_from_slice(src);
        self.b_at += value.len();
    }
}
