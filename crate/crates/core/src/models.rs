//! CNN baseline and U-Net regressor behind one [`Network`] trait, selected
//! by name through an [`ArchRegistry`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, read_json, CHANNELS, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, split_channels, BatchNorm2d, Conv3x3, CountParams, Ctx, Dense, Dropout, GlobalAvgPool, Layer,
    LeakyRelu, MaxPool2, Mode, OutputHead, Real, Restore, Sequential, Snapshot, Tensor, Upsample2, Visitor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadKind {
    FlattenDense,
    GlobalAvgPoolDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Registered architecture name, e.g. `cnn` or `unet`.
    pub arch: String,
    pub base_channels: usize,
    pub depth: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// `None` picks the architecture's own head.
    pub head: Option<HeadKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::unet()
    }
}

impl ModelConfig {
    pub fn cnn() -> Self {
        Self {
            arch: "cnn".into(),
            base_channels: 32,
            depth: 4,
            dropout: 0.3,
            leaky_slope: 0.1,
            head: None,
        }
    }

    pub fn unet() -> Self {
        Self {
            arch: "unet".into(),
            dropout: 0.2,
            ..Self::cnn()
        }
    }

    pub fn arch_key(&self) -> String {
        self.arch.to_ascii_lowercase().replace(['-', '_'], "")
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.depth == 0 || self.depth > 6 || PATCH_SIZE % (1 << self.depth) != 0 {
            return bad(format!("depth {} does not divide the {PATCH_SIZE}-pixel patch", self.depth));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return bad(format!("leaky_slope {} must be finite and nonnegative", self.leaky_slope));
        }
        Ok(())
    }
}

/// One recorded activation from an instrumented forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub label: String,
    pub shape: [usize; 4],
    pub checksum: f64,
}

impl TraceEntry {
    fn of<T: Real>(label: String, t: &Tensor<T>) -> Self {
        Self {
            label,
            shape: t.shape,
            checksum: t.checksum(),
        }
    }
}

/// A differentiable network mapping `(B, 4, 64, 64)` to `(B, 1, 1, 1)`.
pub trait Network<T: Real>: Send {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T>;
    /// Backpropagates `d loss / d output`, accumulating parameter gradients.
    fn backward(&mut self, grad: Tensor<T>);
    fn visit(&mut self, v: &mut dyn Visitor<T>);
    fn finish_calibration(&mut self);
    fn head(&mut self) -> &mut OutputHead<T>;
    fn final_dense(&mut self) -> &mut Dense<T>;
    fn set_tracing(&mut self, on: bool);
    fn trace(&self) -> &[TraceEntry];
}

struct Readout<T> {
    pool: Option<GlobalAvgPool>,
    dense: Dense<T>,
    head: OutputHead<T>,
}

impl<T: Real> Readout<T> {
    fn new(kind: HeadKind, channels: usize, spatial: usize, slope: f64, rng: &mut ChaCha8Rng) -> Self {
        let (pool, inputs) = match kind {
            HeadKind::FlattenDense => (None, channels * spatial * spatial),
            HeadKind::GlobalAvgPoolDense => (Some(GlobalAvgPool::new()), channels),
        };
        Self {
            pool,
            dense: Dense::new(inputs, 1, rng),
            head: OutputHead::new(slope),
        }
    }

    fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        if let Some(p) = &mut self.pool {
            x = p.forward(x, ctx);
        }
        let z = self.dense.forward(x, ctx);
        self.head.forward(z, ctx)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let g = self.head.backward(grad);
        let g = self.dense.backward(g);
        match &mut self.pool {
            Some(p) => p.backward(g),
            None => g,
        }
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        self.dense.visit(v);
        self.head.visit(v);
    }
}

fn conv_bn_act<T: Real>(seq: &mut Sequential<T>, cin: usize, cout: usize, slope: f64, rng: &mut ChaCha8Rng) {
    seq.push(Conv3x3::new(cin, cout, false, slope, rng));
    seq.push(BatchNorm2d::new(cout));
    seq.push(LeakyRelu::new(slope));
}

fn double_conv<T: Real>(cin: usize, cout: usize, slope: f64, rng: &mut ChaCha8Rng) -> Sequential<T> {
    let mut seq = Sequential::new();
    conv_bn_act(&mut seq, cin, cout, slope, rng);
    conv_bn_act(&mut seq, cout, cout, slope, rng);
    seq
}

pub struct Cnn<T> {
    features: Sequential<T>,
    readout: Readout<T>,
    tracing: bool,
    trace: Vec<TraceEntry>,
}

impl<T: Real> Cnn<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut features = Sequential::new();
        let mut cin = CHANNELS;
        for level in 0..cfg.depth {
            let w = cfg.width(level);
            conv_bn_act(&mut features, cin, w, cfg.leaky_slope, rng);
            features.push(MaxPool2::new());
            features.push(Dropout::new(cfg.dropout));
            cin = w;
        }
        let spatial = PATCH_SIZE >> cfg.depth;
        let head = cfg.head.unwrap_or(HeadKind::FlattenDense);
        Self {
            features,
            readout: Readout::new(head, cin, spatial, cfg.leaky_slope, rng),
            tracing: false,
            trace: Vec::new(),
        }
    }
}

impl<T: Real> Network<T> for Cnn<T> {
    fn forward(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        self.trace.clear();
        let f = self.features.forward(x, ctx);
        if self.tracing {
            self.trace.push(TraceEntry::of("pre_flatten".into(), &f));
        }
        self.readout.forward(f, ctx)
    }

    fn backward(&mut self, grad: Tensor<T>) {
        let g = self.readout.backward(grad);
        self.features.backward(g);
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        self.features.visit(v);
        self.readout.visit(v);
    }

    fn finish_calibration(&mut self) {
        self.features.finish_calibration();
    }

    fn head(&mut self) -> &mut OutputHead<T> {
        &mut self.readout.head
    }

    fn final_dense(&mut self) -> &mut Dense<T> {
        &mut self.readout.dense
    }

    fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }
}

struct EncoderLevel<T> {
    convs: Sequential<T>,
    dropout: Dropout<T>,
    pool: MaxPool2<T>,
}

struct DecoderLevel<T> {
    up: Upsample2,
    up_conv: Conv3x3<T>,
    convs: Sequential<T>,
    up_channels: usize,
}

pub struct UNet<T> {
    encoder: Vec<EncoderLevel<T>>,
    bottleneck: Sequential<T>,
    /// Indexed by level; level 0 is full resolution.
    decoder: Vec<DecoderLevel<T>>,
    readout: Readout<T>,
    tracing: bool,
    trace: Vec<TraceEntry>,
}

impl<T: Real> UNet<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let slope = cfg.leaky_slope;
        let mut encoder = Vec::new();
        let mut cin = CHANNELS;
        for level in 0..cfg.depth {
            let w = cfg.width(level);
            encoder.push(EncoderLevel {
                convs: double_conv(cin, w, slope, rng),
                dropout: Dropout::new(cfg.dropout),
                pool: MaxPool2::new(),
            });
            cin = w;
        }
        let bottleneck = double_conv(cin, cfg.width(cfg.depth), slope, rng);
        let mut decoder: Vec<DecoderLevel<T>> = (0..cfg.depth)
            .rev()
            .map(|level| {
                let below = cfg.width(level + 1);
                let w = cfg.width(level);
                DecoderLevel {
                    up: Upsample2,
                    up_conv: Conv3x3::new(below, below, true, slope, rng),
                    convs: double_conv(below + w, w, slope, rng),
                    up_channels: below,
                }
            })
            .collect();
        decoder.reverse();
        let head = cfg.head.unwrap_or(HeadKind::GlobalAvgPoolDense);
        Self {
            encoder,
            bottleneck,
            decoder,
            readout: Readout::new(head, cfg.width(0), PATCH_SIZE, slope, rng),
            tracing: false,
            trace: Vec::new(),
        }
    }
}

impl<T: Real> Network<T> for UNet<T> {
    fn forward(&mut self, mut x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        self.trace.clear();
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (level, enc) in self.encoder.iter_mut().enumerate() {
            let s = enc.convs.forward(x, ctx);
            if self.tracing {
                self.trace.push(TraceEntry::of(format!("enc{level}.skip"), &s));
            }
            x = enc.pool.forward(enc.dropout.forward(s.clone(), ctx), ctx);
            skips.push(s);
        }
        x = self.bottleneck.forward(x, ctx);
        for level in (0..self.decoder.len()).rev() {
            let dec = &mut self.decoder[level];
            let u = dec.up_conv.forward(Layer::<T>::forward(&mut dec.up, x, ctx), ctx);
            let skip = skips.pop().expect("one skip per level");
            let c = concat_channels(&u, &skip);
            if self.tracing {
                let (_, consumed) = split_channels(&c, dec.up_channels);
                self.trace.push(TraceEntry::of(format!("dec{level}.skip_in"), &consumed));
                self.trace.push(TraceEntry::of(format!("dec{level}.concat"), &c));
            }
            x = dec.convs.forward(c, ctx);
            if self.tracing {
                self.trace.push(TraceEntry::of(format!("dec{level}.out"), &x));
            }
        }
        self.readout.forward(x, ctx)
    }

    fn backward(&mut self, grad: Tensor<T>) {
        let mut g = self.readout.backward(grad);
        let mut skip_grads = Vec::with_capacity(self.decoder.len());
        for dec in self.decoder.iter_mut() {
            let gc = dec.convs.backward(g);
            let (gu, gs) = split_channels(&gc, dec.up_channels);
            skip_grads.push(gs);
            g = Layer::<T>::backward(&mut dec.up, dec.up_conv.backward(gu));
        }
        g = self.bottleneck.backward(g);
        for (enc, gs) in self.encoder.iter_mut().zip(skip_grads).rev() {
            let mut gl = enc.dropout.backward(enc.pool.backward(g));
            gl.data.iter_mut().zip(&gs.data).for_each(|(a, &b)| *a += b);
            g = enc.convs.backward(gl);
        }
    }

    fn visit(&mut self, v: &mut dyn Visitor<T>) {
        for enc in &mut self.encoder {
            enc.convs.visit(v);
        }
        self.bottleneck.visit(v);
        for dec in &mut self.decoder {
            dec.up_conv.visit(v);
            dec.convs.visit(v);
        }
        self.readout.visit(v);
    }

    fn finish_calibration(&mut self) {
        for enc in &mut self.encoder {
            enc.convs.finish_calibration();
        }
        self.bottleneck.finish_calibration();
        for dec in &mut self.decoder {
            dec.convs.finish_calibration();
        }
    }

    fn head(&mut self) -> &mut OutputHead<T> {
        &mut self.readout.head
    }

    fn final_dense(&mut self) -> &mut Dense<T> {
        &mut self.readout.dense
    }

    fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }
}

pub type Builder<T> = fn(&ModelConfig, &mut ChaCha8Rng) -> Box<dyn Network<T>>;

pub struct ArchEntry<T> {
    pub name: &'static str,
    /// Display name used in reports.
    pub label: &'static str,
    pub builder: Builder<T>,
}

/// Architectures selectable by name at runtime.
pub struct ArchRegistry<T> {
    entries: Vec<ArchEntry<T>>,
}

impl<T: Real> ArchRegistry<T> {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("cnn", "CNN", |c, rng| Box::new(Cnn::new(c, rng)));
        r.register("unet", "U-Net", |c, rng| Box::new(UNet::new(c, rng)));
        r
    }

    pub fn register(&mut self, name: &'static str, label: &'static str, builder: Builder<T>) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(ArchEntry { name, label, builder });
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn get(&self, name: &str) -> Result<&ArchEntry<T>> {
        let key = name.to_ascii_lowercase().replace(['-', '_'], "");
        self.entries.iter().find(|e| e.name == key).ok_or_else(|| Error::UnknownName {
            kind: "architecture".into(),
            name: name.into(),
        })
    }

    pub fn build(&self, config: &ModelConfig, seed: u64) -> Result<RegressionModel<T>> {
        config.validate()?;
        let entry = self.get(&config.arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = (entry.builder)(config, &mut rng);
        let mut count = CountParams::default();
        net.visit(&mut count);
        Ok(RegressionModel {
            net,
            config: config.clone(),
            label: entry.label.to_string(),
            parameter_count: count.0,
            init_seed: seed,
        })
    }
}

pub fn arch_label(name: &str) -> String {
    ArchRegistry::<f32>::builtin()
        .get(name)
        .map(|e| e.label.to_string())
        .unwrap_or_else(|_| name.to_string())
}

pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<RegressionModel<T>> {
    ArchRegistry::builtin().build(config, seed)
}

pub fn build_cnn<T: Real>(config: &ModelConfig, seed: u64) -> Result<RegressionModel<T>> {
    if config.arch_key() != "cnn" {
        return Err(Error::ConfigError(format!("build_cnn called with arch {}", config.arch)));
    }
    build_model(config, seed)
}

pub fn build_unet<T: Real>(config: &ModelConfig, seed: u64) -> Result<RegressionModel<T>> {
    if config.arch_key() != "unet" {
        return Err(Error::ConfigError(format!("build_unet called with arch {}", config.arch)));
    }
    build_model(config, seed)
}

/// A network plus its configuration.
pub struct RegressionModel<T: Real = f32> {
    net: Box<dyn Network<T>>,
    config: ModelConfig,
    label: String,
    parameter_count: usize,
    init_seed: u64,
}

/// Flat copy of all parameters and buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub params: Vec<T>,
    pub buffers: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: String,
    pub config: ModelConfig,
    pub parameter_count: usize,
    pub train_seed: u64,
    pub normstats: String,
    #[serde(default)]
    pub loss: Option<String>,
    #[serde(default)]
    pub training: Option<serde_json::Value>,
}

const MAGIC: &[u8; 4] = b"P2RM";

impl<T: Real> RegressionModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_count
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn network(&mut self) -> &mut dyn Network<T> {
        self.net.as_mut()
    }

    pub fn set_output_affine(&mut self, shift: f64, scale: f64) {
        let head = self.net.head();
        head.shift = T::of(shift);
        head.scale = T::of(scale);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape;
        if c != CHANNELS || h != PATCH_SIZE || w != PATCH_SIZE {
            return Err(Error::InvalidInput(format!(
                "expected (B, {CHANNELS}, {PATCH_SIZE}, {PATCH_SIZE}), got {:?}",
                x.shape
            )));
        }
        if let Some(i) = x.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite input at flat index {i}")));
        }
        Ok(())
    }

    /// Inference: dropout off, running batch-norm statistics.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let y = self.net.forward(x.clone(), &mut Ctx::eval());
        Ok(y.data.iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Training-mode forward pass; caches activations for [`Self::backward`].
    pub fn forward_train(&mut self, x: Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        self.net.forward(x, ctx)
    }

    pub fn backward(&mut self, grad: Tensor<T>) {
        self.net.backward(grad);
    }

    pub fn visit(&mut self, v: &mut dyn Visitor<T>) {
        self.net.visit(v);
    }

    /// Replaces running batch-norm statistics with the average batch
    /// statistics of `batches`.
    pub fn calibrate<'a>(&mut self, batches: impl IntoIterator<Item = Tensor<T>>) {
        let mut ctx = Ctx::new(Mode::Calibrate, 0);
        for b in batches {
            self.net.forward(b, &mut ctx);
        }
        self.net.finish_calibration();
    }

    pub fn state(&mut self) -> ModelState<T> {
        let mut s = Snapshot::default();
        self.net.visit(&mut s);
        ModelState {
            params: s.params,
            buffers: s.buffers,
        }
    }

    pub fn set_state(&mut self, state: &ModelState<T>) -> Result<()> {
        let mut r = Restore::new(&state.params, &state.buffers);
        self.net.visit(&mut r);
        if !r.complete() {
            return Err(Error::SchemaError(format!(
                "state has {} params / {} buffers, model expects {} / {}",
                state.params.len(),
                state.buffers.len(),
                r.p_at,
                r.b_at
            )));
        }
        Ok(())
    }

    /// Writes `model.bin` and `model.json` into `dir`.
    pub fn save(&mut self, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state = self.state();
        let mut bytes = Vec::with_capacity(12 + 4 * (state.params.len() + state.buffers.len()));
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(state.params.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&(state.buffers.len() as u32).to_le_bytes());
        for v in state.params.iter().chain(&state.buffers) {
            v.to_le(&mut bytes);
        }
        let bin = dir.join("model.bin");
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        write_json(&dir.join("model.json"), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let meta: CheckpointMeta = read_json(&dir.join("model.json"))?;
        let mut model = build_model::<T>(&meta.config, meta.train_seed)?;
        let bin = dir.join("model.bin");
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::format(&bin, "not a model checkpoint"));
        }
        let np = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let nb = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() != 12 + 4 * (np + nb) {
            return Err(Error::format(&bin, "truncated checkpoint"));
        }
        let vals: Vec<T> = bytes[12..].chunks_exact(4).map(|c| T::from_le(c.try_into().unwrap())).collect();
        let state = ModelState {
            params: vals[..np].to_vec(),
            buffers: vals[np..].to_vec(),
        };
        model.set_state(&state).map_err(|e| Error::format(&bin, e))?;
        Ok((model, meta))
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

struct Nudge {
    target: usize,
    delta: f64,
    at: usize,
}

impl Visitor<f64> for Nudge {
    fn param(&mut self, value: &mut [f64], _grad: &mut [f64]) {
        if (self.at..self.at + value.len()).contains(&self.target) {
            value[self.target - self.at] += self.delta;
        }
        self.at += value.len();
    }
}

/// Checks every parameter gradient of the MSE loss on one batch against
/// central differences with step `h`. A parameter passes when the two agree
/// within `rel_tol` relative to the larger magnitude, or both are below
/// `abs_floor`. Dropout masks are held fixed by reseeding each pass.
pub fn finite_difference_check(
    model: &mut RegressionModel<f64>,
    x: &Tensor<f64>,
    targets: &[f64],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheck {
    const MASK_SEED: u64 = 11;
    let n = targets.len() as f64;
    let loss_at = |m: &mut RegressionModel<f64>| -> f64 {
        let out = m.forward_train(x.clone(), &mut Ctx::new(Mode::Train, MASK_SEED));
        out.data.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n
    };
    model.visit(&mut crate::nn::ZeroGrad);
    let out = model.forward_train(x.clone(), &mut Ctx::new(Mode::Train, MASK_SEED));
    let grad: Vec<f64> = out.data.iter().zip(targets).map(|(p, y)| 2.0 * (p - y) / n).collect();
    model.backward(Tensor::from_vec(out.shape, grad));
    let mut snap = Snapshot::default();
    model.visit(&mut snap);

    let mut report = GradCheck {
        checked: 0,
        passed: 0,
        worst_rel: 0.0,
    };
    for (i, &analytic) in snap.grads.iter().enumerate() {
        let shift = |m: &mut RegressionModel<f64>, d: f64| m.visit(&mut Nudge { target: i, delta: d, at: 0 });
        shift(model, h);
        let up = loss_at(model);
        shift(model, -2.0 * h);
        let down = loss_at(model);
        shift(model, h);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { (analytic - numeric).abs() / scale } else { 0.0 };
        report.checked += 1;
        if scale < abs_floor || rel <= rel_tol {
            report.passed += 1;
        } else {
            report.worst_rel = report.worst_rel.max(rel);
        }
    }
    // drop cached activations from the last probe
    model.visit(&mut crate::nn::ZeroGrad);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch<T: Real>(b: usize, seed: u64) -> Tensor<T> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * CHANNELS * PATCH_SIZE * PATCH_SIZE;
        Tensor::from_vec([b, CHANNELS, PATCH_SIZE, PATCH_SIZE], (0..n).map(|_| T::of(rng.random::<f64>())).collect())
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::cnn().validate().is_ok());
        let mut c = ModelConfig::unet();
        c.depth = 0;
        assert!(matches!(c.validate(), Err(Error::ConfigError(_))));
        c.depth = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::cnn();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::cnn();
        c.arch = "resnet".into();
        assert!(matches!(build_model::<f32>(&c, 0), Err(Error::UnknownName { .. })));
        assert!(build_cnn::<f32>(&ModelConfig::unet(), 0).is_err());
    }

    #[test]
    fn cnn_pre_flatten_shape() {
        let mut m = build_cnn::<f32>(&ModelConfig::cnn(), 1).unwrap();
        m.network().set_tracing(true);
        let out = m.forward(&batch(2, 0)).unwrap();
        assert_eq!(out.len(), 2);
        let t = &m.network().trace()[0];
        assert_eq!(t.label, "pre_flatten");
        assert_eq!(t.shape, [2, 256, 4, 4]);
    }

    #[test]
    fn unet_channel_arithmetic_and_skips() {
        let mut m = build_unet::<f32>(&ModelConfig::unet(), 1).unwrap();
        m.network().set_tracing(true);
        let out = m.forward(&batch(1, 3)).unwrap();
        assert_eq!(out.len(), 1);
        let trace = m.network().trace().to_vec();
        let find = |l: &str| trace.iter().find(|e| e.label == l).unwrap().clone();
        assert_eq!(find("dec0.concat").shape, [1, 96, 64, 64]);
        assert_eq!(find("dec0.out").shape, [1, 32, 64, 64]);
        for level in 0..4 {
            let enc = find(&format!("enc{level}.skip"));
            let dec = find(&format!("dec{level}.skip_in"));
            assert_eq!(enc, TraceEntry { label: enc.label.clone(), ..dec });
            assert_eq!(enc.shape[2], 64 >> level);
        }
    }

    #[test]
    fn zero_dense_gives_leaky_bias() {
        for cfg in [ModelConfig::cnn(), ModelConfig::unet()] {
            let mut cfg = cfg;
            cfg.base_channels = 4;
            cfg.depth = 2;
            let mut m = build_model::<f64>(&cfg, 5).unwrap();
            for b in [1.7, -2.0] {
                let d = m.network().final_dense();
                d.weight_mut().fill(0.0);
                d.bias_mut()[0] = b;
                let out = m.forward(&batch(3, 1)).unwrap();
                let expect = if b < 0.0 { 0.1 * b } else { b };
                assert!(out.iter().all(|&v| (v - expect).abs() < 1e-12), "{out:?}");
            }
        }
    }

    #[test]
    fn deterministic_build_and_inference() {
        let mut cfg = ModelConfig::unet();
        cfg.base_channels = 4;
        cfg.depth = 2;
        let mut a = build_model::<f32>(&cfg, 9).unwrap();
        let mut b = build_model::<f32>(&cfg, 9).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        let x = batch(2, 4);
        let ya = a.forward(&x).unwrap();
        assert_eq!(ya, b.forward(&x).unwrap());
        assert_eq!(ya, a.forward(&x).unwrap());
        assert!(a.state().params.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut cfg = ModelConfig::cnn();
        cfg.base_channels = 2;
        cfg.depth = 1;
        let mut m = build_model::<f32>(&cfg, 0).unwrap();
        let mut x = batch(1, 0);
        x.data[17] = f32::NAN;
        assert!(matches!(m.forward(&x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::unet();
        cfg.base_channels = 2;
        cfg.depth = 2;
        let mut m = build_model::<f32>(&cfg, 3).unwrap();
        m.set_output_affine(12.0, 7.0);
        m.calibrate([batch(4, 8)]);
        let meta = CheckpointMeta {
            arch: cfg.arch.clone(),
            config: cfg.clone(),
            parameter_count: m.parameter_count(),
            train_seed: 3,
            normstats: "normstats.json".into(),
            loss: Some("MAE".into()),
            training: None,
        };
        m.save(dir.path(), &meta).unwrap();
        let (mut back, meta2) = RegressionModel::<f32>::load(dir.path()).unwrap();
        assert_eq!(meta, meta2);
        let x = batch(2, 2);
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }
}
