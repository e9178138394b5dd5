//! Loss registry, single-member training loop, and the averaged ensemble.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    augment_in_place, normalize_in_place, read_json, write_json, AugmentOp, NormStats, Sample, CHANNELS, PATCH_SIZE,
};
use crate::error::{Error, Result};
use crate::models::{build_model, CheckpointMeta, ModelConfig, RegressionModel};
use crate::nn::{Adam, Ctx, Mode, Tensor, ZeroGrad};

/// A pointwise regression loss averaged over the batch.
pub trait Loss: Send + Sync {
    fn name(&self) -> &'static str;

    /// Value and derivative with respect to the prediction for one pair.
    fn point(&self, pred: f64, target: f64) -> (f64, f64);

    fn needs_nonzero_target(&self) -> bool {
        false
    }
}

pub struct Mae;
pub struct Mape;
pub struct Mse;
pub struct Huber {
    pub delta: f64,
}

impl Loss for Mae {
    fn name(&self) -> &'static str {
        "MAE"
    }

    fn point(&self, p: f64, y: f64) -> (f64, f64) {
        let e = p - y;
        (e.abs(), sign(e))
    }
}

impl Loss for Mape {
    fn name(&self) -> &'static str {
        "MAPE"
    }

    fn point(&self, p: f64, y: f64) -> (f64, f64) {
        let e = p - y;
        (100.0 * e.abs() / y.abs(), 100.0 * sign(e) / y.abs())
    }

    fn needs_nonzero_target(&self) -> bool {
        true
    }
}

impl Loss for Mse {
    fn name(&self) -> &'static str {
        "MSE"
    }

    fn point(&self, p: f64, y: f64) -> (f64, f64) {
        let e = p - y;
        (e * e, 2.0 * e)
    }
}

impl Loss for Huber {
    fn name(&self) -> &'static str {
        "HUBER"
    }

    fn point(&self, p: f64, y: f64) -> (f64, f64) {
        let e = p - y;
        let d = self.delta;
        if e.abs() <= d {
            (0.5 * e * e, e)
        } else {
            (d * (e.abs() - 0.5 * d), d * sign(e))
        }
    }
}

fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Losses selectable by name.
pub struct LossRegistry {
    entries: Vec<Box<dyn Loss>>,
}

impl LossRegistry {
    pub fn builtin(huber_delta: f64) -> Self {
        Self {
            entries: vec![Box::new(Mae), Box::new(Mape), Box::new(Mse), Box::new(Huber { delta: huber_delta })],
        }
    }

    pub fn register(&mut self, loss: Box<dyn Loss>) {
        self.entries.retain(|e| e.name() != loss.name());
        self.entries.push(loss);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Loss> {
        self.entries
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "loss".into(),
                name: name.into(),
            })
    }
}

fn check_pairs(loss: &dyn Loss, preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::LengthError(preds.len(), targets.len()));
    }
    if loss.needs_nonzero_target() {
        if let Some(i) = targets.iter().position(|&y| y == 0.0) {
            return Err(Error::ZeroTargetMape(i));
        }
    }
    Ok(())
}

pub fn loss_value(loss: &dyn Loss, preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pairs(loss, preds, targets)?;
    let sum: f64 = preds.iter().zip(targets).map(|(&p, &y)| loss.point(p, y).0).sum();
    Ok(sum / preds.len() as f64)
}

/// Mean loss and its gradient with respect to each prediction.
pub fn loss_and_grad(loss: &dyn Loss, preds: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pairs(loss, preds, targets)?;
    let n = preds.len() as f64;
    let mut sum = 0.0;
    let grad = preds
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let (v, d) = loss.point(p, y);
            sum += v;
            d / n
        })
        .collect();
    Ok((sum / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub losses: Vec<String>,
    pub huber_delta_mt: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub augment: bool,
    /// Training samples used to re-estimate batch-norm statistics.
    pub calibration_samples: usize,
    /// Members trained concurrently; 0 uses the available cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            losses: ["MAE", "MAPE", "MSE", "HUBER"].map(String::from).to_vec(),
            huber_delta_mt: 1.0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_patience: 5,
            seed: 0,
            augment: true,
            calibration_samples: 128,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.losses.is_empty() {
            return bad("at least one loss is required".into());
        }
        let registry = LossRegistry::builtin(self.huber_delta_mt);
        let mut seen = HashSet::new();
        for l in &self.losses {
            registry.get(l)?;
            if !seen.insert(l.to_ascii_uppercase()) {
                return bad(format!("duplicate loss {l}"));
            }
        }
        if !(self.huber_delta_mt > 0.0 && self.huber_delta_mt.is_finite()) {
            return bad(format!("huber_delta_mt {} must be positive", self.huber_delta_mt));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} invalid", self.learning_rate));
        }
        Ok(())
    }

    pub fn registry(&self) -> LossRegistry {
        LossRegistry::builtin(self.huber_delta_mt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mae: f64,
}

pub struct TrainedMember {
    pub loss: String,
    pub model: RegressionModel<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub seed: u64,
}

impl TrainedMember {
    pub fn best_valid_mae(&self) -> f64 {
        self.history[self.best_epoch].valid_mae
    }
}

const EVAL_BATCH: usize = 32;

/// Builds a normalized `(B, 4, 64, 64)` batch, optionally augmenting each
/// sample in physical units first.
fn make_batch(samples: &[&Sample], stats: &NormStats, ops: Option<&[Option<AugmentOp>]>) -> Tensor<f32> {
    let per = CHANNELS * PATCH_SIZE * PATCH_SIZE;
    let mut data = Vec::with_capacity(samples.len() * per);
    for (i, s) in samples.iter().enumerate() {
        let start = data.len();
        data.extend_from_slice(&s.features);
        let slot = &mut data[start..];
        if let Some(Some(op)) = ops.map(|o| o[i]) {
            augment_in_place(slot, PATCH_SIZE, op);
        }
        normalize_in_place(slot, PATCH_SIZE, stats);
    }
    Tensor::from_vec([samples.len(), CHANNELS, PATCH_SIZE, PATCH_SIZE], data)
}

fn check_patch(s: &Sample) -> Result<()> {
    if s.size != PATCH_SIZE || s.features.len() != CHANNELS * PATCH_SIZE * PATCH_SIZE {
        return Err(Error::SchemaError(format!(
            "sample {} is {}x{} with {} values; models take {PATCH_SIZE}x{PATCH_SIZE}",
            s.id,
            s.size,
            s.size,
            s.features.len()
        )));
    }
    Ok(())
}

/// Inference over physical-unit samples.
pub fn predict_samples(model: &mut RegressionModel<f32>, samples: &[Sample], stats: &NormStats) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        chunk.iter().try_for_each(check_patch)?;
        let refs: Vec<&Sample> = chunk.iter().collect();
        out.extend(model.forward(&make_batch(&refs, stats, None))?);
    }
    Ok(out)
}

fn mean_abs_error(preds: &[f64], targets: &[f64]) -> f64 {
    preds.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / preds.len() as f64
}

/// Trains one model on `loss_id`, seeded by `train_config.seed`, and returns
/// the checkpoint with the lowest validation MAE (the untrained model
/// included).
pub fn train_member(
    model_config: &ModelConfig,
    train: &[Sample],
    valid: &[Sample],
    loss_id: &str,
    train_config: &TrainConfig,
    stats: &NormStats,
) -> Result<TrainedMember> {
    train_config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_ids: HashSet<&str> = train.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = valid.iter().find(|s| train_ids.contains(s.id.as_str())) {
        return Err(Error::InvalidInput(format!("sample {} is in both train and valid", s.id)));
    }
    train.iter().chain(valid).try_for_each(check_patch)?;
    let registry = train_config.registry();
    let loss = registry.get(loss_id)?;
    let targets: Vec<f64> = train.iter().map(|s| s.target_mt_per_yr).collect();
    let valid_targets: Vec<f64> = valid.iter().map(|s| s.target_mt_per_yr).collect();
    check_pairs(loss, &targets, &targets)?;

    let seed = train_config.seed;
    let mut model = build_model::<f32>(model_config, seed)?;
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sd = (targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    model.set_output_affine(mean, if sd > 1e-6 { sd } else { 1.0 });

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5);
    let mut calib_idx: Vec<usize> = (0..train.len()).collect();
    calib_idx.shuffle(&mut rng);
    calib_idx.truncate(train_config.calibration_samples.max(1));
    calib_idx.sort_unstable();
    let calib: Vec<&Sample> = calib_idx.iter().map(|&i| &train[i]).collect();
    let calibrate = |model: &mut RegressionModel<f32>| {
        let bs = train_config.batch_size;
        model.calibrate(calib.chunks(bs).map(|c| make_batch(c, stats, None)));
    };

    let evaluate = |model: &mut RegressionModel<f32>, epoch: usize| -> Result<f64> {
        let preds = predict_samples(model, valid, stats)?;
        let mae = mean_abs_error(&preds, &valid_targets);
        if !mae.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mae });
        }
        Ok(mae)
    };

    calibrate(&mut model);
    let train_preds = predict_samples(&mut model, train, stats)?;
    let train0 = loss_value(loss, &train_preds, &targets)?;
    let valid0 = evaluate(&mut model, 0)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: train0,
        valid_mae: valid0,
    }];
    let mut best = (valid0, 0usize, model.state());
    let mut stale = 0usize;
    let mut adam = Adam::<f32>::new(train_config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let mut ctx = Ctx::new(Mode::Train, rng.random());
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let ops: Option<Vec<Option<AugmentOp>>> = train_config
                .augment
                .then(|| batch.iter().map(|_| AugmentOp::random(&mut rng)).collect());
            let x = make_batch(&batch, stats, ops.as_deref());
            let y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();

            model.visit(&mut ZeroGrad);
            let out = model.forward_train(x, &mut ctx);
            let preds: Vec<f64> = out.data.iter().map(|&v| v as f64).collect();
            let (value, grad) = loss_and_grad(loss, &preds, &y)?;
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: value });
            }
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
            model.backward(Tensor::from_vec(out.shape, grad.iter().map(|&g| g as f32).collect()));
            adam.step(&mut |v| model.visit(v));
        }
        calibrate(&mut model);
        let valid_mae = evaluate(&mut model, epoch)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            valid_mae,
        });
        log::debug!("{} epoch {epoch}: train {:.4} valid MAE {valid_mae:.4}", loss.name(), loss_sum / seen as f64);
        if valid_mae < best.0 {
            best = (valid_mae, epoch, model.state());
            stale = 0;
        } else {
            stale += 1;
            if train_config.early_stop_patience > 0 && stale >= train_config.early_stop_patience {
                break;
            }
        }
    }
    model.set_state(&best.2)?;
    Ok(TrainedMember {
        loss: loss.name().to_string(),
        model,
        history,
        best_epoch: best.1,
        seed,
    })
}

/// Trains one member per configured loss. Member `i` uses seed `seed + i`.
pub fn train_ensemble(
    model_config: &ModelConfig,
    train: &[Sample],
    valid: &[Sample],
    train_config: &TrainConfig,
    stats: &NormStats,
) -> Result<Vec<TrainedMember>> {
    train_config.validate()?;
    let jobs: Vec<(String, TrainConfig)> = train_config
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let cfg = TrainConfig {
                seed: train_config.seed.wrapping_add(i as u64),
                ..train_config.clone()
            };
            (l.clone(), cfg)
        })
        .collect();
    let threads = match train_config.threads {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        t => t,
    }
    .min(jobs.len())
    .max(1);
    let run = |(loss, cfg): &(String, TrainConfig)| train_member(model_config, train, valid, loss, cfg, stats);
    if threads == 1 {
        return jobs.iter().map(run).collect();
    }
    let mut results: Vec<Option<Result<TrainedMember>>> = (0..jobs.len()).map(|_| None).collect();
    for (batch, slots) in jobs.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = batch.iter().map(|job| s.spawn(|| run(job))).collect();
            for (h, slot) in handles.into_iter().zip(slots.iter_mut()) {
                *slot = Some(h.join().expect("training thread panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Per-sample mean over member prediction vectors.
pub fn average_predictions(member_preds: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = member_preds.first().ok_or(Error::EmptyEnsemble)?;
    let n = first.len();
    if let Some(p) = member_preds.iter().find(|p| p.len() != n) {
        return Err(Error::LengthError(n, p.len()));
    }
    let k = member_preds.len() as f64;
    Ok((0..n).map(|i| member_preds.iter().map(|p| p[i]).sum::<f64>() / k).collect())
}

pub struct EnsembleModel {
    pub members: Vec<(String, RegressionModel<f32>)>,
    pub normstats: NormStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMemberEntry {
    pub loss: String,
    pub path: PathBuf,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_valid_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub arch: String,
    pub config: ModelConfig,
    pub normstats: NormStats,
    pub members: Vec<EnsembleMemberEntry>,
}

impl EnsembleModel {
    pub fn member_predictions(&mut self, samples: &[Sample]) -> Result<Vec<(String, Vec<f64>)>> {
        if self.members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let stats = self.normstats.clone();
        self.members
            .iter_mut()
            .map(|(name, m)| Ok((name.clone(), predict_samples(m, samples, &stats)?)))
            .collect()
    }

    /// Loads `ensemble.json` and every member checkpoint it lists.
    pub fn load(dir: &Path) -> Result<(Self, EnsembleManifest)> {
        let manifest: EnsembleManifest = read_json(&dir.join("ensemble.json"))?;
        let mut members = Vec::with_capacity(manifest.members.len());
        for m in &manifest.members {
            let (model, _) = RegressionModel::<f32>::load(&dir.join(&m.path))?;
            members.push((m.loss.clone(), model));
        }
        Ok((
            Self {
                members,
                normstats: manifest.normstats.clone(),
            },
            manifest,
        ))
    }
}

pub fn ensemble_predict(ensemble: &mut EnsembleModel, samples: &[Sample]) -> Result<Vec<f64>> {
    let preds: Vec<Vec<f64>> = ensemble.member_predictions(samples)?.into_iter().map(|(_, p)| p).collect();
    average_predictions(&preds)
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::format(path, e))).collect()
}

/// Writes member checkpoints, histories and `ensemble.json` under `dir`.
pub fn save_ensemble(
    dir: &Path,
    model_config: &ModelConfig,
    members: &mut [TrainedMember],
    stats: &NormStats,
    train_config: &TrainConfig,
) -> Result<EnsembleManifest> {
    let mut entries = Vec::with_capacity(members.len());
    let mut rows = Vec::new();
    for m in members.iter_mut() {
        let rel = PathBuf::from("members").join(&m.loss);
        let mdir = dir.join(&rel);
        let meta = CheckpointMeta {
            arch: model_config.arch.clone(),
            config: model_config.clone(),
            parameter_count: m.model.parameter_count(),
            train_seed: m.seed,
            normstats: "normstats.json".into(),
            loss: Some(m.loss.clone()),
            training: Some(serde_json::json!({
                "optimizer": "adam",
                "beta1": 0.9,
                "beta2": 0.999,
                "learning_rate": train_config.learning_rate,
                "batch_size": train_config.batch_size,
                "epochs": train_config.epochs,
                "early_stop_patience": train_config.early_stop_patience,
                "huber_delta_mt": train_config.huber_delta_mt,
                "augment": train_config.augment,
                "best_epoch": m.best_epoch,
            })),
        };
        m.model.save(&mdir, &meta)?;
        write_history(&mdir.join("history.csv"), &m.history)?;
        for r in &m.history {
            rows.push((m.loss.clone(), *r));
        }
        entries.push(EnsembleMemberEntry {
            loss: m.loss.clone(),
            path: rel,
            seed: m.seed,
            best_epoch: m.best_epoch,
            best_valid_mae: m.best_valid_mae(),
        });
    }
    let path = dir.join("history.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
    w.write_record(["member", "epoch", "train_loss", "valid_mae"]).map_err(|e| Error::format(&path, e))?;
    for (loss, r) in rows {
        w.write_record([loss, r.epoch.to_string(), r.train_loss.to_string(), r.valid_mae.to_string()])
            .map_err(|e| Error::format(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    stats.save(&dir.join("normstats.json"))?;
    let manifest = EnsembleManifest {
        arch: model_config.arch.clone(),
        config: model_config.clone(),
        normstats: stats.clone(),
        members: entries,
    };
    write_json(&dir.join("ensemble.json"), &manifest)?;
    Ok(manifest)
}
