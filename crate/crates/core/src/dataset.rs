//! Training samples, min-max normalization, geometric augmentation with
//! co-transformed wind vectors, and emission-binned split assignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::sample_bilinear;

pub const CHANNELS: usize = 4;
pub const PATCH_SIZE: usize = 64;
/// Channel indices inside [`Sample::features`].
pub const XCO2: usize = 0;
pub const NO2: usize = 1;
pub const WIND_U: usize = 2;
pub const WIND_V: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SampleSource {
    Simulated,
    Satellite,
}

/// One feature patch (channel-major `[XCO2, NO2, WIND_U, WIND_V]`, each
/// `size`x`size` row-major) with its emission-rate target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f32>,
    pub size: usize,
    pub target_mt_per_yr: f64,
    pub plant_id: String,
    pub date: NaiveDate,
    pub source: SampleSource,
    pub cell_size_km: f64,
}

impl Sample {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.features[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.size * self.size;
        &mut self.features[c * n..(c + 1) * n]
    }

    /// Checks the fixed 4x64x64 schema, finiteness and a positive target.
    pub fn validate(&self) -> Result<()> {
        if self.size != PATCH_SIZE || self.features.len() != CHANNELS * PATCH_SIZE * PATCH_SIZE {
            return Err(Error::SchemaError(format!(
                "sample {} has size {} with {} values, expected {CHANNELS}x{PATCH_SIZE}x{PATCH_SIZE}",
                self.id,
                self.size,
                self.features.len()
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::SchemaError(format!("sample {} has non-finite features", self.id)));
        }
        if !(self.target_mt_per_yr > 0.0 && self.target_mt_per_yr.is_finite()) {
            return Err(Error::SchemaError(format!(
                "sample {} has non-positive target {}",
                self.id, self.target_mt_per_yr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleMeta {
    target_mt_per_yr: f64,
    plant_id: String,
    date: NaiveDate,
    source: SampleSource,
    cell_size_km: f64,
    #[serde(default = "default_size")]
    size: usize,
}

fn default_size() -> usize {
    PATCH_SIZE
}

pub fn save_sample(dir: &Path, sample: &Sample) -> Result<()> {
    let bin = dir.join(format!("{}.f32", sample.id));
    let mut bytes = Vec::with_capacity(sample.features.len() * 4);
    for v in &sample.features {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let meta = SampleMeta {
        target_mt_per_yr: sample.target_mt_per_yr,
        plant_id: sample.plant_id.clone(),
        date: sample.date,
        source: sample.source,
        cell_size_km: sample.cell_size_km,
        size: sample.size,
    };
    let json = dir.join(format!("{}.json", sample.id));
    fs::write(&json, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&json, e))
}

pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let json = dir.join(format!("{id}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: SampleMeta = serde_json::from_str(&text).map_err(|e| Error::format(&json, e))?;
    let bin = dir.join(format!("{id}.f32"));
    let raw = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = CHANNELS * meta.size * meta.size * 4;
    if raw.len() != expected {
        return Err(Error::format(&bin, format!("expected {expected} bytes, found {}", raw.len())));
    }
    Ok(Sample {
        id: id.to_string(),
        features: raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        size: meta.size,
        target_mt_per_yr: meta.target_mt_per_yr,
        plant_id: meta.plant_id,
        date: meta.date,
        source: meta.source,
        cell_size_km: meta.cell_size_km,
    })
}

/// Loads every sample in `dir`, ordered by id.
pub fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    ids.iter().map(|id| load_sample(dir, id)).collect()
}

/// Per-channel `(min, max)` fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: [(f64, f64); CHANNELS],
}

pub fn fit_norm_stats(train: &[Sample]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut channels = [(f64::INFINITY, f64::NEG_INFINITY); CHANNELS];
    for s in train {
        for (c, range) in channels.iter_mut().enumerate() {
            for &v in s.channel(c) {
                let v = v as f64;
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
        }
    }
    Ok(NormStats { channels })
}

impl NormStats {
    pub fn normalize_value(&self, channel: usize, x: f64) -> f64 {
        let (lo, hi) = self.channels[channel];
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn denormalize_value(&self, channel: usize, x: f64) -> f64 {
        let (lo, hi) = self.channels[channel];
        if hi > lo {
            lo + x * (hi - lo)
        } else {
            lo
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Min-max scales every channel; the target stays in Mt/yr and values
/// outside the fitted range are not clipped.
pub fn normalize(sample: &Sample, stats: &NormStats) -> Sample {
    let mut out = sample.clone();
    normalize_in_place(&mut out.features, out.size, stats);
    out
}

pub(crate) fn normalize_in_place(features: &mut [f32], size: usize, stats: &NormStats) {
    let n = size * size;
    for c in 0..CHANNELS {
        let (lo, hi) = stats.channels[c];
        let span = hi - lo;
        for v in &mut features[c * n..(c + 1) * n] {
            *v = if span > 0.0 { ((*v as f64 - lo) / span) as f32 } else { 0.0 };
        }
    }
}

pub fn denormalize(sample: &Sample, stats: &NormStats) -> Sample {
    let mut out = sample.clone();
    for c in 0..CHANNELS {
        for v in out.channel_mut(c) {
            *v = stats.denormalize_value(c, *v as f64) as f32;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    /// `k` counterclockwise quarter turns, `k` in 1..=3.
    Rot90(u8),
    /// Mirror across the vertical axis (x -> -x).
    FlipH,
    /// Mirror across the horizontal axis (y -> -y).
    FlipV,
    /// Central zoom by a factor in [0.9, 1.1].
    Zoom(f64),
}

pub const ZOOM_RANGE: (f64, f64) = (0.9, 1.1);

impl AugmentOp {
    pub fn validate(self) -> Result<()> {
        match self {
            AugmentOp::Rot90(k) if !(1..=3).contains(&k) => {
                Err(Error::InvalidAugment(format!("rotation count {k} outside 1..=3")))
            }
            AugmentOp::Zoom(s) if !(s >= ZOOM_RANGE.0 && s <= ZOOM_RANGE.1) => {
                Err(Error::InvalidAugment(format!("zoom {s} outside [0.9, 1.1]")))
            }
            _ => Ok(()),
        }
    }

    /// Draws one op, or `None` for the untouched sample.
    pub fn random(rng: &mut impl Rng) -> Option<AugmentOp> {
        match rng.random_range(0..7) {
            0 => None,
            k @ 1..=3 => Some(AugmentOp::Rot90(k as u8)),
            4 => Some(AugmentOp::FlipH),
            5 => Some(AugmentOp::FlipV),
            _ => Some(AugmentOp::Zoom(rng.random_range(ZOOM_RANGE.0..=ZOOM_RANGE.1))),
        }
    }
}

fn rot90_once(plane: &[f32], size: usize) -> Vec<f32> {
    let mut out = vec![0.0; plane.len()];
    for r in 0..size {
        for c in 0..size {
            out[r * size + c] = plane[(size - 1 - c) * size + r];
        }
    }
    out
}

/// Applies `op` to a physical-unit sample. Scalar channels are moved
/// geometrically; the wind channels are additionally rotated or reflected
/// as vectors. The target is never touched.
pub fn augment(sample: &Sample, op: AugmentOp) -> Result<Sample> {
    op.validate()?;
    let mut out = sample.clone();
    augment_in_place(&mut out.features, out.size, op);
    Ok(out)
}

pub(crate) fn augment_in_place(features: &mut [f32], size: usize, op: AugmentOp) {
    let n = size * size;
    match op {
        AugmentOp::Rot90(k) => {
            for _ in 0..k {
                for c in 0..CHANNELS {
                    let turned = rot90_once(&features[c * n..(c + 1) * n], size);
                    features[c * n..(c + 1) * n].copy_from_slice(&turned);
                }
                // (u, v) -> (-v, u)
                let (u, v) = features[WIND_U * n..(WIND_V + 1) * n].split_at_mut(n);
                for (a, b) in u.iter_mut().zip(v.iter_mut()) {
                    let (nu, nv) = (-*b, *a);
                    *a = nu;
                    *b = nv;
                }
            }
        }
        AugmentOp::FlipH => {
            for c in 0..CHANNELS {
                for r in 0..size {
                    features[c * n + r * size..c * n + (r + 1) * size].reverse();
                }
            }
            features[WIND_U * n..(WIND_U + 1) * n].iter_mut().for_each(|u| *u = -*u);
        }
        AugmentOp::FlipV => {
            for c in 0..CHANNELS {
                let plane = &mut features[c * n..(c + 1) * n];
                for r in 0..size / 2 {
                    let (top, bottom) = plane.split_at_mut((size - 1 - r) * size);
                    top[r * size..(r + 1) * size].swap_with_slice(&mut bottom[..size]);
                }
            }
            features[WIND_V * n..(WIND_V + 1) * n].iter_mut().for_each(|v| *v = -*v);
        }
        AugmentOp::Zoom(s) => {
            let center = (size as f64 - 1.0) / 2.0;
            for c in 0..CHANNELS {
                let plane: Vec<f64> = features[c * n..(c + 1) * n].iter().map(|&v| v as f64).collect();
                for r in 0..size {
                    let sr = center + (r as f64 - center) / s;
                    for col in 0..size {
                        let sc = center + (col as f64 - center) / s;
                        features[c * n + r * size + col] = sample_bilinear(&plane, size, size, sr, sc) as f32;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub assignments: BTreeMap<String, Split>,
    pub bin_edges: Vec<f64>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn validate_bins(bin_edges: &[f64], ratios: &[f64; 3]) -> Result<()> {
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::ConfigError(format!(
            "bin edges must be strictly ascending with at least two entries: {bin_edges:?}"
        )));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::ConfigError(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    Ok(())
}

/// Bin of `value`; bins are half-open except the last, which includes its upper edge.
pub fn bin_index(bin_edges: &[f64], value: f64) -> Option<usize> {
    let last = bin_edges.len() - 1;
    if !(value >= bin_edges[0] && value <= bin_edges[last]) {
        return None;
    }
    Some(bin_edges.windows(2).position(|w| value < w[1]).unwrap_or(last - 1))
}

/// Largest-remainder apportionment of `n` items by `ratios`.
pub fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).expect("finite quotas").then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Shuffles each emission bin with a seeded generator and deals it into
/// train/valid/test in the given ratios.
pub fn stratified_redistribution(
    samples: &[Sample],
    bin_edges: &[f64],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitManifest> {
    validate_bins(bin_edges, &ratios)?;
    let mut bins: Vec<Vec<&str>> = vec![Vec::new(); bin_edges.len() - 1];
    let mut unbinned = Vec::new();
    for s in samples {
        match bin_index(bin_edges, s.target_mt_per_yr) {
            Some(b) => bins[b].push(&s.id),
            None => unbinned.push(s.id.clone()),
        }
    }
    if !unbinned.is_empty() {
        return Err(Error::UnbinnedSample(unbinned));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    for ids in &mut bins {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let counts = apportion(ids.len(), &ratios);
        let mut it = ids.iter();
        for (split, count) in Split::ALL.iter().zip(counts) {
            for id in it.by_ref().take(count) {
                assignments.insert(id.to_string(), *split);
            }
        }
    }
    Ok(SplitManifest {
        assignments,
        bin_edges: bin_edges.to_vec(),
        ratios,
        seed,
    })
}

pub fn merge_datasets(simulated: Vec<Sample>, satellite: Vec<Sample>) -> Result<Vec<Sample>> {
    let mut seen = HashSet::new();
    let merged: Vec<Sample> = simulated.into_iter().chain(satellite).collect();
    for s in &merged {
        if s.size != PATCH_SIZE || s.features.len() != CHANNELS * PATCH_SIZE * PATCH_SIZE {
            return Err(Error::SchemaError(format!(
                "sample {} is {}x{s}x{s}, expected {CHANNELS}x{PATCH_SIZE}x{PATCH_SIZE}",
                s.id,
                s.features.len() / (s.size * s.size).max(1),
                s = s.size
            )));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::SchemaError(format!("duplicate sample id {}", s.id)));
        }
    }
    Ok(merged)
}

/// Counts per emission bin and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<[usize; 3]>,
}

impl Histogram {
    pub fn split_total(&self, split: Split) -> usize {
        self.counts.iter().map(|c| c[split.index()]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14}{:>8}{:>8}{:>8}", "bin (Mt/yr)", "train", "valid", "test");
        for (k, c) in self.counts.iter().enumerate() {
            let label = format!("[{}, {}{}", self.bin_edges[k], self.bin_edges[k + 1], if k + 1 == self.counts.len() { "]" } else { ")" });
            let _ = writeln!(out, "{label:<14}{:>8}{:>8}{:>8}", c[0], c[1], c[2]);
        }
        let _ = writeln!(
            out,
            "{:<14}{:>8}{:>8}{:>8}",
            "total",
            self.split_total(Split::Train),
            self.split_total(Split::Valid),
            self.split_total(Split::Test)
        );
        out
    }
}

pub fn dataset_histogram(samples: &[Sample], manifest: &SplitManifest, bin_edges: &[f64]) -> Histogram {
    let bins = bin_edges.len().saturating_sub(1);
    let mut counts = vec![[0usize; 3]; bins];
    for s in samples {
        if let (Some(b), Some(split)) = (bin_index(bin_edges, s.target_mt_per_yr), manifest.assignments.get(&s.id)) {
            counts[b][split.index()] += 1;
        }
    }
    Histogram {
        bin_edges: bin_edges.to_vec(),
        counts,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample_with(id: &str, target: f64, f: impl Fn(usize, usize, usize) -> f32) -> Sample {
        let n = PATCH_SIZE;
        let mut features = Vec::with_capacity(CHANNELS * n * n);
        for c in 0..CHANNELS {
            for r in 0..n {
                for col in 0..n {
                    features.push(f(c, r, col));
                }
            }
        }
        Sample {
            id: id.to_string(),
            features,
            size: n,
            target_mt_per_yr: target,
            plant_id: "P".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            source: SampleSource::Simulated,
            cell_size_km: 2.0,
        }
    }

    fn random_sample(seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f32> = (0..CHANNELS * PATCH_SIZE * PATCH_SIZE).map(|_| rng.random_range(-5.0..5.0)).collect();
        sample_with(&format!("s{seed}"), 3.0, |c, r, col| vals[c * 4096 + r * 64 + col])
    }

    #[test]
    fn stats_constant_and_envelope() {
        let a = sample_with("a", 1.0, |_, _, _| 5.0);
        assert_eq!(fit_norm_stats(&[a]).unwrap().channels[0], (5.0, 5.0));
        let lo = sample_with("lo", 1.0, |_, r, _| if r == 0 { 0.0 } else { 1.0 });
        let hi = sample_with("hi", 1.0, |_, r, _| if r == 0 { -1.0 } else { 2.0 });
        assert_eq!(fit_norm_stats(&[lo, hi]).unwrap().channels[2], (-1.0, 2.0));
        assert!(matches!(fit_norm_stats(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn normalize_formula_and_degenerate() {
        let stats = NormStats {
            channels: [(0.0, 4.0), (2.0, 2.0), (1.0, 3.0), (1.0, 3.0)],
        };
        let s = sample_with("x", 1.0, |c, _, _| match c {
            0 => 1.0,
            1 => 2.0,
            2 => 1.0,
            _ => 3.0,
        });
        let n = normalize(&s, &stats);
        assert!(n.channel(0).iter().all(|&v| v == 0.25));
        assert!(n.channel(1).iter().all(|&v| v == 0.0));
        assert!(n.channel(2).iter().all(|&v| v == 0.0));
        assert!(n.channel(3).iter().all(|&v| v == 1.0));
        assert_eq!(n.target_mt_per_yr, s.target_mt_per_yr);
    }

    #[test]
    fn train_pixels_land_in_unit_interval_and_roundtrip() {
        let train: Vec<Sample> = (0..3).map(random_sample).collect();
        let stats = fit_norm_stats(&train).unwrap();
        for s in &train {
            let n = normalize(s, &stats);
            assert!(n.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let back = denormalize(&n, &stats);
            for (a, b) in back.features.iter().zip(&s.features) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let s = random_sample(1);
        let mut t = s.clone();
        for _ in 0..4 {
            t = augment(&t, AugmentOp::Rot90(1)).unwrap();
        }
        assert_eq!(t, s);
        let t = augment(&augment(&s, AugmentOp::Rot90(3)).unwrap(), AugmentOp::Rot90(1)).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn flips_are_involutions() {
        let s = random_sample(2);
        for op in [AugmentOp::FlipH, AugmentOp::FlipV] {
            let t = augment(&augment(&s, op).unwrap(), op).unwrap();
            assert_eq!(t, s);
        }
    }

    #[test]
    fn uniform_east_wind_turns_north() {
        let s = sample_with("w", 2.0, |c, _, _| match c {
            WIND_U => 1.0,
            WIND_V => 0.0,
            _ => 7.0,
        });
        let t = augment(&s, AugmentOp::Rot90(1)).unwrap();
        assert!(t.channel(WIND_U).iter().all(|&v| v == 0.0));
        assert!(t.channel(WIND_V).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zoom_bounds_and_identity() {
        let s = random_sample(3);
        assert!(matches!(augment(&s, AugmentOp::Zoom(1.2)), Err(Error::InvalidAugment(_))));
        assert!(matches!(augment(&s, AugmentOp::Rot90(4)), Err(Error::InvalidAugment(_))));
        assert_eq!(augment(&s, AugmentOp::Zoom(1.0)).unwrap(), s);
        let z = augment(&s, AugmentOp::Zoom(1.1)).unwrap();
        assert_eq!(z.target_mt_per_yr, s.target_mt_per_yr);
    }

    #[test]
    fn zoom_keeps_uniform_wind() {
        let s = sample_with("w", 2.0, |c, r, _| match c {
            WIND_U => 2.5,
            WIND_V => -1.5,
            _ => r as f32,
        });
        let z = augment(&s, AugmentOp::Zoom(0.93)).unwrap();
        assert!(z.channel(WIND_U).iter().all(|&v| v == 2.5));
        assert!(z.channel(WIND_V).iter().all(|&v| v == -1.5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scalar_multisets_preserved(seed in 0u64..10_000, k in 1u8..=3, flip in 0usize..3) {
            let s = random_sample(seed);
            let op = match flip { 0 => AugmentOp::Rot90(k), 1 => AugmentOp::FlipH, _ => AugmentOp::FlipV };
            let t = augment(&s, op).unwrap();
            for c in [XCO2, NO2] {
                let mut a: Vec<u32> = s.channel(c).iter().map(|v| v.to_bits()).collect();
                let mut b: Vec<u32> = t.channel(c).iter().map(|v| v.to_bits()).collect();
                a.sort_unstable();
                b.sort_unstable();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(t.target_mt_per_yr, s.target_mt_per_yr);
        }
    }

    fn targets(vals: &[f64]) -> Vec<Sample> {
        vals.iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut s = sample_with(&format!("id{i:04}"), t, |_, _, _| 0.0);
                s.features.truncate(0);
                s
            })
            .collect()
    }

    #[test]
    fn ten_in_one_bin() {
        let s = targets(&[5.0; 10]);
        let m = stratified_redistribution(&s, &[0.0, 60.0], [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(m.ids(Split::Train).len(), 8);
        assert_eq!(m.ids(Split::Valid).len(), 1);
        assert_eq!(m.ids(Split::Test).len(), 1);
    }

    #[test]
    fn unbinned_sample_reported() {
        let s = targets(&[5.0, 75.0]);
        match stratified_redistribution(&s, &[0.0, 60.0], [0.8, 0.1, 0.1], 3) {
            Err(Error::UnbinnedSample(ids)) => assert_eq!(ids, vec!["id0001".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn upper_edge_belongs_to_last_bin() {
        assert_eq!(bin_index(&[0.0, 5.0, 60.0], 60.0), Some(1));
        assert_eq!(bin_index(&[0.0, 5.0, 60.0], 5.0), Some(1));
        assert_eq!(bin_index(&[0.0, 5.0, 60.0], 60.5), None);
    }

    proptest! {
        #[test]
        fn redistribution_partitions(vals in prop::collection::vec(0.1f64..59.9, 0..300), seed in 0u64..100) {
            let edges = [0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 60.0];
            let ratios = [0.7, 0.15, 0.15];
            let s = targets(&vals);
            let m = stratified_redistribution(&s, &edges, ratios, seed).unwrap();
            prop_assert_eq!(m.assignments.len(), s.len());
            let h = dataset_histogram(&s, &m, &edges);
            prop_assert_eq!(h.total(), s.len());
            for row in &h.counts {
                let n: usize = row.iter().sum();
                for k in 0..3 {
                    prop_assert!((row[k] as f64 - ratios[k] * n as f64).abs() <= 1.0);
                }
            }
            prop_assert_eq!(stratified_redistribution(&s, &edges, ratios, seed).unwrap(), m);
        }
    }

    #[test]
    fn merge_contract() {
        let a: Vec<Sample> = (0..3).map(random_sample).collect();
        assert_eq!(merge_datasets(a.clone(), vec![]).unwrap(), a);
        let mut b = random_sample(10);
        b.source = SampleSource::Satellite;
        b.cell_size_km = 1.0;
        let m = merge_datasets(a.clone(), vec![b]).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.iter().any(|s| s.source == SampleSource::Simulated));
        assert!(m.iter().any(|s| s.source == SampleSource::Satellite && s.cell_size_km == 1.0));
        let mut bad = random_sample(11);
        bad.features.truncate(100);
        assert!(matches!(merge_datasets(a, vec![bad]), Err(Error::SchemaError(_))));
    }

    #[test]
    fn histogram_cases() {
        let m = SplitManifest {
            assignments: BTreeMap::new(),
            bin_edges: vec![0.0, 10.0, 20.0],
            ratios: [0.7, 0.15, 0.15],
            seed: 0,
        };
        let h = dataset_histogram(&[], &m, &[0.0, 10.0, 20.0]);
        assert_eq!(h.counts, vec![[0; 3]; 2]);

        let s = targets(&[5.0]);
        let mut m = m;
        m.assignments.insert("id0000".into(), Split::Valid);
        let h = dataset_histogram(&s, &m, &[0.0, 10.0, 20.0]);
        assert_eq!(h.counts, vec![[0, 1, 0], [0, 0, 0]]);
    }

    #[test]
    fn sample_disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = random_sample(4);
        save_sample(dir.path(), &s).unwrap();
        assert_eq!(load_samples(dir.path()).unwrap(), vec![s]);
    }
}
