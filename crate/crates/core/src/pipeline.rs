//! Pipeline stages over a data root:
//!
//! ```text
//! simulated/samples/          cmd_simulate
//! raw/                        synthetic region inputs (optional)
//! satellite/samples/          cmd_ingest
//! dataset/                    cmd_build_dataset (samples, manifest, normstats, histogram)
//! models/<arch>/              cmd_train (members/<loss>/, ensemble.json, history.csv)
//! eval/                       cmd_evaluate (metrics.json, table.txt, predictions.csv, scatter.*)
//! ```
//!
//! Each stage builds its output in a temporary sibling directory and renames
//! it into place, so a failed stage leaves no partial output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvalSubset, RunConfig};
use crate::dataset::{
    dataset_histogram, fit_norm_stats, load_samples, merge_datasets, read_json, save_sample,
    stratified_redistribution, write_json, NormStats, Sample, SampleSource, Split, SplitManifest,
};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, plot_predictions, render_table, MetricsReport};
use crate::grid::{extract_patch, ChannelId, GeoPoint, GridField, GridSpec};
use crate::ingest::{
    disaggregate_annual, fill_xco2_map, preprocess_no2, preprocess_wind, read_catalog, read_proxies, write_catalog,
    write_proxies,
};
use crate::models::arch_label;
use crate::plume_sim::{simulate_scene, synthesize_region, PlumeScenario};
use crate::training::{average_predictions, save_ensemble, train_ensemble, EnsembleModel};

pub const LOCK_FILE: &str = ".plume2rate.lock";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn simulated(&self) -> PathBuf {
        self.root.join("simulated")
    }

    pub fn raw(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn satellite(&self) -> PathBuf {
        self.root.join("satellite")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, arch: &str) -> PathBuf {
        self.models().join(arch)
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// Advisory lock held for the duration of a command.
pub struct DataRootLock {
    path: PathBuf,
}

impl DataRootLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DataRootLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Runs `build` against a fresh temporary directory and renames it to
/// `target` on success; on failure the temporary directory is removed.
pub fn write_atomically<T>(target: &Path, build: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let parent = target.parent().ok_or_else(|| Error::InvalidInput(format!("{} has no parent", target.display())))?;
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("stage");
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    match build(&tmp) {
        Ok(v) => {
            if target.exists() {
                fs::remove_dir_all(target).map_err(|e| Error::io(target, e))?;
            }
            fs::rename(&tmp, target).map_err(|e| Error::io(target, e))?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn prepare(cfg: &RunConfig) -> Result<(Layout, DataRootLock)> {
    cfg.validate()?;
    let root = cfg.data_root()?;
    let lock = DataRootLock::acquire(root)?;
    Ok((Layout::new(root), lock))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub count: usize,
    pub q_min: f64,
    pub q_max: f64,
}

/// Draws the next scene's scenario, grid and source location.
pub fn scene_plan(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> (PlumeScenario, GridSpec, GeoPoint) {
    let s = &cfg.simulate;
    let q = rng.random_range(s.q_range.0..=s.q_range.1);
    let speed = rng.random_range(s.wind_speed_range.0..=s.wind_speed_range.1);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let j = s.source_jitter_cells as i64;
    let (dr, dc) = (rng.random_range(-j..=j), rng.random_range(-j..=j));
    let noise_seed: u64 = rng.random();
    let scenario = PlumeScenario {
        q_mt_per_yr: q,
        wind_u_ms: speed * theta.cos(),
        wind_v_ms: speed * theta.sin(),
        seed: noise_seed,
        ..s.scenario.clone()
    };
    let grid = GridSpec::new(s.grid_size, s.grid_size, s.cell_size_km);
    let centre = (s.grid_size / 2) as i64;
    let src = grid.cell_center((centre + dr) as usize, (centre + dc) as usize);
    (scenario, grid, src)
}

/// Generates `simulate.count` scenes into `simulated/samples/`.
pub fn simulate_into(cfg: &RunConfig, layout: &Layout) -> Result<SimulateSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    write_atomically(&layout.simulated(), |tmp| {
        let dir = tmp.join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..cfg.simulate.count {
            let (scenario, grid, src) = scene_plan(cfg, &mut rng);
            let mut sample = simulate_scene(&scenario, &grid, src)?;
            sample.id = format!("sim_{i:06}");
            sample.plant_id = format!("sim-{i:06}");
            lo = lo.min(sample.target_mt_per_yr);
            hi = hi.max(sample.target_mt_per_yr);
            save_sample(&dir, &sample)?;
        }
        let summary = SimulateSummary {
            count: cfg.simulate.count,
            q_min: if cfg.simulate.count > 0 { lo } else { 0.0 },
            q_max: if cfg.simulate.count > 0 { hi } else { 0.0 },
        };
        write_json(&tmp.join("summary.json"), &summary)?;
        Ok(summary)
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let (layout, _lock) = prepare(cfg)?;
    let s = simulate_into(cfg, &layout)?;
    log::info!("simulated {} scenes, q in [{:.2}, {:.2}] Mt/yr", s.count, s.q_min, s.q_max);
    Ok(s)
}

const RAW_CHANNELS: [ChannelId; 4] = [ChannelId::Xco2, ChannelId::No2, ChannelId::WindU, ChannelId::WindV];

/// Writes a synthetic region (catalog, proxies, daily raw fields) to `raw/`.
pub fn write_synthetic_raw(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let region = synthesize_region(&cfg.ingest.region, cfg.seed.wrapping_add(1))?;
    write_atomically(&layout.raw(), |tmp| {
        write_catalog(&tmp.join("plants.csv"), &region.plants)?;
        write_proxies(&tmp.join("proxies.csv"), &region.proxies)?;
        for day in &region.days {
            let dir = tmp.join("fields").join(day.date.to_string());
            let fields = [&day.xco2_soundings, &day.no2_raw, &day.wind_u, &day.wind_v];
            for (f, ch) in fields.iter().zip(RAW_CHANNELS) {
                f.save(&dir, ch.file_stem())?;
            }
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub samples: usize,
    pub skipped_edge: usize,
    pub skipped_no_proxy: usize,
    pub degenerate_plants: Vec<String>,
}

fn list_days(fields_dir: &Path) -> Result<Vec<(NaiveDate, PathBuf)>> {
    let mut days = Vec::new();
    for entry in fs::read_dir(fields_dir).map_err(|e| Error::io(fields_dir, e))? {
        let path = entry.map_err(|e| Error::io(fields_dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Ok(date) = NaiveDate::parse_from_str(name, "%Y-%m-%d") {
            days.push((date, path));
        }
    }
    days.sort();
    Ok(days)
}

/// Turns `raw/` into per-(plant, day) satellite samples.
pub fn ingest_into(cfg: &RunConfig, layout: &Layout) -> Result<IngestSummary> {
    let raw = layout.raw();
    let plants = read_catalog(&raw.join("plants.csv"))?;
    let proxies = read_proxies(&raw.join("proxies.csv"))?;
    let days = list_days(&raw.join("fields"))?;
    let mut summary = IngestSummary::default();

    let mut rates: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for p in &plants {
        let series = proxies.get(&p.plant_id).map(Vec::as_slice).unwrap_or(&[]);
        match disaggregate_annual(p, series) {
            Ok(r) => {
                rates.insert(p.plant_id.clone(), r.into_iter().collect());
            }
            Err(e @ (Error::DegenerateProxy(_) | Error::InvalidProxy { .. })) => {
                log::warn!("plant {}: {e}; no samples", p.plant_id);
                summary.degenerate_plants.push(p.plant_id.clone());
            }
            Err(e) => return Err(e),
        }
    }

    let size = cfg.ingest.patch_size;
    write_atomically(&layout.satellite(), |tmp| {
        let dir = tmp.join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (date, day_dir) in &days {
            let load = |ch: ChannelId| GridField::load(&day_dir.join(format!("{}.json", ch.file_stem())));
            let soundings = load(ChannelId::Xco2)?;
            let no2 = preprocess_no2(&load(ChannelId::No2)?)?;
            let (u, v) = preprocess_wind(&load(ChannelId::WindU)?, &load(ChannelId::WindV)?)?;
            for f in [&no2, &u, &v] {
                if !f.same_geometry(&soundings) {
                    return Err(Error::GridMismatch(format!(
                        "{date}: preprocessed {:?} grid differs from the XCO2 grid",
                        f.channel
                    )));
                }
            }
            let xco2 = fill_xco2_map(&soundings, &[&no2, &u, &v], cfg.ingest.knn_k)?;
            for p in &plants {
                let Some(plant_rates) = rates.get(&p.plant_id) else { continue };
                let Some(&rate) = plant_rates.get(date) else {
                    summary.skipped_no_proxy += 1;
                    continue;
                };
                let mut features = Vec::with_capacity(4 * size * size);
                let mut edge = false;
                for f in [&xco2, &no2, &u, &v] {
                    match extract_patch(f, p.location, size) {
                        Ok(patch) => features.extend(patch.values.iter().map(|&x| x as f32)),
                        Err(Error::PatchOutOfBounds { .. }) => {
                            edge = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if edge {
                    log::warn!("plant {} on {date}: patch leaves the grid; skipped", p.plant_id);
                    summary.skipped_edge += 1;
                    continue;
                }
                let sample = Sample {
                    id: format!("sat_{}_{}", p.plant_id, date.format("%Y%m%d")),
                    features,
                    size,
                    target_mt_per_yr: rate,
                    plant_id: p.plant_id.clone(),
                    date: *date,
                    source: SampleSource::Satellite,
                    cell_size_km: xco2.cell_size_km(),
                };
                save_sample(&dir, &sample)?;
                summary.samples += 1;
            }
        }
        write_json(&tmp.join("summary.json"), &summary)?;
        Ok(summary.clone())
    })
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let (layout, _lock) = prepare(cfg)?;
    run_ingest(cfg, &layout)
}

fn run_ingest(cfg: &RunConfig, layout: &Layout) -> Result<IngestSummary> {
    if cfg.ingest.synthesize_raw {
        write_synthetic_raw(cfg, layout)?;
    }
    let s = ingest_into(cfg, layout)?;
    log::info!(
        "ingested {} satellite samples ({} skipped at grid edge, {} without proxy, {} degenerate plants)",
        s.samples,
        s.skipped_edge,
        s.skipped_no_proxy,
        s.degenerate_plants.len()
    );
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub split_sizes: [usize; 3],
    pub histogram: String,
}

fn load_source(dir: &Path) -> Result<Vec<Sample>> {
    let samples = dir.join("samples");
    if samples.is_dir() {
        load_samples(&samples)
    } else {
        Ok(Vec::new())
    }
}

pub fn build_dataset_into(cfg: &RunConfig, layout: &Layout) -> Result<DatasetSummary> {
    let sim = load_source(&layout.simulated())?;
    let sat = load_source(&layout.satellite())?;
    let merged = merge_datasets(sim, sat)?;
    let d = &cfg.dataset;
    let manifest = stratified_redistribution(&merged, &d.bin_edges, d.ratios, cfg.seed)?;
    let train: Vec<Sample> = merged
        .iter()
        .filter(|s| manifest.assignments.get(&s.id) == Some(&Split::Train))
        .cloned()
        .collect();
    let stats = fit_norm_stats(&train)?;
    let hist = dataset_histogram(&merged, &manifest, &d.bin_edges);
    let rendered = hist.render();
    write_atomically(&layout.dataset(), |tmp| {
        let dir = tmp.join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in &merged {
            save_sample(&dir, s)?;
        }
        manifest.save(&tmp.join("manifest.json"))?;
        stats.save(&tmp.join("normstats.json"))?;
        let h = tmp.join("histogram.txt");
        fs::write(&h, &rendered).map_err(|e| Error::io(&h, e))?;
        Ok(())
    })?;
    Ok(DatasetSummary {
        total: merged.len(),
        split_sizes: Split::ALL.map(|s| hist.split_total(s)),
        histogram: rendered,
    })
}

pub fn cmd_build_dataset(cfg: &RunConfig) -> Result<DatasetSummary> {
    let (layout, _lock) = prepare(cfg)?;
    run_build(cfg, &layout)
}

fn run_build(cfg: &RunConfig, layout: &Layout) -> Result<DatasetSummary> {
    let s = build_dataset_into(cfg, layout)?;
    log::info!("dataset: {} samples, split sizes {:?}\n{}", s.total, s.split_sizes, s.histogram);
    Ok(s)
}

/// Samples, manifest and normalization statistics of a built dataset.
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub manifest: SplitManifest,
    pub stats: NormStats,
}

impl LoadedDataset {
    pub fn load(layout: &Layout) -> Result<Self> {
        let dir = layout.dataset();
        let manifest = SplitManifest::load(&dir.join("manifest.json"))?;
        let stats = NormStats::load(&dir.join("normstats.json"))?;
        let samples = load_samples(&dir.join("samples"))?;
        if let Some(s) = samples.iter().find(|s| !manifest.assignments.contains_key(&s.id)) {
            return Err(Error::SchemaError(format!("sample {} missing from manifest", s.id)));
        }
        Ok(Self {
            samples,
            manifest,
            stats,
        })
    }

    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| self.manifest.assignments.get(&s.id) == Some(&split))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub arch: String,
    pub loss: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_valid_mae: f64,
    pub best_valid_mae: f64,
}

pub fn train_into(cfg: &RunConfig, layout: &Layout) -> Result<Vec<MemberSummary>> {
    let data = LoadedDataset::load(layout)?;
    let train = data.split(Split::Train);
    let valid = data.split(Split::Valid);
    let tc = cfg.train.train_config(cfg.seed);
    let mut out = Vec::new();
    for arch in &cfg.train.archs {
        let mc = cfg.train.model_config(arch);
        let key = mc.arch.clone();
        let started = std::time::Instant::now();
        let mut members = train_ensemble(&mc, &train, &valid, &tc, &data.stats)?;
        log::info!("{} ensemble trained in {:.1}s", arch_label(&key), started.elapsed().as_secs_f64());
        write_atomically(&layout.model(&key), |tmp| save_ensemble(tmp, &mc, &mut members, &data.stats, &tc))?;
        for m in &members {
            log::info!(
                "{} {}: best epoch {} valid MAE {:.3} (epoch 0: {:.3})",
                arch_label(&key),
                m.loss,
                m.best_epoch,
                m.best_valid_mae(),
                m.history[0].valid_mae
            );
            out.push(MemberSummary {
                arch: key.clone(),
                loss: m.loss.clone(),
                seed: m.seed,
                epochs_run: m.history.len() - 1,
                best_epoch: m.best_epoch,
                initial_valid_mae: m.history[0].valid_mae,
                best_valid_mae: m.best_valid_mae(),
            });
        }
    }
    write_json(&layout.models().join("summary.json"), &out)?;
    Ok(out)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<MemberSummary>> {
    let (layout, _lock) = prepare(cfg)?;
    train_into(cfg, &layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub reports: Vec<MetricsReport>,
    pub table: String,
}

fn subset(test: &[Sample], which: EvalSubset) -> Vec<usize> {
    (0..test.len())
        .filter(|&i| match which {
            EvalSubset::Simulated => test[i].source == SampleSource::Simulated,
            EvalSubset::Satellite => test[i].source == SampleSource::Satellite,
            EvalSubset::Combined => true,
        })
        .collect()
}

pub fn evaluate_into(cfg: &RunConfig, layout: &Layout) -> Result<EvaluationOutput> {
    let data = LoadedDataset::load(layout)?;
    let test = data.split(Split::Test);
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let y: Vec<f64> = test.iter().map(|s| s.target_mt_per_yr).collect();
    let archs = cfg.eval_archs();

    // per arch: member predictions and ensemble mean over the full test split
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut ensembles: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for arch in &archs {
        let dir = layout.model(arch);
        if !dir.join("ensemble.json").exists() {
            return Err(Error::io(
                dir.join("ensemble.json"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing checkpoint; run train first"),
            ));
        }
        let (mut ens, _) = EnsembleModel::load(&dir)?;
        let members = ens.member_predictions(&test)?;
        let mean = average_predictions(&members.iter().map(|(_, p)| p.clone()).collect::<Vec<_>>())?;
        for (loss, p) in members {
            columns.push((format!("{arch}_{loss}"), p));
        }
        columns.push((format!("{arch}_ensemble"), mean.clone()));
        ensembles.insert(arch.clone(), mean);
    }

    let mut reports = Vec::new();
    for &which in &cfg.evaluate.datasets {
        let idx = subset(&test, which);
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        for arch in &archs {
            let preds: Vec<f64> = idx.iter().map(|&i| ensembles[arch][i]).collect();
            match compute_metrics(&preds, &ys) {
                Ok(r) => reports.push(r.labeled(which.label(), &arch_label(arch))),
                Err(e @ (Error::InvalidInput(_) | Error::DegenerateR2)) => {
                    log::warn!("{} test subset skipped ({} samples): {e}", which.label(), idx.len());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let table = render_table(&reports);

    let scatter_arch = cfg.evaluate.scatter_arch.to_ascii_lowercase().replace(['-', '_'], "");
    let scatter_preds = ensembles
        .get(&scatter_arch)
        .or_else(|| ensembles.values().next())
        .cloned()
        .unwrap_or_default();

    write_atomically(&layout.eval(), |tmp| {
        write_json(&tmp.join("metrics.json"), &reports)?;
        let t = tmp.join("table.txt");
        fs::write(&t, &table).map_err(|e| Error::io(&t, e))?;
        let p = tmp.join("predictions.csv");
        let mut w = csv::Writer::from_path(&p).map_err(|e| Error::format(&p, e))?;
        let mut header = vec!["sample_id".to_string(), "source".to_string(), "y".to_string()];
        header.extend(columns.iter().map(|c| c.0.clone()));
        w.write_record(&header).map_err(|e| Error::format(&p, e))?;
        for (i, s) in test.iter().enumerate() {
            let source = match s.source {
                SampleSource::Simulated => "simulated",
                SampleSource::Satellite => "satellite",
            };
            let mut row = vec![s.id.clone(), source.to_string(), y[i].to_string()];
            row.extend(columns.iter().map(|c| c.1[i].to_string()));
            w.write_record(&row).map_err(|e| Error::format(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        plot_predictions(&scatter_preds, &y, &tmp.join("scatter.png"))?;
        Ok(())
    })?;
    Ok(EvaluationOutput { reports, table })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluationOutput> {
    let (layout, _lock) = prepare(cfg)?;
    let out = evaluate_into(cfg, &layout)?;
    log::info!("evaluation written to {}", layout.eval().display());
    Ok(out)
}

/// Re-renders the stored metrics and training summary as text.
pub fn report_text(layout: &Layout) -> Result<String> {
    let reports: Vec<MetricsReport> = read_json(&layout.eval().join("metrics.json"))?;
    let mut out = render_table(&reports);
    let summary = layout.models().join("summary.json");
    if summary.exists() {
        let members: Vec<MemberSummary> = read_json(&summary)?;
        out.push_str("\nEnsemble members (validation MAE, Mt/yr)\n");
        for m in members {
            out.push_str(&format!(
                "{:<6} {:<6} seed {:<4} epochs {:<3} best epoch {:<3} initial {:>8.3} best {:>8.3}\n",
                arch_label(&m.arch),
                m.loss,
                m.seed,
                m.epochs_run,
                m.best_epoch,
                m.initial_valid_mae,
                m.best_valid_mae
            ));
        }
    }
    Ok(out)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let (layout, _lock) = prepare(cfg)?;
    report_text(&layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub simulate: SimulateSummary,
    pub ingest: Option<IngestSummary>,
    pub dataset: DatasetSummary,
    pub members: Vec<MemberSummary>,
    pub reports: Vec<MetricsReport>,
}

/// simulate, (ingest), build-dataset, train, evaluate, under one lock.
pub fn run_all(cfg: &RunConfig) -> Result<RunSummary> {
    let (layout, _lock) = prepare(cfg)?;
    let simulate = simulate_into(cfg, &layout)?;
    log::info!("simulated {} scenes, q in [{:.2}, {:.2}] Mt/yr", simulate.count, simulate.q_min, simulate.q_max);
    let ingest = if cfg.ingest.enabled {
        Some(run_ingest(cfg, &layout)?)
    } else {
        None
    };
    let dataset = run_build(cfg, &layout)?;
    let members = train_into(cfg, &layout)?;
    let eval = evaluate_into(cfg, &layout)?;
    log::info!("\n{}", eval.table);
    Ok(RunSummary {
        simulate,
        ingest,
        dataset,
        members,
        reports: eval.reports,
    })
}
