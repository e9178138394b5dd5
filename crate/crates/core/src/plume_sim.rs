//! Synthetic observing-system scenes with known ground-truth flux.
//!
//! A vertically integrated Gaussian plume stands in for a full transport
//! model. Column mass density at downwind distance `x` and crosswind offset
//! `y` is `Q / (sqrt(2 pi) sigma_y(x) U) * exp(-y^2 / (2 sigma_y(x)^2))` with
//! `sigma_y(x) = a * x^b`, converted to a dry-air mole-fraction enhancement.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, SampleSource};
use crate::error::{Error, Result};
use crate::grid::{ChannelId, GeoPoint, GridField, GridSpec};
use crate::ingest::{DailyProxy, PlantRecord};

/// Molar mass of CO2, kg/mol.
pub const M_CO2: f64 = 0.044;
/// Standard surface pressure, Pa.
pub const SURFACE_PRESSURE: f64 = 101_325.0;
/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.80665;
/// Molar mass of dry air, kg/mol.
pub const M_AIR: f64 = 0.028964;
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;
/// Largest emission rate a scenario may carry, Mt/yr.
pub const MAX_RATE_MT: f64 = 60.0;
pub const MIN_WIND_SPEED: f64 = 0.5;

/// Dry-air column, mol/m^2.
pub fn dry_air_column() -> f64 {
    SURFACE_PRESSURE / (GRAVITY * M_AIR)
}

pub fn mt_per_yr_to_kg_per_s(q: f64) -> f64 {
    q * 1e9 / SECONDS_PER_YEAR
}

/// CO2 column mass density (kg/m^2) to XCO2 enhancement (ppm).
pub fn kg_per_m2_to_ppm(v: f64) -> f64 {
    v / M_CO2 / dry_air_column() * 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlumeScenario {
    pub q_mt_per_yr: f64,
    pub wind_u_ms: f64,
    pub wind_v_ms: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub background_xco2_ppm: f64,
    pub noise_sd_ppm: f64,
    /// NO2 column per ppm of CO2 enhancement at the stack, mol/m^2 per ppm.
    pub no2_ratio: f64,
    pub no2_lifetime_s: f64,
    /// Retrieval noise on the NO2 channel, mol/m^2.
    pub no2_noise_sd: f64,
    pub seed: u64,
}

impl Default for PlumeScenario {
    fn default() -> Self {
        Self {
            q_mt_per_yr: 10.0,
            wind_u_ms: 4.0,
            wind_v_ms: 0.0,
            sigma_a: 0.8,
            sigma_b: 0.9,
            background_xco2_ppm: 410.0,
            noise_sd_ppm: 0.7,
            no2_ratio: 2.5e-4,
            no2_lifetime_s: 4.0 * 3600.0,
            no2_noise_sd: 1.5e-5,
            seed: 0,
        }
    }
}

impl PlumeScenario {
    pub fn wind_speed(&self) -> f64 {
        self.wind_u_ms.hypot(self.wind_v_ms)
    }

    /// Checks physical ranges. A zero rate is accepted so that linearity
    /// checks can pass through the origin.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.q_mt_per_yr >= 0.0 && self.q_mt_per_yr <= MAX_RATE_MT) {
            return bad(format!("q {} Mt/yr outside [0, {MAX_RATE_MT}]", self.q_mt_per_yr));
        }
        if !(self.wind_speed() >= MIN_WIND_SPEED) {
            return bad(format!("wind speed {} m/s below {MIN_WIND_SPEED}", self.wind_speed()));
        }
        if !(self.sigma_a > 0.0) || !(self.sigma_b > 0.0 && self.sigma_b <= 1.0) {
            return bad(format!("dispersion ({}, {}) invalid", self.sigma_a, self.sigma_b));
        }
        if !(self.background_xco2_ppm > 0.0) {
            return bad("background must be positive".into());
        }
        if !(self.noise_sd_ppm >= 0.0) || !(self.no2_noise_sd >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if !(self.no2_ratio > 0.0) || !(self.no2_lifetime_s > 0.0) {
            return bad("NO2 ratio and lifetime must be positive".into());
        }
        Ok(())
    }

    pub fn sigma_y(&self, downwind_m: f64) -> f64 {
        self.sigma_a * downwind_m.powf(self.sigma_b)
    }

    /// Column mass density in kg/m^2 at wind-aligned offsets (metres).
    pub fn column_density(&self, downwind_m: f64, crosswind_m: f64) -> f64 {
        if downwind_m <= 0.0 {
            return 0.0;
        }
        let sigma = self.sigma_y(downwind_m);
        let q = mt_per_yr_to_kg_per_s(self.q_mt_per_yr);
        q / ((2.0 * std::f64::consts::PI).sqrt() * sigma * self.wind_speed())
            * (-crosswind_m * crosswind_m / (2.0 * sigma * sigma)).exp()
    }
}

/// Downwind/crosswind offsets (metres) of every cell relative to the source,
/// with the near-source floor already applied to the downwind component.
fn plume_offsets(scenario: &PlumeScenario, grid: &GridSpec, source: GeoPoint) -> Result<Vec<(f64, f64)>> {
    grid.validate()?;
    if !grid.contains(source) {
        return Err(Error::SourceOutOfBounds {
            x_km: source.x_km,
            y_km: source.y_km,
        });
    }
    let speed = scenario.wind_speed();
    let (cx, cy) = (scenario.wind_u_ms / speed, scenario.wind_v_ms / speed);
    let src_cell = grid.cell_of(source);
    let floor = grid.cell_size_km * 1000.0 / 2.0;
    let mut out = Vec::with_capacity(grid.ny * grid.nx);
    for row in 0..grid.ny {
        for col in 0..grid.nx {
            let p = grid.cell_center(row, col);
            let dx = (p.x_km - source.x_km) * 1000.0;
            let dy = (p.y_km - source.y_km) * 1000.0;
            let down = dx * cx + dy * cy;
            let cross = -dx * cy + dy * cx;
            let at_source = (row as i64, col as i64) == src_cell;
            let down = if down > 0.0 || at_source { down.max(floor) } else { 0.0 };
            out.push((down, cross));
        }
    }
    Ok(out)
}

/// XCO2 enhancement (ppm) of a single plume, evaluated at cell centres.
pub fn gaussian_plume_column(scenario: &PlumeScenario, grid: &GridSpec, source: GeoPoint) -> Result<GridField> {
    scenario.validate()?;
    let offsets = plume_offsets(scenario, grid, source)?;
    let values = offsets
        .iter()
        .map(|&(down, cross)| kg_per_m2_to_ppm(scenario.column_density(down, cross)))
        .collect();
    GridField::new(*grid, values, synthetic_date(scenario.seed), ChannelId::Xco2)
}

fn synthetic_date(seed: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + Duration::days((seed % 365) as i64)
}

/// All channels of one simulated scene plus the noiseless plume.
#[derive(Debug, Clone)]
pub struct SceneFields {
    pub xco2: GridField,
    pub no2: GridField,
    pub wind_u: GridField,
    pub wind_v: GridField,
    pub plume_ppm: GridField,
    /// Noiseless NO2 column, mol/m^2.
    pub no2_clean: GridField,
}

impl SceneFields {
    pub fn channels(&self) -> [&GridField; 4] {
        [&self.xco2, &self.no2, &self.wind_u, &self.wind_v]
    }
}

pub fn simulate_fields(scenario: &PlumeScenario, grid: &GridSpec, source: GeoPoint) -> Result<SceneFields> {
    scenario.validate()?;
    let offsets = plume_offsets(scenario, grid, source)?;
    let date = synthetic_date(scenario.seed);
    let speed = scenario.wind_speed();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n = grid.ny * grid.nx;

    let plume: Vec<f64> = offsets
        .iter()
        .map(|&(d, c)| kg_per_m2_to_ppm(scenario.column_density(d, c)))
        .collect();
    let no2_clean: Vec<f64> = plume
        .iter()
        .zip(&offsets)
        .map(|(&p, &(d, _))| scenario.no2_ratio * p * (-d / (speed * scenario.no2_lifetime_s)).exp())
        .collect();

    let xco2_noise = gaussian_draws(&mut rng, scenario.noise_sd_ppm, n);
    let no2_noise = gaussian_draws(&mut rng, scenario.no2_noise_sd, n);
    let xco2: Vec<f64> = plume
        .iter()
        .zip(xco2_noise)
        .map(|(&p, e)| scenario.background_xco2_ppm + p + e)
        .collect();
    let no2: Vec<f64> = no2_clean.iter().zip(no2_noise).map(|(&c, e)| c + e).collect();

    Ok(SceneFields {
        xco2: GridField::new(*grid, xco2, date, ChannelId::Xco2)?,
        no2: GridField::new(*grid, no2, date, ChannelId::No2)?,
        wind_u: GridField::constant(*grid, scenario.wind_u_ms, date, ChannelId::WindU)?,
        wind_v: GridField::constant(*grid, scenario.wind_v_ms, date, ChannelId::WindV)?,
        plume_ppm: GridField::new(*grid, plume, date, ChannelId::Xco2)?,
        no2_clean: GridField::new(*grid, no2_clean, date, ChannelId::No2)?,
    })
}

fn gaussian_draws(rng: &mut ChaCha8Rng, sd: f64, n: usize) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, sd).expect("finite sd");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// One simulated scene as a training sample (features in channel order
/// XCO2, NO2, WIND_U, WIND_V). Square grids only.
pub fn simulate_scene(scenario: &PlumeScenario, grid: &GridSpec, source: GeoPoint) -> Result<Sample> {
    if grid.ny != grid.nx {
        return Err(Error::InvalidGrid(format!(
            "scenes must be square, got {}x{}",
            grid.ny, grid.nx
        )));
    }
    let fields = simulate_fields(scenario, grid, source)?;
    let mut features = Vec::with_capacity(4 * grid.ny * grid.nx);
    for ch in fields.channels() {
        features.extend(ch.values().iter().map(|&v| v as f32));
    }
    Ok(Sample {
        id: format!("sim_{:06}", scenario.seed),
        features,
        size: grid.nx,
        target_mt_per_yr: scenario.q_mt_per_yr,
        plant_id: format!("sim-{:06}", scenario.seed),
        date: fields.xco2.timestamp,
        source: SampleSource::Simulated,
        cell_size_km: grid.cell_size_km,
    })
}

/// Keeps only cells inside periodic diagonal swath stripes covering roughly
/// `coverage` of the grid. Stripe orientation and phase come from `seed`.
pub fn make_sparse_soundings(field: &GridField, coverage: f64, swath_width_cells: usize, seed: u64) -> Result<GridField> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidCoverage(coverage));
    }
    if !field.is_complete() {
        return Err(Error::GapFillRequired);
    }
    if swath_width_cells == 0 {
        return Err(Error::ConfigError("swath width must be at least one cell".into()));
    }
    let width = swath_width_cells;
    let period = ((width as f64 / coverage).round() as usize).max(width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0..period);
    let ascending = rng.random_bool(0.5);
    let (ny, nx) = (field.ny(), field.nx());
    let mut mask = Vec::with_capacity(ny * nx);
    for row in 0..ny {
        for col in 0..nx {
            let diag = if ascending { row + col } else { row + nx - 1 - col };
            mask.push((diag + phase) % period < width);
        }
    }
    field.masked(mask)
}

/// Settings for a synthetic satellite-style region with several plants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    pub enabled: bool,
    pub plants: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    /// Fine-grid cells per side (1 km cells). Must be a multiple of 20.
    pub size_km: usize,
    pub annual_range_mt: (f64, f64),
    pub wind_range_ms: (f64, f64),
    pub coverage: f64,
    pub swath_width_cells: usize,
    pub no2_cell_km: f64,
    pub wind_cell_km: f64,
    /// Fraction of coarse NO2 cells lost to clouds.
    pub no2_gap_fraction: f64,
    pub scenario: PlumeScenario,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            plants: 4,
            days: 10,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            size_km: 160,
            annual_range_mt: (2.0, 30.0),
            wind_range_ms: (2.0, 7.0),
            coverage: 0.15,
            swath_width_cells: 4,
            no2_cell_km: 5.0,
            wind_cell_km: 4.0,
            no2_gap_fraction: 0.2,
            scenario: PlumeScenario::default(),
        }
    }
}

/// Raw inputs for one day of the synthetic region.
#[derive(Debug, Clone)]
pub struct RegionDay {
    pub date: NaiveDate,
    pub xco2_soundings: GridField,
    pub no2_raw: GridField,
    pub wind_u: GridField,
    pub wind_v: GridField,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub plants: Vec<PlantRecord>,
    pub days: Vec<RegionDay>,
    pub proxies: Vec<(String, DailyProxy)>,
}

/// Annual demand curve with a 1.4 peak-to-trough ratio.
pub fn demand_curve(date: NaiveDate) -> f64 {
    use chrono::Datelike;
    let a = 0.4 / 2.4;
    1.0 + a * (2.0 * std::f64::consts::PI * date.ordinal0() as f64 / 365.0).sin()
}

/// Builds a multi-plant region at 1 km with coarse NO2 and wind inputs.
pub fn synthesize_region(cfg: &RegionConfig, seed: u64) -> Result<Region> {
    let fine = 1.0;
    let n = cfg.size_km;
    for (label, cell) in [("no2", cfg.no2_cell_km), ("wind", cfg.wind_cell_km)] {
        let ratio = n as f64 / cell;
        if cell < fine || (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 2.0 {
            return Err(Error::ConfigError(format!(
                "region size {n} km is not a multiple of the {label} cell {cell} km"
            )));
        }
    }
    if cfg.plants == 0 || cfg.days == 0 {
        return Err(Error::ConfigError("region needs at least one plant and one day".into()));
    }
    cfg.scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fine_spec = GridSpec {
        ny: n,
        nx: n,
        cell_size_km: fine,
        origin_xy_km: (fine / 2.0, fine / 2.0),
    };

    // plants on a jittered lattice, keeping a 34 km margin for patches
    let margin = 34.0;
    let span = n as f64 - 2.0 * margin;
    let per_side = (cfg.plants as f64).sqrt().ceil() as usize;
    let step = span / per_side as f64;
    let mut plants = Vec::with_capacity(cfg.plants);
    for k in 0..cfg.plants {
        let (gi, gj) = (k / per_side, k % per_side);
        let jitter = step * 0.25;
        let x = margin + (gj as f64 + 0.5) * step + rng.random_range(-jitter..=jitter);
        let y = margin + (gi as f64 + 0.5) * step + rng.random_range(-jitter..=jitter);
        let (lo, hi) = cfg.annual_range_mt;
        plants.push(PlantRecord {
            plant_id: format!("P{:03}", k + 1),
            location: GeoPoint::new(x.floor() + 0.5, y.floor() + 0.5),
            annual_emission_mt: rng.random_range(lo..=hi),
            year: cfg.start_date.format("%Y").to_string().parse().unwrap_or(2020),
        });
    }

    let mut days = Vec::with_capacity(cfg.days);
    let mut proxies = Vec::new();
    for d in 0..cfg.days {
        let date = cfg.start_date + Duration::days(d as i64);
        let demand = demand_curve(date);
        let speed = rng.random_range(cfg.wind_range_ms.0..=cfg.wind_range_ms.1);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (u, v) = (speed * theta.cos(), speed * theta.sin());
        let day_seed: u64 = rng.random();

        let mut plume_sum = vec![0.0; n * n];
        let mut no2_sum = vec![0.0; n * n];
        for (k, plant) in plants.iter().enumerate() {
            let scenario = PlumeScenario {
                q_mt_per_yr: (plant.annual_emission_mt * demand).min(MAX_RATE_MT),
                wind_u_ms: u,
                wind_v_ms: v,
                noise_sd_ppm: 0.0,
                no2_noise_sd: 0.0,
                seed: day_seed ^ k as u64,
                ..cfg.scenario.clone()
            };
            let f = simulate_fields(&scenario, &fine_spec, plant.location)?;
            let no2 = f.no2_clean.values();
            let peak = no2.iter().cloned().fold(0.0, f64::max);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, &val) in no2.iter().enumerate() {
                plume_sum[i] += f.plume_ppm.values()[i];
                no2_sum[i] += val;
                if val > 0.01 * peak {
                    sum += val;
                    count += 1;
                }
            }
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            proxies.push((
                plant.plant_id.clone(),
                DailyProxy {
                    date,
                    proxy_value: mean * demand,
                },
            ));
        }

        let sc = &cfg.scenario;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(day_seed);
        let xco2_noise = gaussian_draws(&mut noise_rng, sc.noise_sd_ppm, n * n);
        let xco2: Vec<f64> = plume_sum
            .iter()
            .zip(xco2_noise)
            .map(|(&p, e)| sc.background_xco2_ppm + p + e)
            .collect();
        let xco2_full = GridField::new(fine_spec, xco2, date, ChannelId::Xco2)?;
        let xco2_soundings = make_sparse_soundings(&xco2_full, cfg.coverage, cfg.swath_width_cells, day_seed)?;

        let no2_fine = GridField::new(fine_spec, no2_sum, date, ChannelId::No2)?;
        let mut no2_raw = block_average(&no2_fine, cfg.no2_cell_km)?;
        let coarse_noise = gaussian_draws(&mut noise_rng, sc.no2_noise_sd, no2_raw.values().len());
        no2_raw = {
            let noisy: Vec<f64> = no2_raw.values().iter().zip(coarse_noise).map(|(&v, e)| v + e).collect();
            let mut mask: Vec<bool> = (0..noisy.len())
                .map(|_| !noise_rng.random_bool(cfg.no2_gap_fraction.clamp(0.0, 0.95)))
                .collect();
            if !mask.iter().any(|&m| m) {
                mask[0] = true;
            }
            GridField::with_mask(*no2_raw.spec(), noisy, mask, date, ChannelId::No2)?
        };

        let wn = (n as f64 / cfg.wind_cell_km).round() as usize;
        let wind_spec = GridSpec {
            ny: wn,
            nx: wn,
            cell_size_km: cfg.wind_cell_km,
            origin_xy_km: (cfg.wind_cell_km / 2.0, cfg.wind_cell_km / 2.0),
        };
        days.push(RegionDay {
            date,
            xco2_soundings,
            no2_raw,
            wind_u: GridField::constant(wind_spec, u, date, ChannelId::WindU)?,
            wind_v: GridField::constant(wind_spec, v, date, ChannelId::WindV)?,
        });
    }
    Ok(Region { plants, days, proxies })
}

/// Averages a complete fine field into square blocks of `cell_km`.
fn block_average(field: &GridField, cell_km: f64) -> Result<GridField> {
    let factor = (cell_km / field.cell_size_km()).round() as usize;
    let (ny, nx) = (field.ny() / factor, field.nx() / factor);
    let spec = GridSpec {
        ny,
        nx,
        cell_size_km: cell_km,
        origin_xy_km: (cell_km / 2.0, cell_km / 2.0),
    };
    let mut values = vec![0.0; ny * nx];
    for r in 0..ny * factor {
        for c in 0..nx * factor {
            values[(r / factor) * nx + c / factor] += field.get(r, c);
        }
    }
    let area = (factor * factor) as f64;
    values.iter_mut().for_each(|v| *v /= area);
    GridField::new(spec, values, field.timestamp, field.channel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid64() -> GridSpec {
        GridSpec::new(64, 64, 2.0)
    }

    fn center(g: &GridSpec) -> GeoPoint {
        g.cell_center(32, 32)
    }

    #[test]
    fn dry_air_column_matches_constants() {
        assert!((dry_air_column() - 3.5673e5).abs() / 3.5673e5 < 1e-3);
    }

    #[test]
    fn zero_rate_gives_zero_field() {
        let s = PlumeScenario {
            q_mt_per_yr: 0.0,
            ..Default::default()
        };
        let f = gaussian_plume_column(&s, &grid64(), center(&grid64())).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_rate_doubles_field() {
        let g = grid64();
        let s = PlumeScenario {
            q_mt_per_yr: 7.0,
            wind_u_ms: 3.0,
            wind_v_ms: -2.0,
            ..Default::default()
        };
        let s2 = PlumeScenario {
            q_mt_per_yr: 14.0,
            ..s.clone()
        };
        let a = gaussian_plume_column(&s, &g, center(&g)).unwrap();
        let b = gaussian_plume_column(&s2, &g, center(&g)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn crosswind_integral_conserves_flux_at_10km() {
        // wind along +x, so a grid column is a crosswind transect
        let g = GridSpec::new(96, 96, 1.0);
        let s = PlumeScenario {
            q_mt_per_yr: 12.0,
            wind_u_ms: 5.0,
            wind_v_ms: 0.0,
            ..Default::default()
        };
        let src = g.cell_center(48, 20);
        let f = gaussian_plume_column(&s, &g, src).unwrap();
        let col = 30;
        let dy = g.cell_size_km * 1000.0;
        let ppm_to_kg = M_CO2 * dry_air_column() * 1e-6;
        let column: Vec<f64> = (0..g.ny).map(|r| f.get(r, col) * ppm_to_kg).collect();
        let trap: f64 = column.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dy).sum();
        let expected = mt_per_yr_to_kg_per_s(s.q_mt_per_yr) / s.wind_speed();
        assert!((trap - expected).abs() / expected < 0.01, "{trap} vs {expected}");
    }

    #[test]
    fn noiseless_zero_rate_scene_is_background() {
        let g = grid64();
        let s = PlumeScenario {
            q_mt_per_yr: 0.0,
            noise_sd_ppm: 0.0,
            ..Default::default()
        };
        let f = simulate_fields(&s, &g, center(&g)).unwrap();
        assert!(f.xco2.values().iter().all(|&v| v == s.background_xco2_ppm));
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let g = grid64();
        let s = PlumeScenario {
            seed: 99,
            ..Default::default()
        };
        let a = simulate_scene(&s, &g, center(&g)).unwrap();
        let b = simulate_scene(&s, &g, center(&g)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.target_mt_per_yr, s.q_mt_per_yr);
    }

    #[test]
    fn no2_without_decay_tracks_plume_ratio() {
        let g = grid64();
        let s = PlumeScenario {
            no2_lifetime_s: 1e12,
            no2_noise_sd: 0.0,
            wind_u_ms: 2.0,
            wind_v_ms: 3.0,
            ..Default::default()
        };
        let f = simulate_fields(&s, &g, center(&g)).unwrap();
        let mut plume_pixels = 0;
        for (&n, &p) in f.no2.values().iter().zip(f.plume_ppm.values()) {
            if p > 1e-6 {
                assert!((n / p - s.no2_ratio).abs() / s.no2_ratio < 1e-6);
                plume_pixels += 1;
            }
        }
        assert!(plume_pixels > 50);
    }

    #[test]
    fn no2_decays_along_centerline() {
        let g = grid64();
        let s = PlumeScenario {
            wind_u_ms: 4.0,
            wind_v_ms: 0.0,
            ..Default::default()
        };
        let f = simulate_fields(&s, &g, center(&g)).unwrap();
        let line: Vec<f64> = (32..64).map(|c| f.no2_clean.get(32, c)).collect();
        assert!(line.iter().all(|&v| v >= 0.0));
        assert!(line.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rotated_scene_matches_rotated_wind() {
        let g = grid64();
        let base = PlumeScenario {
            wind_u_ms: 4.5,
            wind_v_ms: 0.0,
            noise_sd_ppm: 0.0,
            no2_noise_sd: 0.0,
            ..Default::default()
        };
        let a = simulate_fields(&base, &g, g.cell_center(32, 32)).unwrap();
        let turned = PlumeScenario {
            wind_u_ms: 0.0,
            wind_v_ms: 4.5,
            ..base.clone()
        };
        // rotating 90 degrees about the array centre moves cell (32, 32) to (32, 31)
        let b = simulate_fields(&turned, &g, g.cell_center(32, 31)).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let rotated = a.xco2.get(63 - c, r);
                assert!((rotated - b.xco2.get(r, c)).abs() < 1e-6);
                let rotated = a.no2.get(63 - c, r);
                assert!((rotated - b.no2.get(r, c)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn source_outside_grid_rejected() {
        let g = grid64();
        let err = gaussian_plume_column(&PlumeScenario::default(), &g, GeoPoint::new(500.0, 3.0)).unwrap_err();
        assert!(matches!(err, Error::SourceOutOfBounds { .. }));
    }

    #[test]
    fn slow_wind_rejected() {
        let s = PlumeScenario {
            wind_u_ms: 0.3,
            wind_v_ms: 0.2,
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(Error::InvalidScenario(_))));
    }

    fn full_field() -> GridField {
        let g = grid64();
        simulate_fields(&PlumeScenario::default(), &g, center(&g)).unwrap().xco2
    }

    #[test]
    fn full_coverage_keeps_everything() {
        let f = full_field();
        let s = make_sparse_soundings(&f, 1.0, 3, 5).unwrap();
        assert!(s.is_complete());
        assert_eq!(s.values(), f.values());
    }

    #[test]
    fn ten_percent_coverage_count() {
        let f = full_field();
        for seed in 0..100 {
            let s = make_sparse_soundings(&f, 0.1, 3, seed).unwrap();
            let n = s.valid_count();
            assert!((348..=471).contains(&n), "seed {seed}: {n}");
            assert_eq!(s, make_sparse_soundings(&f, 0.1, 3, seed).unwrap());
        }
    }

    #[test]
    fn invalid_coverage() {
        let f = full_field();
        assert!(matches!(make_sparse_soundings(&f, 0.0, 3, 1), Err(Error::InvalidCoverage(_))));
        assert!(matches!(make_sparse_soundings(&f, -0.5, 3, 1), Err(Error::InvalidCoverage(_))));
    }

    #[test]
    fn demand_curve_peak_to_trough() {
        let vals: Vec<f64> = (0..365)
            .map(|d| demand_curve(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + Duration::days(d)))
            .collect();
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!((hi / lo - 1.4).abs() < 1e-3);
    }
}
