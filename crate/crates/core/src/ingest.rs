//! Satellite-style preprocessing: completing sparse XCO2 soundings,
//! gap-filling and downscaling NO2, downscaling wind, and spreading annual
//! inventory totals over days.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bilinear_resample, idw_fill, GeoPoint, GridField};

pub const TARGET_CELL_KM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantRecord {
    pub plant_id: String,
    pub location: GeoPoint,
    pub annual_emission_mt: f64,
    pub year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyProxy {
    pub date: NaiveDate,
    pub proxy_value: f64,
}

/// Completes a sparse XCO2 map by distance-weighted k-nearest-neighbour
/// regression in standardized predictor space (predictor values plus cell
/// coordinates). Observed cells keep their values.
pub fn fill_xco2_map(soundings: &GridField, predictors: &[&GridField], k: usize) -> Result<GridField> {
    if k == 0 {
        return Err(Error::ConfigError("k must be at least 1".into()));
    }
    for p in predictors {
        if !p.same_geometry(soundings) {
            return Err(Error::GridMismatch(format!(
                "predictor {:?} is {}x{} @ {} km, soundings are {}x{} @ {} km",
                p.channel,
                p.ny(),
                p.nx(),
                p.cell_size_km(),
                soundings.ny(),
                soundings.nx(),
                soundings.cell_size_km()
            )));
        }
        if !p.is_complete() {
            return Err(Error::GapFillRequired);
        }
    }
    let found = soundings.valid_count();
    if found < k {
        return Err(Error::InsufficientSoundings { needed: k, found });
    }
    if found == soundings.values().len() {
        return Ok(soundings.clone());
    }

    let spec = *soundings.spec();
    let n = spec.ny * spec.nx;
    // raw feature columns: predictors, then x and y
    let mut columns: Vec<Vec<f64>> = predictors.iter().map(|p| p.values().to_vec()).collect();
    let centers: Vec<GeoPoint> = (0..n).map(|i| spec.cell_center(i / spec.nx, i % spec.nx)).collect();
    columns.push(centers.iter().map(|p| p.x_km).collect());
    columns.push(centers.iter().map(|p| p.y_km).collect());

    let mask = soundings.mask();
    let mut standardized: Vec<Vec<f64>> = Vec::new();
    for col in columns {
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in (0..n).filter(|&i| mask[i]) {
            sum += col[i];
            sq += col[i] * col[i];
        }
        let mean = sum / found as f64;
        let var = (sq / found as f64 - mean * mean).max(0.0);
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            continue; // constant over the observed cells, carries no information
        }
        standardized.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    let dims = standardized.len();
    let feature = |i: usize| -> Vec<f64> { standardized.iter().map(|c| c[i]).collect() };

    let known: Vec<(Vec<f64>, f64)> = (0..n)
        .filter(|&i| mask[i])
        .map(|i| (feature(i), soundings.values()[i]))
        .collect();
    let mut values = soundings.values().to_vec();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(known.len());
    for i in (0..n).filter(|&i| !mask[i]) {
        let f = feature(i);
        dist.clear();
        dist.extend(known.iter().enumerate().map(|(j, (g, _))| {
            let d2: f64 = (0..dims).map(|d| (f[d] - g[d]) * (f[d] - g[d])).sum();
            (d2, j)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.partial_cmp(b).expect("finite features");
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        let nearest = &mut dist[..k];
        nearest.sort_unstable_by(cmp);
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, j) in nearest.iter() {
            let w = 1.0 / d2.sqrt().max(1e-9);
            num += w * known[j].1;
            den += w;
        }
        values[i] = num / den;
    }
    GridField::new(spec, values, soundings.timestamp, soundings.channel)
}

/// Gap-fills coarse NO2 then resamples it to 1 km. Filling always precedes resampling.
pub fn preprocess_no2(raw: &GridField) -> Result<GridField> {
    let filled = idw_fill(raw, 2.0, 12)?;
    bilinear_resample(&filled, TARGET_CELL_KM)
}

pub fn preprocess_wind(u: &GridField, v: &GridField) -> Result<(GridField, GridField)> {
    if !u.same_geometry(v) {
        return Err(Error::GridMismatch(format!(
            "wind u is {}x{}, wind v is {}x{}",
            u.ny(),
            u.nx(),
            v.ny(),
            v.nx()
        )));
    }
    Ok((
        bilinear_resample(u, TARGET_CELL_KM)?,
        bilinear_resample(v, TARGET_CELL_KM)?,
    ))
}

/// Spreads an annual total over the proxy days. Each returned rate is
/// annualized (Mt/yr), so the mean over the days equals the annual total.
pub fn disaggregate_annual(record: &PlantRecord, proxies: &[DailyProxy]) -> Result<Vec<(NaiveDate, f64)>> {
    if proxies.is_empty() {
        return Err(Error::DegenerateProxy(record.plant_id.clone()));
    }
    if let Some(p) = proxies.iter().find(|p| !(p.proxy_value >= 0.0) || !p.proxy_value.is_finite()) {
        return Err(Error::InvalidProxy {
            plant: record.plant_id.clone(),
            value: p.proxy_value,
        });
    }
    let total: f64 = proxies.iter().map(|p| p.proxy_value).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateProxy(record.plant_id.clone()));
    }
    let days = proxies.len() as f64;
    Ok(proxies
        .iter()
        .map(|p| (p.date, record.annual_emission_mt * days * (p.proxy_value / total)))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct PlantRow {
    plant_id: String,
    x_km: f64,
    y_km: f64,
    annual_emission_mt: f64,
    year: i32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProxyRow {
    plant_id: String,
    date: NaiveDate,
    proxy_value: f64,
}

pub fn read_catalog(path: &Path) -> Result<Vec<PlantRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<PlantRow>() {
        let row = row.map_err(|e| Error::format(path, e))?;
        if !(row.annual_emission_mt > 0.0) {
            return Err(Error::format(
                path,
                format!("plant {} has non-positive annual emission", row.plant_id),
            ));
        }
        out.push(PlantRecord {
            plant_id: row.plant_id,
            location: GeoPoint::new(row.x_km, row.y_km),
            annual_emission_mt: row.annual_emission_mt,
            year: row.year,
        });
    }
    Ok(out)
}

pub fn write_catalog(path: &Path, plants: &[PlantRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in plants {
        w.serialize(PlantRow {
            plant_id: p.plant_id.clone(),
            x_km: p.location.x_km,
            y_km: p.location.y_km,
            annual_emission_mt: p.annual_emission_mt,
            year: p.year,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Proxy series grouped by plant, each sorted by date.
pub fn read_proxies(path: &Path) -> Result<BTreeMap<String, Vec<DailyProxy>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out: BTreeMap<String, Vec<DailyProxy>> = BTreeMap::new();
    for row in reader.deserialize::<ProxyRow>() {
        let row = row.map_err(|e| Error::format(path, e))?;
        out.entry(row.plant_id).or_default().push(DailyProxy {
            date: row.date,
            proxy_value: row.proxy_value,
        });
    }
    for series in out.values_mut() {
        series.sort_by_key(|p| p.date);
    }
    Ok(out)
}

pub fn write_proxies(path: &Path, proxies: &[(String, DailyProxy)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (plant, p) in proxies {
        w.serialize(ProxyRow {
            plant_id: plant.clone(),
            date: p.date,
            proxy_value: p.proxy_value,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelId, GridSpec};
    use proptest::prelude::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    fn plant(e: f64) -> PlantRecord {
        PlantRecord {
            plant_id: "P1".into(),
            location: GeoPoint::new(0.0, 0.0),
            annual_emission_mt: e,
            year: 2020,
        }
    }

    fn proxies(vals: &[f64]) -> Vec<DailyProxy> {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| DailyProxy {
                date: day() + chrono::Duration::days(i as i64),
                proxy_value: v,
            })
            .collect()
    }

    fn grid(ny: usize, nx: usize, cs: f64, ch: ChannelId, f: impl Fn(GeoPoint) -> f64) -> GridField {
        let spec = GridSpec {
            ny,
            nx,
            cell_size_km: cs,
            origin_xy_km: (cs / 2.0, cs / 2.0),
        };
        GridField::from_fn(spec, day(), ch, |_, _, p| f(p)).unwrap()
    }

    #[test]
    fn uniform_proxies_keep_annual_rate() {
        let out = disaggregate_annual(&plant(7.5), &proxies(&[2.0; 9])).unwrap();
        assert!(out.iter().all(|&(_, r)| (r - 7.5).abs() < 1e-12));
    }

    #[test]
    fn hand_evaluated_two_day_split() {
        let out = disaggregate_annual(&plant(2.0), &proxies(&[1.0, 3.0])).unwrap();
        assert!((out[0].1 - 1.0).abs() < 1e-12);
        assert!((out[1].1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_and_negative_proxies() {
        assert!(matches!(
            disaggregate_annual(&plant(2.0), &proxies(&[0.0, 0.0])),
            Err(Error::DegenerateProxy(_))
        ));
        assert!(matches!(
            disaggregate_annual(&plant(2.0), &proxies(&[1.0, -1.0])),
            Err(Error::InvalidProxy { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn disaggregation_conserves_total(e in 0.01f64..60.0, vals in prop::collection::vec(0.0f64..10.0, 1..400)) {
            prop_assume!(vals.iter().sum::<f64>() > 0.0);
            let out = disaggregate_annual(&plant(e), &proxies(&vals)).unwrap();
            let mean = out.iter().map(|r| r.1).sum::<f64>() / out.len() as f64;
            prop_assert!((mean - e).abs() <= 1e-12 * e);
        }
    }

    #[test]
    fn fill_identity_when_complete() {
        let s = grid(8, 8, 1.0, ChannelId::Xco2, |p| 400.0 + p.x_km);
        let n = grid(8, 8, 1.0, ChannelId::No2, |p| p.y_km);
        assert_eq!(fill_xco2_map(&s, &[&n], 4).unwrap(), s);
    }

    #[test]
    fn fill_constant_soundings() {
        let s = grid(12, 12, 1.0, ChannelId::Xco2, |_| 411.0);
        let mask: Vec<bool> = (0..144).map(|i| i % 5 == 0).collect();
        let s = s.masked(mask.clone()).unwrap();
        let n = grid(12, 12, 1.0, ChannelId::No2, |p| (p.x_km * 0.3).sin());
        let out = fill_xco2_map(&s, &[&n], 6).unwrap();
        for (i, &v) in out.values().iter().enumerate() {
            assert!((v - 411.0).abs() < 1e-9);
            if mask[i] {
                assert_eq!(v, s.values()[i]);
            }
        }
    }

    #[test]
    fn fill_errors() {
        let s = grid(6, 6, 1.0, ChannelId::Xco2, |_| 1.0);
        let mut mask = vec![false; 36];
        mask[0] = true;
        let sparse = s.masked(mask).unwrap();
        assert!(matches!(
            fill_xco2_map(&sparse, &[], 4),
            Err(Error::InsufficientSoundings { needed: 4, found: 1 })
        ));
        let other = grid(5, 6, 1.0, ChannelId::No2, |_| 0.0);
        assert!(matches!(fill_xco2_map(&s, &[&other], 1), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn no2_constant_and_plane() {
        let raw = grid(6, 6, 5.0, ChannelId::No2, |_| 3e-5);
        let out = preprocess_no2(&raw).unwrap();
        assert_eq!((out.ny(), out.nx()), (30, 30));
        assert!(out.values().iter().all(|&v| (v - 3e-5).abs() < 1e-18));

        let raw = grid(6, 6, 5.0, ChannelId::No2, |p| 0.5 * p.x_km);
        let out = preprocess_no2(&raw).unwrap();
        let (lo, hi) = (2.5, 27.5);
        for r in 0..out.ny() {
            for c in 0..out.nx() {
                let p = out.spec().cell_center(r, c);
                if p.x_km >= lo && p.x_km <= hi {
                    assert!((out.get(r, c) - 0.5 * p.x_km).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn no2_hole_is_bounded_by_neighbours() {
        let raw = grid(5, 5, 4.0, ChannelId::No2, |p| p.x_km + 2.0 * p.y_km);
        let mut mask = vec![true; 25];
        mask[12] = false;
        let holed = raw.masked(mask).unwrap();
        let out = preprocess_no2(&holed).unwrap();
        let neigh: Vec<f64> = [7, 11, 13, 17, 6, 8, 16, 18].iter().map(|&i| raw.values()[i]).collect();
        let lo = neigh.iter().cloned().fold(f64::MAX, f64::min);
        let hi = neigh.iter().cloned().fold(f64::MIN, f64::max);
        // the 4x4 block of 1 km cells under the former hole
        for r in 8..12 {
            for c in 8..12 {
                let v = out.get(r, c);
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn no2_commutes_with_offset() {
        let raw = grid(6, 7, 5.0, ChannelId::No2, |p| (p.x_km * 0.2).cos() + p.y_km * 0.01);
        let mask: Vec<bool> = (0..42).map(|i| i % 4 != 1).collect();
        let raw = raw.masked(mask).unwrap();
        let shifted = raw.map_values(|v| v + 2.5);
        let a = preprocess_no2(&raw).unwrap();
        let b = preprocess_no2(&shifted).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x + 2.5 - y).abs() < 1e-9);
        }
    }

    #[test]
    fn wind_uniform_plane_and_mismatch() {
        let u = grid(8, 8, 4.0, ChannelId::WindU, |_| 3.0);
        let v = grid(8, 8, 4.0, ChannelId::WindV, |_| -1.0);
        let (u1, v1) = preprocess_wind(&u, &v).unwrap();
        assert!(u1.values().iter().all(|&x| x == 3.0));
        assert!(v1.values().iter().all(|&x| x == -1.0));

        let u = grid(8, 8, 4.0, ChannelId::WindU, |p| 0.1 * p.y_km);
        let (u1, _) = preprocess_wind(&u, &v).unwrap();
        for r in 0..u1.ny() {
            for c in 0..u1.nx() {
                let p = u1.spec().cell_center(r, c);
                if p.y_km >= 2.0 && p.y_km <= 30.0 {
                    assert!((u1.get(r, c) - 0.1 * p.y_km).abs() < 1e-9);
                }
            }
        }

        let big = grid(32, 32, 4.0, ChannelId::WindU, |_| 1.0);
        let small = grid(16, 16, 4.0, ChannelId::WindV, |_| 1.0);
        assert!(matches!(preprocess_wind(&big, &small), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn catalog_and_proxy_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plants.csv");
        let plants = vec![plant(3.0)];
        write_catalog(&path, &plants).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("plant_id,x_km,y_km,annual_emission_mt,year"));
        assert_eq!(read_catalog(&path).unwrap(), plants);

        let ppath = dir.path().join("proxies.csv");
        let series: Vec<(String, DailyProxy)> = proxies(&[1.0, 2.0]).into_iter().map(|p| ("P1".to_string(), p)).collect();
        write_proxies(&ppath, &series).unwrap();
        let back = read_proxies(&ppath).unwrap();
        assert_eq!(back["P1"], proxies(&[1.0, 2.0]));
    }
}
