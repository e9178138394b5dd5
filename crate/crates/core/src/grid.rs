//! Raster data model and the spatial primitives shared by every stage:
//! bilinear resampling, inverse-distance gap filling and patch extraction.
//!
//! Coordinates are grid-local planar kilometres. Cell `(row, col)` has its
//! centre at `origin + (col, row) * cell_size`, so rows run along +y.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChannelId {
    Xco2,
    No2,
    WindU,
    WindV,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [
        ChannelId::Xco2,
        ChannelId::No2,
        ChannelId::WindU,
        ChannelId::WindV,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            ChannelId::Xco2 => "xco2",
            ChannelId::No2 => "no2",
            ChannelId::WindU => "wind_u",
            ChannelId::WindV => "wind_v",
        }
    }
}

/// A point in grid-local kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x_km: f64,
    pub y_km: f64,
}

impl GeoPoint {
    pub fn new(x_km: f64, y_km: f64) -> Self {
        Self { x_km, y_km }
    }
}

/// Shape and spacing of a regular grid, without any values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ny: usize,
    pub nx: usize,
    pub cell_size_km: f64,
    #[serde(default)]
    pub origin_xy_km: (f64, f64),
}

impl GridSpec {
    pub fn new(ny: usize, nx: usize, cell_size_km: f64) -> Self {
        Self {
            ny,
            nx,
            cell_size_km,
            origin_xy_km: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ny < 2 || self.nx < 2 {
            return Err(Error::InvalidGrid(format!(
                "shape {}x{} must be at least 2x2",
                self.ny, self.nx
            )));
        }
        if !(self.cell_size_km > 0.0 && self.cell_size_km.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "cell size {} km must be positive",
                self.cell_size_km
            )));
        }
        Ok(())
    }

    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint::new(
            self.origin_xy_km.0 + col as f64 * self.cell_size_km,
            self.origin_xy_km.1 + row as f64 * self.cell_size_km,
        )
    }

    /// Cell whose footprint contains `p`, possibly outside the grid.
    pub fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        let row = ((p.y_km - self.origin_xy_km.1) / self.cell_size_km).round() as i64;
        let col = ((p.x_km - self.origin_xy_km.0) / self.cell_size_km).round() as i64;
        (row, col)
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        let (row, col) = self.cell_of(p);
        row >= 0 && col >= 0 && (row as usize) < self.ny && (col as usize) < self.nx
    }
}

/// Georeferenced 2-D raster with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    values: Vec<f64>,
    valid: Vec<bool>,
    pub timestamp: NaiveDate,
    pub channel: ChannelId,
}

impl GridField {
    /// Builds a fully valid field. `values` is row-major with `spec.ny * spec.nx` entries.
    pub fn new(
        spec: GridSpec,
        values: Vec<f64>,
        timestamp: NaiveDate,
        channel: ChannelId,
    ) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::with_mask(spec, values, valid, timestamp, channel)
    }

    pub fn with_mask(
        spec: GridSpec,
        values: Vec<f64>,
        valid: Vec<bool>,
        timestamp: NaiveDate,
        channel: ChannelId,
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.ny * spec.nx;
        if values.len() != n || valid.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} cells, got {} values and {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        if let Some(k) = (0..n).find(|&k| valid[k] && !values[k].is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "valid cell {k} holds non-finite value {}",
                values[k]
            )));
        }
        Ok(Self {
            spec,
            values,
            valid,
            timestamp,
            channel,
        })
    }

    pub fn from_fn(
        spec: GridSpec,
        timestamp: NaiveDate,
        channel: ChannelId,
        mut f: impl FnMut(usize, usize, GeoPoint) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(spec.ny * spec.nx);
        for row in 0..spec.ny {
            for col in 0..spec.nx {
                values.push(f(row, col, spec.cell_center(row, col)));
            }
        }
        Self::new(spec, values, timestamp, channel)
    }

    pub fn constant(spec: GridSpec, value: f64, timestamp: NaiveDate, channel: ChannelId) -> Result<Self> {
        Self::new(spec, vec![value; spec.ny * spec.nx], timestamp, channel)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn ny(&self) -> usize {
        self.spec.ny
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn cell_size_km(&self) -> f64 {
        self.spec.cell_size_km
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.nx + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.spec.nx + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_complete(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Range of the valid values, `None` when nothing is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Replaces the validity mask; values stay untouched.
    pub fn masked(&self, valid: Vec<bool>) -> Result<Self> {
        Self::with_mask(
            self.spec,
            self.values.clone(),
            valid,
            self.timestamp,
            self.channel,
        )
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for (v, &ok) in out.values.iter_mut().zip(&self.valid) {
            if ok {
                *v = f(*v);
            }
        }
        out
    }

    pub fn same_geometry(&self, other: &GridField) -> bool {
        self.spec == other.spec
    }

    /// Writes `<dir>/<name>.f32`, `<dir>/<name>.json` and, for incomplete
    /// fields, a `<name>.mask` byte mask.
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin = dir.join(format!("{name}.f32"));
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for &v in &self.values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let mask_file = if self.is_complete() {
            None
        } else {
            let path = dir.join(format!("{name}.mask"));
            let mask: Vec<u8> = self.valid.iter().map(|&v| v as u8).collect();
            fs::write(&path, mask).map_err(|e| Error::io(&path, e))?;
            Some(format!("{name}.mask"))
        };
        let sidecar = FieldSidecar {
            shape: [self.spec.ny, self.spec.nx],
            cell_size_km: self.spec.cell_size_km,
            origin_xy_km: [self.spec.origin_xy_km.0, self.spec.origin_xy_km.1],
            timestamp: self.timestamp,
            channel_id: self.channel,
            mask_file,
        };
        let json = dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }

    /// Reads a field from its JSON sidecar path (or the `.f32` path next to it).
    pub fn load(path: &Path) -> Result<Self> {
        let json = path.with_extension("json");
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: FieldSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(&json, e))?;
        let dir = json.parent().map(Path::to_path_buf).unwrap_or_default();
        let bin = json.with_extension("f32");
        let raw = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let [ny, nx] = sidecar.shape;
        if raw.len() != ny * nx * 4 {
            return Err(Error::format(
                &bin,
                format!("expected {} bytes, found {}", ny * nx * 4, raw.len()),
            ));
        }
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let valid = match &sidecar.mask_file {
            None => vec![true; ny * nx],
            Some(m) => {
                let mpath: PathBuf = dir.join(m);
                let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
                if bytes.len() != ny * nx {
                    return Err(Error::format(&mpath, "mask shape differs from field"));
                }
                bytes.into_iter().map(|b| b != 0).collect()
            }
        };
        let spec = GridSpec {
            ny,
            nx,
            cell_size_km: sidecar.cell_size_km,
            origin_xy_km: (sidecar.origin_xy_km[0], sidecar.origin_xy_km[1]),
        };
        Self::with_mask(spec, values, valid, sidecar.timestamp, sidecar.channel_id)
            .map_err(|e| Error::format(&json, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldSidecar {
    shape: [usize; 2],
    cell_size_km: f64,
    origin_xy_km: [f64; 2],
    timestamp: NaiveDate,
    channel_id: ChannelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_file: Option<String>,
}

/// Interpolation weights along one axis with edge clamping.
fn axis_weights(pos: f64, n: usize) -> (usize, f64) {
    let p = pos.clamp(0.0, (n - 1) as f64);
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, p - i0 as f64)
}

/// Bilinear sample of a complete field at fractional cell coordinates.
pub(crate) fn sample_bilinear(values: &[f64], ny: usize, nx: usize, row: f64, col: f64) -> f64 {
    let (r0, tr) = axis_weights(row, ny);
    let (c0, tc) = axis_weights(col, nx);
    let v00 = values[r0 * nx + c0];
    let v01 = values[r0 * nx + c0 + 1];
    let v10 = values[(r0 + 1) * nx + c0];
    let v11 = values[(r0 + 1) * nx + c0 + 1];
    let top = v00 + (v01 - v00) * tc;
    let bottom = v10 + (v11 - v10) * tc;
    top + (bottom - top) * tr
}

/// Resamples a complete field onto a finer grid covering the same extent.
pub fn bilinear_resample(field: &GridField, target_cell_size_km: f64) -> Result<GridField> {
    if !field.is_complete() {
        return Err(Error::GapFillRequired);
    }
    let src = field.spec;
    if !(target_cell_size_km > 0.0) || target_cell_size_km > src.cell_size_km * (1.0 + 1e-12) {
        return Err(Error::UnsupportedUpscale {
            source_km: src.cell_size_km,
            target_km: target_cell_size_km,
        });
    }
    let ratio = src.cell_size_km / target_cell_size_km;
    let ny = ((src.ny as f64 * ratio).round() as usize).max(src.ny);
    let nx = ((src.nx as f64 * ratio).round() as usize).max(src.nx);
    let half_src = src.cell_size_km / 2.0;
    let origin = (
        src.origin_xy_km.0 - half_src + target_cell_size_km / 2.0,
        src.origin_xy_km.1 - half_src + target_cell_size_km / 2.0,
    );
    let spec = GridSpec {
        ny,
        nx,
        cell_size_km: target_cell_size_km,
        origin_xy_km: origin,
    };
    let mut values = Vec::with_capacity(ny * nx);
    for row in 0..ny {
        let y = origin.1 + row as f64 * target_cell_size_km;
        let fr = (y - src.origin_xy_km.1) / src.cell_size_km;
        for col in 0..nx {
            let x = origin.0 + col as f64 * target_cell_size_km;
            let fc = (x - src.origin_xy_km.0) / src.cell_size_km;
            values.push(sample_bilinear(&field.values, src.ny, src.nx, fr, fc));
        }
    }
    GridField::new(spec, values, field.timestamp, field.channel)
}

/// Fills invalid cells with an inverse-distance-weighted mean of the
/// `max_neighbors` nearest valid cells. Valid cells pass through unchanged.
pub fn idw_fill(field: &GridField, power: f64, max_neighbors: usize) -> Result<GridField> {
    if max_neighbors == 0 || !power.is_finite() {
        return Err(Error::ConfigError(format!(
            "idw_fill needs max_neighbors >= 1 and finite power (got {max_neighbors}, {power})"
        )));
    }
    let spec = field.spec;
    let nx = spec.nx;
    let known: Vec<(f64, f64, f64)> = (0..field.values.len())
        .filter(|&k| field.valid[k])
        .map(|k| {
            let p = spec.cell_center(k / nx, k % nx);
            (p.x_km, p.y_km, field.values[k])
        })
        .collect();
    if known.is_empty() {
        return Err(Error::EmptyField);
    }
    let k = max_neighbors.min(known.len());
    let mut values = field.values.clone();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(known.len());
    for idx in 0..values.len() {
        if field.valid[idx] {
            continue;
        }
        let p = spec.cell_center(idx / nx, idx % nx);
        dist.clear();
        dist.extend(
            known
                .iter()
                .enumerate()
                .map(|(i, &(x, y, _))| ((x - p.x_km).hypot(y - p.y_km), i)),
        );
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.partial_cmp(b).expect("finite distances");
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_dist);
        }
        let nearest = &mut dist[..k];
        nearest.sort_unstable_by(by_dist);
        let (mut num, mut den) = (0.0, 0.0);
        for &(d, i) in nearest.iter() {
            let w = d.powf(-power);
            num += w * known[i].2;
            den += w;
        }
        values[idx] = num / den;
    }
    GridField::new(spec, values, field.timestamp, field.channel)
}

/// A square row-major window cut from a field.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }
}

fn patch_window(spec: &GridSpec, center: GeoPoint, size: usize) -> Result<(usize, usize)> {
    let (row, col) = spec.cell_of(center);
    let half = (size / 2) as i64;
    let (r0, c0) = (row - half, col - half);
    let oob = r0 < 0
        || c0 < 0
        || r0 + size as i64 > spec.ny as i64
        || c0 + size as i64 > spec.nx as i64;
    if size == 0 || oob {
        return Err(Error::PatchOutOfBounds {
            row,
            col,
            size,
            ny: spec.ny,
            nx: spec.nx,
        });
    }
    Ok((r0 as usize, c0 as usize))
}

/// Cuts the `size`x`size` block whose index `(size/2, size/2)` is the cell containing `center`.
pub fn extract_patch(field: &GridField, center: GeoPoint, size: usize) -> Result<Patch> {
    if !field.is_complete() {
        return Err(Error::GapFillRequired);
    }
    let (r0, c0) = patch_window(&field.spec, center, size)?;
    let nx = field.spec.nx;
    let mut values = Vec::with_capacity(size * size);
    for r in r0..r0 + size {
        values.extend_from_slice(&field.values[r * nx + c0..r * nx + c0 + size]);
    }
    Ok(Patch { size, values })
}

/// Inverse of [`extract_patch`]: writes the patch back into its window.
pub fn write_patch(field: &mut GridField, center: GeoPoint, patch: &Patch) -> Result<()> {
    let (r0, c0) = patch_window(&field.spec, center, patch.size)?;
    let nx = field.spec.nx;
    for r in 0..patch.size {
        let dst = (r0 + r) * nx + c0;
        field.values[dst..dst + patch.size]
            .copy_from_slice(&patch.values[r * patch.size..(r + 1) * patch.size]);
        field.valid[dst..dst + patch.size].iter_mut().for_each(|v| *v = true);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 6, 1).unwrap()
    }

    fn field(ny: usize, nx: usize, cs: f64, f: impl Fn(usize, usize, GeoPoint) -> f64) -> GridField {
        GridField::from_fn(GridSpec::new(ny, nx, cs), day(), ChannelId::Xco2, |r, c, p| f(r, c, p)).unwrap()
    }

    #[test]
    fn resample_constant() {
        let f = field(8, 8, 4.0, |_, _, _| 3.25);
        let out = bilinear_resample(&f, 1.0).unwrap();
        assert_eq!((out.ny(), out.nx()), (32, 32));
        assert!(out.values().iter().all(|&v| v == 3.25));
        assert!(out.is_complete());
    }

    #[test]
    fn resample_midpoint_between_columns() {
        let f = GridField::new(GridSpec::new(2, 2, 1.0), vec![0.0, 1.0, 0.0, 1.0], day(), ChannelId::No2).unwrap();
        assert_eq!(sample_bilinear(f.values(), 2, 2, 0.0, 0.5), 0.5);
        assert_eq!(sample_bilinear(f.values(), 2, 2, 0.7, 0.5), 0.5);
    }

    #[test]
    fn resample_reproduces_plane_in_interior() {
        let f = field(10, 12, 4.0, |_, _, p| p.x_km);
        let out = bilinear_resample(&f, 1.0).unwrap();
        let s = f.spec();
        let (xmin, xmax) = (s.origin_xy_km.0, s.origin_xy_km.0 + (s.nx - 1) as f64 * s.cell_size_km);
        let mut checked = 0;
        for r in 0..out.ny() {
            for c in 0..out.nx() {
                let p = out.spec().cell_center(r, c);
                if p.x_km >= xmin && p.x_km <= xmax {
                    assert!((out.get(r, c) - p.x_km).abs() < 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn resample_rejects_gaps_and_upscale() {
        let f = field(4, 4, 2.0, |_, _, _| 1.0);
        assert!(matches!(bilinear_resample(&f, 4.0), Err(Error::UnsupportedUpscale { .. })));
        let mut mask = vec![true; 16];
        mask[5] = false;
        let g = f.masked(mask).unwrap();
        assert!(matches!(bilinear_resample(&g, 1.0), Err(Error::GapFillRequired)));
    }

    #[test]
    fn idw_identity_on_complete_field() {
        let f = field(5, 6, 1.0, |r, c, _| (r * 7 + c) as f64);
        assert_eq!(idw_fill(&f, 2.0, 12).unwrap(), f);
    }

    #[test]
    fn idw_hole_among_constants() {
        let f = field(5, 5, 1.0, |_, _, _| 4.5);
        let mut mask = vec![true; 25];
        mask[12] = false;
        let g = f.map_values(|v| v).masked(mask).unwrap();
        let out = idw_fill(&g, 2.0, 12).unwrap();
        assert!((out.get(2, 2) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn idw_hand_evaluated_two_neighbours() {
        // valid cells at 1 km (value 0) and 2 km (value 10) from the hole
        let mut values = vec![0.0; 8];
        values[3] = 10.0;
        let mut mask = vec![false; 8];
        mask[0] = true;
        mask[3] = true;
        let f = GridField::with_mask(GridSpec::new(2, 4, 1.0), values, mask, day(), ChannelId::No2).unwrap();
        let out = idw_fill(&f, 2.0, 12).unwrap();
        assert!((out.get(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn idw_empty_field() {
        let f = field(3, 3, 1.0, |_, _, _| 1.0).masked(vec![false; 9]).unwrap();
        assert!(matches!(idw_fill(&f, 2.0, 12), Err(Error::EmptyField)));
    }

    #[test]
    fn patch_identity_window() {
        let f = field(64, 64, 1.0, |r, c, _| (r * 64 + c) as f64);
        let center = f.spec().cell_center(32, 32);
        let p = extract_patch(&f, center, 64).unwrap();
        assert_eq!(p.values, f.values());
    }

    #[test]
    fn patch_indexing_contract() {
        let f = field(128, 128, 1.0, |r, c, _| (r * 1000 + c) as f64);
        let p = extract_patch(&f, f.spec().cell_center(64, 64), 64).unwrap();
        assert_eq!(p.get(32, 32), f.get(64, 64));
    }

    #[test]
    fn patch_near_edge_rejected() {
        let f = field(128, 128, 1.0, |_, _, _| 0.0);
        let err = extract_patch(&f, f.spec().cell_center(64, 10), 64).unwrap_err();
        assert!(matches!(err, Error::PatchOutOfBounds { .. }));
    }

    #[test]
    fn sidecar_roundtrip_with_mask() {
        let dir = tempfile::tempdir().unwrap();
        let f = field(4, 5, 3.5, |r, c, _| r as f64 - c as f64 * 0.5);
        let mut mask = vec![true; 20];
        mask[3] = false;
        let g = f.masked(mask).unwrap();
        g.save(dir.path(), "no2").unwrap();
        let back = GridField::load(&dir.path().join("no2.json")).unwrap();
        assert_eq!(back, g);
    }

    fn masked_field() -> impl Strategy<Value = GridField> {
        (2usize..12, 2usize..12).prop_flat_map(|(ny, nx)| {
            (
                prop::collection::vec(-50.0f64..50.0, ny * nx),
                prop::collection::vec(prop::bool::weighted(0.4), ny * nx),
                0usize..ny * nx,
            )
                .prop_map(move |(vals, mut mask, keep)| {
                    mask[keep] = true;
                    GridField::with_mask(GridSpec::new(ny, nx, 1.5), vals, mask, day(), ChannelId::Xco2).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn idw_output_bounded_and_complete(f in masked_field()) {
            let (lo, hi) = f.valid_range().unwrap();
            let out = idw_fill(&f, 2.0, 12).unwrap();
            prop_assert!(out.is_complete());
            for (k, &v) in out.values().iter().enumerate() {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                if f.mask()[k] {
                    prop_assert_eq!(v, f.values()[k]);
                }
            }
            prop_assert_eq!(idw_fill(&f, 2.0, 12).unwrap(), out);
        }

        #[test]
        fn bilinear_has_no_overshoot(f in masked_field(), ratio in 1usize..4) {
            let full = idw_fill(&f, 2.0, 12).unwrap();
            let (lo, hi) = full.valid_range().unwrap();
            let out = bilinear_resample(&full, full.cell_size_km() / ratio as f64).unwrap();
            for &v in out.values() {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }

        #[test]
        fn patch_write_back_is_identity(seed in 0u64..1000, size in 2usize..10) {
            let f = field(20, 24, 1.0, |r, c, _| ((r * 31 + c * 17) as u64 ^ seed) as f64);
            let center = f.spec().cell_center(10, 12);
            let p = extract_patch(&f, center, size).unwrap();
            let mut g = f.clone();
            write_patch(&mut g, center, &p).unwrap();
            prop_assert_eq!(g, f);
        }
    }
}
