//! Table-1 style metrics, improvement percentages, text tables and scatter plots.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::write_json;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_err_q25: f64,
    pub abs_err_median: f64,
    pub abs_err_q75: f64,
    pub rel_err_q25: f64,
    pub rel_err_median: f64,
    pub rel_err_q75: f64,
    pub median_abs_err: f64,
    pub median_abs_rel_err: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
    pub dataset_label: String,
    pub model_label: String,
}

impl MetricsReport {
    pub fn labeled(mut self, dataset: &str, model: &str) -> Self {
        self.dataset_label = dataset.to_string();
        self.model_label = model.to_string();
        self
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quartiles(mut v: Vec<f64>) -> (f64, f64, f64) {
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75))
}

pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<MetricsReport> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthError(predictions.len(), targets.len()));
    }
    let n = targets.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("metrics need at least 2 samples, got {n}")));
    }
    if let Some((i, &y)) = targets.iter().enumerate().find(|(_, y)| !(**y > 0.0 && y.is_finite())) {
        return Err(Error::InvalidTarget { index: i, value: y });
    }
    if let Some(i) = predictions.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite prediction at index {i}")));
    }
    let abs: Vec<f64> = predictions.iter().zip(targets).map(|(p, y)| (p - y).abs()).collect();
    let rel: Vec<f64> = abs.iter().zip(targets).map(|(e, y)| 100.0 * e / y).collect();
    let nf = n as f64;
    let mean_y = targets.iter().sum::<f64>() / nf;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean_y).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateR2);
    }
    let ss_res: f64 = abs.iter().map(|e| e * e).sum();
    let (a25, a50, a75) = quartiles(abs.clone());
    let (r25, r50, r75) = quartiles(rel);
    Ok(MetricsReport {
        abs_err_q25: a25,
        abs_err_median: a50,
        abs_err_q75: a75,
        rel_err_q25: r25,
        rel_err_median: r50,
        rel_err_q75: r75,
        median_abs_err: a50,
        median_abs_rel_err: r50,
        mae: abs.iter().sum::<f64>() / nf,
        rmse: (ss_res / nf).sqrt(),
        r2: 1.0 - ss_res / ss_tot,
        n,
        dataset_label: String::new(),
        model_label: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

/// Percent improvement of `new` over `baseline`.
pub fn relative_improvement(baseline: f64, new: f64, orientation: Orientation) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(match orientation {
        Orientation::LowerBetter => 100.0 * (baseline - new) / baseline,
        Orientation::HigherBetter => 100.0 * (new - baseline) / baseline,
    })
}

type Column = (&'static str, fn(&MetricsReport) -> f64, Orientation);

const COLUMNS: [Column; 11] = [
    ("AE q25", |r| r.abs_err_q25, Orientation::LowerBetter),
    ("AE med", |r| r.abs_err_median, Orientation::LowerBetter),
    ("AE q75", |r| r.abs_err_q75, Orientation::LowerBetter),
    ("ARE% q25", |r| r.rel_err_q25, Orientation::LowerBetter),
    ("ARE% med", |r| r.rel_err_median, Orientation::LowerBetter),
    ("ARE% q75", |r| r.rel_err_q75, Orientation::LowerBetter),
    ("MedAE", |r| r.median_abs_err, Orientation::LowerBetter),
    ("MedARE%", |r| r.median_abs_rel_err, Orientation::LowerBetter),
    ("MAE", |r| r.mae, Orientation::LowerBetter),
    ("RMSE", |r| r.rmse, Orientation::LowerBetter),
    ("R2", |r| r.r2, Orientation::HigherBetter),
];

/// Renders reports grouped by dataset (first-appearance order). Within a
/// dataset with more than one row, the best value of each column carries `*`.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset_label.as_str()) {
            datasets.push(&r.dataset_label);
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for d in &datasets {
        let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.dataset_label == *d).collect();
        let best: Vec<f64> = COLUMNS
            .iter()
            .map(|(_, get, o)| {
                let vals = group.iter().map(|r| round2(get(r)));
                match o {
                    Orientation::LowerBetter => vals.fold(f64::INFINITY, f64::min),
                    Orientation::HigherBetter => vals.fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
        for r in &group {
            let mut row = vec![r.dataset_label.clone(), r.model_label.clone()];
            for ((_, get, _), b) in COLUMNS.iter().zip(&best) {
                let v = get(r);
                let mark = if group.len() > 1 && round2(v) == *b { "*" } else { "" };
                row.push(format!("{v:.2}{mark}"));
            }
            rows.push(row);
        }
    }
    let mut header = vec!["Dataset".to_string(), "Model".to_string()];
    header.extend(COLUMNS.iter().map(|c| c.0.to_string()));
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let fmt = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    out.push_str("Absolute Error (AE, Mt/yr) and Absolute Relative Error (ARE, %) quartiles\n");
    out.push_str(&fmt(&header));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in &rows {
        out.push_str(&fmt(r));
        out.push('\n');
    }
    out
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Points and axis range of a rendered scatter plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    /// `(true, predicted)` pairs in input order.
    pub points: Vec<(f64, f64)>,
    pub axis_min: f64,
    pub axis_max: f64,
    pub width_px: u32,
    pub height_px: u32,
}

const PLOT_PX: u32 = 480;
const MARGIN_PX: u32 = 40;

/// Writes a predicted-vs-true scatter PNG with an identity line, plus a
/// JSON sidecar (same stem, `.json`) listing the plotted points.
pub fn plot_predictions(predictions: &[f64], targets: &[f64], out_path: &Path) -> Result<ScatterData> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthError(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    let points: Vec<(f64, f64)> = targets.iter().copied().zip(predictions.iter().copied()).collect();
    let finite = points.iter().flat_map(|&(a, b)| [a, b]).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return Err(Error::InvalidInput("no finite values to plot".into()));
    }
    lo = lo.min(0.0);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (axis_min, axis_max) = (lo, hi + pad);

    let mut img = RgbImage::from_pixel(PLOT_PX, PLOT_PX, Rgb([255, 255, 255]));
    let inner = (PLOT_PX - 2 * MARGIN_PX) as f64;
    let to_px = |v: f64| MARGIN_PX as f64 + (v - axis_min) / (axis_max - axis_min) * inner;
    let put = |img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>| {
        let (px, py) = (x.round() as i64, (PLOT_PX as f64 - y).round() as i64);
        if px >= 0 && py >= 0 && (px as u32) < PLOT_PX && (py as u32) < PLOT_PX {
            img.put_pixel(px as u32, py as u32, c);
        }
    };
    let axis = Rgb([0, 0, 0]);
    for t in 0..=(inner as u32) {
        let p = MARGIN_PX as f64 + t as f64;
        put(&mut img, p, MARGIN_PX as f64, axis);
        put(&mut img, MARGIN_PX as f64, p, axis);
        put(&mut img, p, p, Rgb([160, 160, 160]));
    }
    for &(t, p) in &points {
        if !(t.is_finite() && p.is_finite()) {
            continue;
        }
        let (cx, cy) = (to_px(t), to_px(p));
        for dx in -1..=1 {
            for dy in -1..=1 {
                put(&mut img, cx + dx as f64, cy + dy as f64, Rgb([31, 119, 180]));
            }
        }
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save_with_format(out_path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(out_path, io),
        other => Error::format(out_path, other),
    })?;
    let data = ScatterData {
        points,
        axis_min,
        axis_max,
        width_px: PLOT_PX,
        height_px: PLOT_PX,
    };
    write_json(&out_path.with_extension("json"), &data)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let m = compute_metrics(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!(m.mae, 1.5);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.median_abs_rel_err, 100.0);
        assert_eq!(m.r2, -9.0);
    }

    #[test]
    fn quartile_oracle() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.75), 3.25);
        // errors [1,2,3,4] from predictions offset against targets
        let m = compute_metrics(&[11.0, 8.0, 13.0, 7.0], &[10.0, 10.0, 10.0, 11.0]).unwrap();
        assert!((m.abs_err_q25 - 1.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let y = [1.0, 3.0, 8.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2, m.abs_err_q75, m.rel_err_q75), (0.0, 0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(compute_metrics(&[1.0, 2.0], &[1.0, 0.0]), Err(Error::InvalidTarget { index: 1, .. })));
        assert!(matches!(compute_metrics(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::DegenerateR2)));
        assert!(compute_metrics(&[1.0], &[1.0]).is_err());
        assert!(matches!(compute_metrics(&[1.0], &[1.0, 2.0]), Err(Error::LengthError(1, 2))));
    }

    #[test]
    fn improvement_cases() {
        let lb = Orientation::LowerBetter;
        let hb = Orientation::HigherBetter;
        assert!((relative_improvement(3.22, 2.89, lb).unwrap() - 10.2484).abs() < 1e-3);
        assert!((relative_improvement(0.20, 0.86, hb).unwrap() - 330.0).abs() < 1e-9);
        assert_eq!(relative_improvement(5.0, 5.0, hb).unwrap(), 0.0);
        assert!(matches!(relative_improvement(0.0, 1.0, lb), Err(Error::ZeroBaseline)));
    }

    fn report(vals: [f64; 11], model: &str) -> MetricsReport {
        MetricsReport {
            abs_err_q25: vals[0],
            abs_err_median: vals[1],
            abs_err_q75: vals[2],
            rel_err_q25: vals[3],
            rel_err_median: vals[4],
            rel_err_q75: vals[5],
            median_abs_err: vals[6],
            median_abs_rel_err: vals[7],
            mae: vals[8],
            rmse: vals[9],
            r2: vals[10],
            n: 10,
            dataset_label: "Simulated".into(),
            model_label: model.into(),
        }
    }

    fn cells(line: &str) -> Vec<String> {
        line.split('|').map(|c| c.trim().to_string()).collect()
    }

    #[test]
    fn table_single_row_and_published_values() {
        let unet = report([1.13, 2.35, 3.99, 7.08, 14.14, 23.98, 2.35, 14.14, 2.89, 3.74, 0.42], "U-Net");
        let t = render_table(&[unet.clone()]);
        let row = t.lines().find(|l| l.contains("U-Net")).unwrap();
        assert_eq!(
            cells(row)[2..],
            ["1.13", "2.35", "3.99", "7.08", "14.14", "23.98", "2.35", "14.14", "2.89", "3.74", "0.42"]
        );
        assert!(!row.contains('*'));
    }

    #[test]
    fn table_marks_better_row() {
        let cnn = report([1.5, 2.5, 4.5, 8.0, 15.0, 25.0, 2.5, 15.0, 3.22, 4.07, 0.20], "CNN");
        let unet = report([1.13, 2.35, 3.99, 7.08, 14.14, 23.98, 2.35, 14.14, 2.89, 3.74, 0.42], "U-Net");
        let t = render_table(&[cnn, unet]);
        let u = cells(t.lines().find(|l| l.contains("U-Net")).unwrap());
        let c = cells(t.lines().find(|l| l.contains("CNN")).unwrap());
        assert!(u[2..].iter().all(|v| v.ends_with('*')));
        assert!(c[2..].iter().all(|v| !v.ends_with('*')));
    }

    #[test]
    fn scatter_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scatter.png");
        let y = [1.0, 5.0, 9.0];
        let d = plot_predictions(&y, &y, &p).unwrap();
        assert!(p.exists());
        let back: ScatterData =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("scatter.json")).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.points.len(), 3);
        assert!(back.points.iter().all(|(a, b)| a == b));
        assert!(plot_predictions(&[], &[], &p).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae_and_quartiles_ordered(
            pairs in prop::collection::vec((0.0f64..60.0, 0.1f64..60.0), 2..200)
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(y.iter().any(|v| *v != y[0]));
            let m = compute_metrics(&p, &y).unwrap();
            prop_assert!(m.rmse + 1e-12 >= m.mae && m.mae >= 0.0);
            prop_assert!(m.abs_err_q25 <= m.abs_err_median && m.abs_err_median <= m.abs_err_q75);
            prop_assert!(m.rel_err_q25 <= m.rel_err_median && m.rel_err_median <= m.rel_err_q75);
            prop_assert!(m.r2 <= 1.0);
        }

        #[test]
        fn improvement_antisymmetric(a in 0.1f64..100.0, b in 0.1f64..100.0) {
            let o = Orientation::LowerBetter;
            let ab = relative_improvement(a, b, o).unwrap();
            let ba = relative_improvement(b, a, o).unwrap();
            prop_assert!(ab.signum() == -ba.signum() || (ab == 0.0 && ba == 0.0));
            prop_assert_eq!(relative_improvement(a, a, o).unwrap(), 0.0);
        }
    }
}
