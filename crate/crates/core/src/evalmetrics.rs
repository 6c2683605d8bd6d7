//! Height-error metrics over masked pixels: RMSE, NMAD and MAE, in metres.
//!
//! Metrics are computed on `pred - gt` over pixels that are inside the mask
//! and valid in both rasters. NMAD is `1.4826 * median(|dh - median(dh)|)`;
//! an even-sized median averages the two central order statistics.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{MaskGrid, RasterGrid};
use crate::scalar::Scalar;

/// Scales the median absolute deviation to a standard deviation under
/// normally distributed errors.
pub const NMAD_SCALE: f64 = 1.4826;

/// Metrics for one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub rmse: f64,
    pub nmad: f64,
    pub mae: f64,
    pub n_pixels: usize,
}

/// Canonical row order of comparison tables.
pub const METHOD_ORDER: [&str; 4] = ["input DSM", "single-stream", "wnet", "hybrid"];

/// Height differences `pred - gt` over the evaluated pixel set.
pub fn height_errors(pred: &RasterGrid, gt: &RasterGrid, mask: &MaskGrid) -> Result<Vec<f64>> {
    pred.check_aligned(gt, "prediction vs ground truth")?;
    mask.check_masks(gt)?;
    let errors: Vec<f64> = (0..gt.values().len())
        .filter(|&i| mask.values()[i] != 0 && pred.is_valid(i) && gt.is_valid(i))
        .map(|i| pred.values()[i] as f64 - gt.values()[i] as f64)
        .collect();
    if errors.is_empty() {
        return Err(Error::EmptyDomain(
            "no valid pixels inside the evaluation mask".into(),
        ));
    }
    Ok(errors)
}

fn nonempty<T>(errors: &[T]) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::EmptyDomain("metric over zero pixels".into()));
    }
    Ok(())
}

/// Root mean square of the errors.
pub fn rmse_of<T: Scalar>(errors: &[T]) -> Result<T> {
    nonempty(errors)?;
    let ss: f64 = errors.iter().map(|e| e.as_f64().powi(2)).sum();
    Ok(T::c((ss / errors.len() as f64).sqrt()))
}

/// Mean absolute error.
pub fn mae_of<T: Scalar>(errors: &[T]) -> Result<T> {
    nonempty(errors)?;
    let s: f64 = errors.iter().map(|e| e.as_f64().abs()).sum();
    Ok(T::c(s / errors.len() as f64))
}

/// Median with even counts averaging the two middle order statistics.
/// Reorders `values`.
pub fn median_in_place<T: Scalar>(values: &mut [T]) -> Result<T> {
    nonempty(values)?;
    let n = values.len();
    let mid = n / 2;
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("finite height errors");
    let (lower, upper, _) = values.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return Ok(upper);
    }
    let below = lower.iter().copied().fold(T::neg_infinity(), T::max);
    Ok((below + upper) / T::c(2.0))
}

/// Normalized median absolute deviation.
pub fn nmad_of<T: Scalar>(errors: &[T]) -> Result<T> {
    let mut work = errors.to_vec();
    let med = median_in_place(&mut work)?;
    for v in &mut work {
        *v = (*v - med).abs();
    }
    Ok(T::c(NMAD_SCALE) * median_in_place(&mut work)?)
}

pub fn rmse(pred: &RasterGrid, gt: &RasterGrid, mask: &MaskGrid) -> Result<f64> {
    rmse_of(&height_errors(pred, gt, mask)?)
}

pub fn nmad(pred: &RasterGrid, gt: &RasterGrid, mask: &MaskGrid) -> Result<f64> {
    nmad_of(&height_errors(pred, gt, mask)?)
}

pub fn mae(pred: &RasterGrid, gt: &RasterGrid, mask: &MaskGrid) -> Result<f64> {
    mae_of(&height_errors(pred, gt, mask)?)
}

/// All three metrics from one extraction of the masked pixel set.
pub fn evaluate(
    pred: &RasterGrid,
    gt: &RasterGrid,
    mask: &MaskGrid,
    label: &str,
) -> Result<MetricsReport> {
    let errors = height_errors(pred, gt, mask)?;
    Ok(MetricsReport {
        label: label.to_string(),
        rmse: rmse_of(&errors)?,
        nmad: nmad_of(&errors)?,
        mae: mae_of(&errors)?,
        n_pixels: errors.len(),
    })
}

/// Sorts reports into [`METHOD_ORDER`]; unknown labels keep their relative
/// order after the known ones.
pub fn sort_canonical(reports: &mut [MetricsReport]) {
    reports.sort_by_key(|r| {
        METHOD_ORDER
            .iter()
            .position(|&m| m == r.label)
            .unwrap_or(METHOD_ORDER.len())
    });
}

pub const CSV_HEADER: &str = "method,rmse_m,nmad_m,mae_m,n_pixels";

/// CSV table, one row per report in the given order.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        let label = if r.label.contains([',', '"', '\n']) {
            format!("\"{}\"", r.label.replace('"', "\"\""))
        } else {
            r.label.clone()
        };
        writeln!(
            s,
            "{label},{:.6},{:.6},{:.6},{}",
            r.rmse, r.nmad, r.mae, r.n_pixels
        )
        .expect("string write");
    }
    s
}

pub fn write_csv(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_csv(reports).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Fixed-width console table.
pub fn to_table(reports: &[MetricsReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>9}\n",
        "method", "RMSE", "NMAD", "MAE", "pixels"
    );
    for r in reports {
        writeln!(
            s,
            "{:<width$}  {:>8.3}  {:>8.3}  {:>8.3}  {:>9}",
            r.label, r.rmse, r.nmad, r.mae, r.n_pixels
        )
        .expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn grids(diffs: &[f32]) -> (RasterGrid, RasterGrid, MaskGrid) {
        let n = diffs.len();
        let t = GeoTransform::default();
        let gt = RasterGrid::from_fn(n, 1, t, |c, _| 30.0 + c as f32).unwrap();
        let pred = RasterGrid::from_fn(n, 1, t, |c, _| 30.0 + c as f32 + diffs[c]).unwrap();
        let mask = MaskGrid::full_like(&gt);
        (pred, gt, mask)
    }

    #[test]
    fn identical_rasters() {
        let (_, gt, mask) = grids(&[0.0; 4]);
        let r = evaluate(&gt, &gt, &mask, "gt").unwrap();
        assert_eq!((r.rmse, r.nmad, r.mae, r.n_pixels), (0.0, 0.0, 0.0, 4));
    }

    #[test]
    fn single_outlier() {
        let (pred, gt, mask) = grids(&[0.0, 0.0, 0.0, 0.0, 10.0]);
        let r = evaluate(&pred, &gt, &mask, "x").unwrap();
        assert!((r.rmse - 20f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.nmad, 0.0);
        assert_eq!(r.mae, 2.0);
    }

    #[test]
    fn symmetric_spread() {
        let (pred, gt, mask) = grids(&[-1.0, 0.0, 1.0]);
        assert_eq!(nmad(&pred, &gt, &mask).unwrap(), NMAD_SCALE);
    }

    #[test]
    fn constant_offset() {
        let (pred, gt, mask) = grids(&[-2.5; 6]);
        let r = evaluate(&pred, &gt, &mask, "x").unwrap();
        assert_eq!(r.rmse, 2.5);
        assert_eq!(r.mae, 2.5);
        assert_eq!(r.nmad, 0.0);
    }

    #[test]
    fn even_median() {
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn empty_mask_and_nodata() {
        let (pred, gt, _) = grids(&[1.0, 2.0]);
        let empty = MaskGrid::empty_like(&gt);
        assert!(matches!(
            evaluate(&pred, &gt, &empty, "x"),
            Err(Error::EmptyDomain(_))
        ));
        let mut v = pred.values().to_vec();
        v[0] = pred.nodata();
        let pred = pred.with_values(v).unwrap();
        let r = evaluate(&pred, &gt, &MaskGrid::full_like(&gt), "x").unwrap();
        assert_eq!(r.n_pixels, 1);
        assert_eq!(r.rmse, 2.0);
    }

    #[test]
    fn canonical_order_and_csv() {
        let mk = |l: &str| MetricsReport {
            label: l.into(),
            rmse: 1.0,
            nmad: 0.5,
            mae: 0.75,
            n_pixels: 3,
        };
        let mut v = vec![
            mk("hybrid"),
            mk("input DSM"),
            mk("wnet"),
            mk("single-stream"),
        ];
        sort_canonical(&mut v);
        let labels: Vec<_> = v.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, METHOD_ORDER);
        let csv = to_csv(&v[..1]);
        assert_eq!(
            csv,
            "method,rmse_m,nmad_m,mae_m,n_pixels\ninput DSM,1.000000,0.500000,0.750000,3\n"
        );
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(errors in prop::collection::vec(-50.0f64..50.0, 1..300)) {
            prop_assert!(rmse_of(&errors).unwrap() >= mae_of(&errors).unwrap() - 1e-12);
        }

        #[test]
        fn offset_has_zero_nmad(c in -100.0f64..100.0, n in 1usize..50) {
            prop_assert_eq!(nmad_of(&vec![c; n]).unwrap(), 0.0);
        }

        #[test]
        fn permutation_invariant(mut errors in prop::collection::vec(-5.0f64..5.0, 1..100), seed in any::<u64>()) {
            let a = (rmse_of(&errors).unwrap(), nmad_of(&errors).unwrap(), mae_of(&errors).unwrap());
            let k = (seed as usize) % errors.len();
            errors.rotate_left(k);
            errors.reverse();
            let b = (rmse_of(&errors).unwrap(), nmad_of(&errors).unwrap(), mae_of(&errors).unwrap());
            prop_assert!((a.0 - b.0).abs() < 1e-12 && a.1 == b.1 && (a.2 - b.2).abs() < 1e-12);
        }
    }
}
