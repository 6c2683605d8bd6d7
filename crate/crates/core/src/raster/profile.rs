use crate::error::{Error, Result};

use super::RasterGrid;

/// Bilinear sample at fractional pixel-centre coordinates, clamped to the
/// outermost centres. `None` when a contributing pixel is nodata.
pub(crate) fn bilinear(grid: &RasterGrid, u: f64, v: f64) -> Option<f64> {
    let (w, h) = (grid.width(), grid.height());
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let c0 = (u.floor() as usize).min(w.saturating_sub(2));
    let r0 = (v.floor() as usize).min(h.saturating_sub(2));
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let (fu, fv) = (u - c0 as f64, v - r0 as f64);
    let mut acc = 0.0;
    for (c, r, wt) in [
        (c0, r0, (1.0 - fu) * (1.0 - fv)),
        (c1, r0, fu * (1.0 - fv)),
        (c0, r1, (1.0 - fu) * fv),
        (c1, r1, fu * fv),
    ] {
        let val = grid.get(c, r);
        if val == grid.nodata() {
            if wt > 0.0 {
                return None;
            }
            continue;
        }
        acc += wt * val as f64;
    }
    Some(acc)
}

/// `n` equally spaced `(distance, height)` samples from world point `p0` to
/// `p1`. Heights are bilinear; samples touching nodata come back as NaN.
pub fn extract_profile(
    grid: &RasterGrid,
    p0: (f64, f64),
    p1: (f64, f64),
    n: usize,
) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(Error::Config(format!(
            "profile needs at least 2 samples, got {n}"
        )));
    }
    if p0 == p1 {
        return Err(Error::Config("profile endpoints coincide".into()));
    }
    let t = grid.transform();
    for (name, p) in [("start", p0), ("end", p1)] {
        let (c, r) = t.pixel(p.0, p.1);
        if !(0.0..=grid.width() as f64).contains(&c) || !(0.0..=grid.height() as f64).contains(&r) {
            return Err(Error::Range(format!(
                "profile {name} point ({}, {}) lies outside the raster extent",
                p.0, p.1
            )));
        }
    }
    let length = ((p1.0 - p0.0).powi(2) + (p1.1 - p0.1).powi(2)).sqrt();
    Ok((0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            let (x, y) = (p0.0 + f * (p1.0 - p0.0), p0.1 + f * (p1.1 - p0.1));
            let (c, r) = t.pixel(x, y);
            let z = bilinear(grid, c - 0.5, r - 0.5).unwrap_or(f64::NAN);
            let d = if i == n - 1 { length } else { f * length };
            (d, z)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    /// Pixel centres at integer world coordinates, 1 m spacing.
    fn integer_centres(w: usize, h: usize, f: impl Fn(f64, f64) -> f32) -> RasterGrid {
        let t = GeoTransform {
            origin_x: -0.5,
            origin_y: h as f64 - 0.5,
            pixel_size_x: 1.0,
            pixel_size_y: -1.0,
        };
        RasterGrid::from_fn(w, h, t, |c, r| f(c as f64, (h - 1 - r) as f64)).unwrap()
    }

    #[test]
    fn constant_field() {
        let g = integer_centres(8, 8, |_, _| 7.0);
        let p = extract_profile(&g, (0.3, 1.0), (6.2, 5.9), 17).unwrap();
        assert!(p.iter().all(|&(_, z)| (z - 7.0).abs() < 1e-12));
    }

    #[test]
    fn linear_field_is_exact() {
        let g = integer_centres(12, 3, |x, _| x as f32);
        let p = extract_profile(&g, (0.0, 1.0), (10.0, 1.0), 11).unwrap();
        for (i, &(d, z)) in p.iter().enumerate() {
            assert!((d - i as f64).abs() < 1e-12);
            assert!((z - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn two_samples_are_the_endpoints() {
        let g = integer_centres(12, 3, |x, y| (x * 2.0 + y) as f32);
        let p = extract_profile(&g, (1.0, 0.0), (4.0, 2.0), 2).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0].1 - 2.0).abs() < 1e-12);
        assert!((p[1].1 - 10.0).abs() < 1e-12);
        assert!((p[1].0 - 13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn outside_extent_is_a_range_error() {
        let g = integer_centres(4, 4, |_, _| 0.0);
        assert!(matches!(
            extract_profile(&g, (0.0, 0.0), (9.0, 0.0), 5),
            Err(Error::Range(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn bilinear_fields_are_reproduced(
            a in -20.0f64..20.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
            x0 in 0.0f64..15.0, y0 in 0.0f64..15.0, x1 in 0.0f64..15.0, y1 in 0.0f64..15.0,
            n in 2usize..40,
        ) {
            proptest::prop_assume!((x0 - x1).abs() + (y0 - y1).abs() > 1e-6);
            let g = integer_centres(16, 16, |x, y| (a + b * x + c * y) as f32);
            for (i, &(_, z)) in extract_profile(&g, (x0, y0), (x1, y1), n).unwrap().iter().enumerate() {
                let f = i as f64 / (n - 1) as f64;
                let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                let expected = a + b * x + c * y;
                proptest::prop_assert!((z - expected).abs() < 1e-5, "{} vs {}", z, expected);
            }
        }
    }
}
