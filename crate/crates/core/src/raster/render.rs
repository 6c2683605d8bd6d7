use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

use super::{compute_stats, RasterGrid};

/// Direction of incoming light. Azimuth is clockwise from north.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sun {
    pub azimuth_deg: f64,
    pub altitude_deg: f64,
}

impl Default for Sun {
    fn default() -> Self {
        Sun {
            azimuth_deg: 315.0,
            altitude_deg: 45.0,
        }
    }
}

impl Sun {
    /// Unit vector towards the sun in (east, north, up).
    pub fn vector(&self) -> [f64; 3] {
        let az = self.azimuth_deg.to_radians();
        let alt = self.altitude_deg.to_radians();
        [alt.cos() * az.sin(), alt.cos() * az.cos(), alt.sin()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenderMode {
    Hillshade(Sun),
    Colormap,
}

const NODATA_GRAY: u8 = 0;
const NODATA_RGB: [u8; 3] = [255, 0, 255];

/// Lambertian shading `max(0, <n, s>)` per pixel with normals from central
/// differences (one-sided at the border). Nodata pixels, and pixels whose
/// stencil touches nodata, yield NaN.
pub fn hillshade(grid: &RasterGrid, sun: Sun) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let (sx, sy) = grid.spacing();
    let s = sun.vector();
    let nodata = grid.nodata();
    let mut out = vec![f64::NAN; w * h];
    for r in 0..h {
        for c in 0..w {
            if grid.get(c, r) == nodata {
                continue;
            }
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            let samples = [
                grid.get(cl, r),
                grid.get(cr, r),
                grid.get(c, ru),
                grid.get(c, rd),
            ];
            if samples.contains(&nodata) {
                continue;
            }
            let dzdx = if cr > cl {
                (samples[1] - samples[0]) as f64 / ((cr - cl) as f64 * sx)
            } else {
                0.0
            };
            // rows run south, so north is towards smaller row indices
            let dzdn = if rd > ru {
                (samples[2] - samples[3]) as f64 / ((rd - ru) as f64 * sy)
            } else {
                0.0
            };
            let norm = (dzdx * dzdx + dzdn * dzdn + 1.0).sqrt();
            let dot = (-dzdx * s[0] - dzdn * s[1] + s[2]) / norm;
            out[r * w + c] = dot.max(0.0);
        }
    }
    out
}

/// Colour at position `t` in `[0, 1]` along a blue-green-yellow-red ramp.
pub(crate) fn colormap(t: f64) -> [u8; 3] {
    const ANCHORS: [(f64, [f64; 3]); 5] = [
        (0.0, [48.0, 18.0, 160.0]),
        (0.25, [30.0, 140.0, 220.0]),
        (0.5, [60.0, 190.0, 90.0]),
        (0.75, [240.0, 210.0, 40.0]),
        (1.0, [200.0, 30.0, 20.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let k = ANCHORS
        .iter()
        .position(|&(p, _)| p >= t)
        .unwrap_or(ANCHORS.len() - 1)
        .max(1);
    let (p0, c0) = ANCHORS[k - 1];
    let (p1, c1) = ANCHORS[k];
    let f = (t - p0) / (p1 - p0);
    let mut rgb = [0u8; 3];
    for i in 0..3 {
        rgb[i] = (c0[i] + f * (c1[i] - c0[i])).round() as u8;
    }
    rgb
}

fn save(result: image::ImageResult<()>, out: &Path) -> Result<()> {
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(out, io),
        other => Error::Render(other.to_string()),
    })
}

/// Writes an 8-bit PNG of the grid's pixel dimensions: grayscale for
/// hillshade, RGB for the height colormap.
pub fn render_png(grid: &RasterGrid, mode: RenderMode, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    let stats = compute_stats(grid, None)
        .map_err(|_| Error::Render("raster has no valid pixels to render".into()))?;
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    match mode {
        RenderMode::Hillshade(sun) => {
            let shade = hillshade(grid, sun);
            let img = GrayImage::from_fn(w, h, |c, r| {
                let v = shade[(r * w + c) as usize];
                Luma([if v.is_nan() {
                    NODATA_GRAY
                } else {
                    (v * 254.0).round() as u8 + 1
                }])
            });
            save(img.save_with_format(out, ImageFormat::Png), out)
        }
        RenderMode::Colormap => {
            let (lo, hi) = (stats.min as f64, stats.max as f64);
            let span = hi - lo;
            let img = RgbImage::from_fn(w, h, |c, r| {
                let v = grid.get(c as usize, r as usize);
                if v == grid.nodata() {
                    return Rgb(NODATA_RGB);
                }
                let t = if span > 0.0 {
                    (v as f64 - lo) / span
                } else {
                    0.5
                };
                Rgb(colormap_entry(t))
            });
            save(img.save_with_format(out, ImageFormat::Png), out)
        }
    }
}

/// Quantized 256-entry lookup of [`colormap`].
pub(crate) fn colormap_entry(t: f64) -> [u8; 3] {
    let idx = (t.clamp(0.0, 1.0) * 255.0).round();
    colormap(idx / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> RasterGrid {
        RasterGrid::from_fn(w, h, GeoTransform::north_up(0.0, 0.0, 1.0), f).unwrap()
    }

    #[test]
    fn flat_surface_is_uniform() {
        let g = plane(9, 7, |_, _| 12.0);
        let s = hillshade(&g, Sun::default());
        let expected = 45f64.to_radians().sin();
        assert!(s.iter().all(|&v| (v - expected).abs() < 1e-12));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flat.png");
        render_png(&g, RenderMode::Hillshade(Sun::default()), &p).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (9, 7));
        let first = img.get_pixel(0, 0)[0];
        assert!(img.pixels().all(|p| p[0] == first));
        assert!(first > 64 && first < 224);
    }

    #[test]
    fn west_and_east_light_mirror() {
        let w = 11;
        let west = Sun {
            azimuth_deg: 270.0,
            altitude_deg: 40.0,
        };
        let east = Sun {
            azimuth_deg: 90.0,
            altitude_deg: 40.0,
        };
        let field = |c: usize, r: usize| {
            (c as f32) + 0.3 * ((c * c) as f32).sqrt() * (r as f32 * 0.4).sin()
        };
        let g = plane(w, 6, field);
        let mirrored = plane(w, 6, |c, r| field(w - 1 - c, r));
        let a = hillshade(&g, west);
        let b = hillshade(&mirrored, east);
        for r in 0..6 {
            for c in 0..w {
                assert!((a[r * w + c] - b[r * w + w - 1 - c]).abs() < 1e-12);
            }
        }
        // an inclined plane h = x faces west: lit from the west, dark from the east
        let p = plane(w, 6, |c, _| c as f32);
        assert!(hillshade(&p, west)[20] > hillshade(&p, east)[20]);
    }

    #[test]
    fn colormap_endpoints() {
        let g = plane(3, 1, |c, _| [0.0, 5.0, 10.0][c]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        render_png(&g, RenderMode::Colormap, &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(2, 0).0, colormap(1.0));
        assert_eq!(img.get_pixel(0, 0).0, colormap(0.0));
    }

    #[test]
    fn all_nodata_cannot_render() {
        let g = RasterGrid::new(2, 2, GeoTransform::default(), -1.0, vec![-1.0; 4]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            render_png(&g, RenderMode::Colormap, dir.path().join("x.png")),
            Err(Error::Render(_))
        ));
    }
}
