//! Single-band georeferenced rasters and masks.
//!
//! Pixel values describe pixel centres: pixel `(col, row)` sits at world
//! coordinates `origin + (col + 0.5, row + 0.5) * pixel_size`. Grids are
//! north-up, so `pixel_size_y` is negative and rows run southwards.

mod profile;
mod render;
mod rfg;
mod stats;

pub use profile::extract_profile;
pub use render::{hillshade, render_png, RenderMode, Sun};
pub use rfg::{read_rfg, read_rfm, write_rfg, write_rfm, RFG_HEADER_LEN};
pub use stats::{compute_stats, RasterStats};

use crate::error::{Error, Result};

/// Affine pixel-to-world mapping without rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    /// North-up transform with square pixels of `pixel_size` metres.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Self {
        GeoTransform {
            origin_x,
            origin_y,
            pixel_size_x: pixel_size,
            pixel_size_y: -pixel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let terms = [
            self.origin_x,
            self.origin_y,
            self.pixel_size_x,
            self.pixel_size_y,
        ];
        if terms.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite geotransform {self:?}"
            )));
        }
        if self.pixel_size_x <= 0.0 || self.pixel_size_y >= 0.0 {
            return Err(Error::Validation(format!(
                "geotransform needs pixel_size_x > 0 and pixel_size_y < 0, got {} / {}",
                self.pixel_size_x, self.pixel_size_y
            )));
        }
        Ok(())
    }

    /// World coordinates of a (fractional) pixel corner position.
    pub fn world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size_x,
            self.origin_y + row * self.pixel_size_y,
        )
    }

    /// Inverse of [`GeoTransform::world`].
    pub fn pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size_x,
            (y - self.origin_y) / self.pixel_size_y,
        )
    }

    /// GDAL-ordered coefficient array, rotation terms zero.
    pub fn coefficients(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_size_x,
            0.0,
            self.origin_y,
            0.0,
            self.pixel_size_y,
        ]
    }

    pub fn from_coefficients(c: [f64; 6]) -> Result<Self> {
        if c[2] != 0.0 || c[4] != 0.0 {
            return Err(Error::Validation(format!(
                "rotated geotransform {c:?} is not supported"
            )));
        }
        let t = GeoTransform {
            origin_x: c[0],
            pixel_size_x: c[1],
            origin_y: c[3],
            pixel_size_y: c[5],
        };
        t.validate()?;
        Ok(t)
    }
}

impl Default for GeoTransform {
    fn default() -> Self {
        GeoTransform::north_up(0.0, 0.0, 0.5)
    }
}

/// Row-major single-band grid of `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    transform: GeoTransform,
    nodata: f32,
    values: Vec<f32>,
}

pub const DEFAULT_NODATA: f32 = -9999.0;

impl RasterGrid {
    pub fn new(
        width: usize,
        height: usize,
        transform: GeoTransform,
        nodata: f32,
        values: Vec<f32>,
    ) -> Result<Self> {
        let g = RasterGrid {
            width,
            height,
            transform,
            nodata,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn filled(
        width: usize,
        height: usize,
        transform: GeoTransform,
        value: f32,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            transform,
            DEFAULT_NODATA,
            vec![value; width * height],
        )
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        transform: GeoTransform,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(col, row));
            }
        }
        Self::new(width, height, transform, DEFAULT_NODATA, values)
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        if self.nodata.is_nan() {
            return Err(Error::Validation("nodata sentinel must not be NaN".into()));
        }
        if self.values.len() != self.width * self.height {
            return Err(Error::Validation(format!(
                "{} values for a {}x{} grid",
                self.values.len(),
                self.width,
                self.height
            )));
        }
        if let Some(i) = self
            .values
            .iter()
            .position(|&v| v != self.nodata && !v.is_finite())
        {
            return Err(Error::Validation(format!(
                "non-finite value {} at pixel ({}, {})",
                self.values[i],
                i % self.width.max(1),
                i / self.width.max(1)
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.values[i] != self.nodata
    }

    /// Same georeferencing, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Self::new(self.width, self.height, self.transform, self.nodata, values)
    }

    pub fn same_grid(&self, width: usize, height: usize, transform: &GeoTransform) -> bool {
        self.width == width && self.height == height && self.transform == *transform
    }

    /// Errors unless `other` shares extent and transform.
    pub fn check_aligned(&self, other: &RasterGrid, what: &str) -> Result<()> {
        if !self.same_grid(other.width, other.height, &other.transform) {
            return Err(Error::Alignment(format!(
                "{what}: {}x{} {:?} vs {}x{} {:?}",
                self.width, self.height, self.transform, other.width, other.height, other.transform
            )));
        }
        Ok(())
    }

    /// Pixel spacing in metres along columns and rows.
    pub fn spacing(&self) -> (f64, f64) {
        (self.transform.pixel_size_x, -self.transform.pixel_size_y)
    }

    /// Copy of the window `[col0, col0+w) x [row0, row0+h)`.
    pub fn window(&self, col0: usize, row0: usize, w: usize, h: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(w * h);
        for r in row0..row0 + h {
            out.extend_from_slice(&self.values[r * self.width + col0..r * self.width + col0 + w]);
        }
        out
    }
}

/// Binary per-pixel mask aligned with a [`RasterGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGrid {
    width: usize,
    height: usize,
    transform: GeoTransform,
    values: Vec<u8>,
}

impl MaskGrid {
    pub fn new(
        width: usize,
        height: usize,
        transform: GeoTransform,
        values: Vec<u8>,
    ) -> Result<Self> {
        transform.validate()?;
        if values.len() != width * height {
            return Err(Error::Validation(format!(
                "{} mask values for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::Validation(format!(
                "mask value {} at index {i} is not 0/1",
                values[i]
            )));
        }
        Ok(MaskGrid {
            width,
            height,
            transform,
            values,
        })
    }

    pub fn empty_like(grid: &RasterGrid) -> Self {
        MaskGrid {
            width: grid.width,
            height: grid.height,
            transform: grid.transform,
            values: vec![0; grid.width * grid.height],
        }
    }

    pub fn full_like(grid: &RasterGrid) -> Self {
        MaskGrid {
            values: vec![1; grid.width * grid.height],
            ..Self::empty_like(grid)
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.values[row * self.width + col] != 0
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn check_masks(&self, grid: &RasterGrid) -> Result<()> {
        if !grid.same_grid(self.width, self.height, &self.transform) {
            return Err(Error::Alignment(format!(
                "mask {}x{} {:?} does not match raster {}x{} {:?}",
                self.width, self.height, self.transform, grid.width, grid.height, grid.transform
            )));
        }
        Ok(())
    }

    /// Pixel-wise union.
    pub fn union(&self, other: &MaskGrid) -> Result<MaskGrid> {
        if self.width != other.width
            || self.height != other.height
            || self.transform != other.transform
        {
            return Err(Error::Alignment("union of misaligned masks".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a | b)
            .collect();
        MaskGrid::new(self.width, self.height, self.transform, values)
    }
}
