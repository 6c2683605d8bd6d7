use crate::error::{Error, Result};

use super::{MaskGrid, RasterGrid};

/// Order statistics over the valid (and in-mask) pixels of a raster.
#[derive(Clone, Debug)]
pub struct RasterStats {
    pub min: f32,
    pub max: f32,
    sorted: Vec<f32>,
}

impl RasterStats {
    pub fn from_values(mut values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDomain("no valid pixels".into()));
        }
        values.sort_by(f32::total_cmp);
        Ok(RasterStats {
            min: values[0],
            max: values[values.len() - 1],
            sorted: values,
        })
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    /// Percentile `p` in `[0, 100]`, interpolating linearly between order
    /// statistics at rank `p/100 * (n-1)`.
    pub fn percentile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 100.0);
        let rank = p / 100.0 * (self.sorted.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        let (a, b) = (self.sorted[lo] as f64, self.sorted[hi] as f64);
        if lo == hi {
            a
        } else {
            a + (b - a) * frac
        }
    }
}

pub fn compute_stats(grid: &RasterGrid, mask: Option<&MaskGrid>) -> Result<RasterStats> {
    if let Some(m) = mask {
        m.check_masks(grid)?;
    }
    let values: Vec<f32> = grid
        .values()
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v != grid.nodata() && mask.is_none_or(|m| m.values()[i] != 0))
        .map(|(_, &v)| v)
        .collect();
    RasterStats::from_values(values)
}
