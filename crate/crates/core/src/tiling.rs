//! Mapping rasters into the generator's `[-1, 1]` range, random training
//! windows, the half-overlap inference plan and weighted stitching.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{RasterGrid, RasterStats};
use crate::scalar::Scalar;
use crate::synthcity::SceneTriple;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Height,
    Intensity,
}

/// Affine map of `[lo, hi]` onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub lo: f64,
    pub hi: f64,
}

impl NormSpec {
    pub fn new(kind: NormKind, lo: f64, hi: f64) -> Result<Self> {
        let s = NormSpec { kind, lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(Error::Config(format!(
                "normalization range [{}, {}] needs hi > lo",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// `2 (x - lo) / (hi - lo) - 1`, clamped to `[-1, 1]`.
    pub fn forward(&self, x: f64) -> f64 {
        (2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y + 1.0) * 0.5 * (self.hi - self.lo) + self.lo
    }

    /// Metres (or intensity units) per normalized unit.
    pub fn half_range(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Height mapping from the 1st/99th percentiles of all given grids,
    /// widened by 5 % of the range on both sides.
    pub fn fit_heights(grids: &[&RasterGrid]) -> Result<Self> {
        let (lo, hi) = joint_percentiles(grids)?;
        let pad = 0.05 * (hi - lo).max(1e-3);
        NormSpec::new(NormKind::Height, lo - pad, hi + pad)
    }

    /// Intensity stretch between the 1st and 99th percentiles.
    pub fn fit_intensity(grids: &[&RasterGrid]) -> Result<Self> {
        let (lo, hi) = joint_percentiles(grids)?;
        NormSpec::new(NormKind::Intensity, lo, if hi > lo { hi } else { lo + 1.0 })
    }
}

fn joint_percentiles(grids: &[&RasterGrid]) -> Result<(f64, f64)> {
    let values: Vec<f32> = grids
        .iter()
        .flat_map(|g| g.values().iter().copied().filter(move |&v| v != g.nodata()))
        .collect();
    let stats = RasterStats::from_values(values)?;
    Ok((stats.percentile(1.0), stats.percentile(99.0)))
}

pub fn normalize<T: Scalar>(values: &[T], spec: &NormSpec) -> Result<Vec<T>> {
    spec.validate()?;
    Ok(values
        .iter()
        .map(|v| T::c(spec.forward(v.as_f64())))
        .collect())
}

pub fn denormalize<T: Scalar>(values: &[T], spec: &NormSpec) -> Result<Vec<T>> {
    spec.validate()?;
    Ok(values
        .iter()
        .map(|v| T::c(spec.inverse(v.as_f64())))
        .collect())
}

/// Height and intensity mappings used together by training and inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormPair {
    pub height: NormSpec,
    pub intensity: NormSpec,
}

impl NormPair {
    /// Fits both mappings to a training split: heights jointly over ground
    /// truth and input DSMs, intensities over the PAN images.
    pub fn fit(scenes: &[SceneTriple]) -> Result<Self> {
        let heights: Vec<&RasterGrid> = scenes
            .iter()
            .flat_map(|s| [&s.dsm_gt, &s.dsm_photo])
            .collect();
        let pans: Vec<&RasterGrid> = scenes.iter().map(|s| &s.pan).collect();
        Ok(NormPair {
            height: NormSpec::fit_heights(&heights)?,
            intensity: NormSpec::fit_intensity(&pans)?,
        })
    }
}

/// Square pixel window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileWindow {
    pub col0: usize,
    pub row0: usize,
    pub size: usize,
}

/// Normalized `1 x 1 x P x P` patches cut from one window of a scene.
#[derive(Clone, Debug)]
pub struct PatchTriple {
    pub pan: Tensor<f32>,
    pub dsm: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub window: TileWindow,
}

/// Normalized window of `grid` as a `1 x 1 x P x P` tensor.
pub fn cut_patch(grid: &RasterGrid, window: TileWindow, spec: &NormSpec) -> Result<Tensor<f32>> {
    let raw = grid.window(window.col0, window.row0, window.size, window.size);
    Tensor::from_vec(
        Shape::new(1, 1, window.size, window.size),
        normalize(&raw, spec)?,
    )
}

/// Draws a window uniformly over all valid top-left positions and cuts the
/// three channels from it.
pub fn sample_training_patch<R: Rng + ?Sized>(
    scene: &SceneTriple,
    patch: usize,
    norms: &NormPair,
    rng: &mut R,
) -> Result<PatchTriple> {
    let (w, h) = (scene.dsm_gt.width(), scene.dsm_gt.height());
    if patch == 0 || w < patch || h < patch {
        return Err(Error::Shape(format!(
            "scene {w}x{h} is smaller than patch {patch}"
        )));
    }
    let col0 = rng.random_range(0..=w - patch);
    let row0 = rng.random_range(0..=h - patch);
    let window = TileWindow {
        col0,
        row0,
        size: patch,
    };
    Ok(PatchTriple {
        pan: cut_patch(&scene.pan, window, &norms.intensity)?,
        dsm: cut_patch(&scene.dsm_photo, window, &norms.height)?,
        gt: cut_patch(&scene.dsm_gt, window, &norms.height)?,
        window,
    })
}

fn axis_offsets(extent: usize, patch: usize) -> Vec<usize> {
    let stride = patch / 2;
    let mut offsets = vec![0];
    loop {
        let last = *offsets.last().expect("non-empty");
        if last + patch >= extent {
            break;
        }
        offsets.push((last + stride).min(extent - patch));
    }
    offsets
}

/// Row-major windows with stride `patch / 2`; the last row and column are
/// clamped flush to the extent.
pub fn plan_inference_tiles(width: usize, height: usize, patch: usize) -> Result<Vec<TileWindow>> {
    if patch == 0 || !patch.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "patch size {patch} must be even and positive"
        )));
    }
    if width < patch || height < patch {
        return Err(Error::Shape(format!(
            "extent {width}x{height} is smaller than patch {patch}"
        )));
    }
    let cols = axis_offsets(width, patch);
    let rows = axis_offsets(height, patch);
    Ok(rows
        .iter()
        .flat_map(|&row0| {
            cols.iter().map(move |&col0| TileWindow {
                col0,
                row0,
                size: patch,
            })
        })
        .collect())
}

/// Lower bound on blending weights so that border pixels covered by a
/// single tile keep a well-defined value.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Raised-cosine profile of one tile axis.
pub fn hann_weights(size: usize) -> Vec<f64> {
    (0..size)
        .map(|i| {
            (PI * (i as f64 + 0.5) / size as f64)
                .sin()
                .powi(2)
                .max(WEIGHT_FLOOR)
        })
        .collect()
}

/// Blends per-window predictions into a `width x height` raster with
/// separable Hann weights. Tiles may arrive in any order; accumulation
/// follows the plan order so the result does not depend on it.
pub fn stitch(tiles: &[(TileWindow, Vec<f32>)], width: usize, height: usize) -> Result<Vec<f32>> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Coverage("no tiles to stitch".into()))?;
    let patch = first.0.size;
    let plan = plan_inference_tiles(width, height, patch)?;
    let mut by_window: HashMap<TileWindow, &Vec<f32>> = HashMap::with_capacity(tiles.len());
    for (win, values) in tiles {
        if values.len() != win.size * win.size {
            return Err(Error::Shape(format!(
                "tile {win:?} carries {} values",
                values.len()
            )));
        }
        if by_window.insert(*win, values).is_some() {
            return Err(Error::Coverage(format!(
                "duplicate tile for window {win:?}"
            )));
        }
    }
    if by_window.len() != plan.len() {
        if let Some(extra) = tiles.iter().find(|(w, _)| !plan.contains(w)) {
            return Err(Error::Coverage(format!(
                "tile {:?} is not part of the plan",
                extra.0
            )));
        }
    }
    let weights = hann_weights(patch);
    let mut num = vec![0.0f64; width * height];
    let mut den = vec![0.0f64; width * height];
    for win in &plan {
        let values = by_window
            .get(win)
            .ok_or_else(|| Error::Coverage(format!("missing tile for window {win:?}")))?;
        for r in 0..patch {
            let row = (win.row0 + r) * width + win.col0;
            for c in 0..patch {
                let w = weights[r] * weights[c];
                num[row + c] += w * values[r * patch + c] as f64;
                den[row + c] += w;
            }
        }
    }
    Ok(num.iter().zip(&den).map(|(n, d)| (n / d) as f32).collect())
}
