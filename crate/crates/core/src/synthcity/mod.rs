//! Procedural desk-scale scenes: a clean prism-city ground truth, a degraded
//! photogrammetric-like copy, a shaded panchromatic surrogate and the
//! building footprint mask, all on one grid.

mod buildings;
mod degrade;
mod pan;
mod sidecar;

pub use buildings::{Building, Rect, RoofKind};
pub use degrade::degrade_dsm;
pub use pan::{render_pan, PanConfig};
pub use sidecar::{parse_sidecar, sidecar_text, SIDECAR_FILE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, MaskGrid, RasterGrid};

/// Ground-truth scene parameters. Lengths are metres unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Width and height in pixels.
    pub scene_size: usize,
    pub pixel_size: f64,
    pub n_buildings: usize,
    pub building_min: f64,
    pub building_max: f64,
    pub eave_min: f64,
    pub eave_max: f64,
    pub ridge_min: f64,
    pub ridge_max: f64,
    pub flat_fraction: f64,
    pub gabled_fraction: f64,
    /// Share of flat-roofed buildings that get an L-shaped footprint.
    pub l_shape_fraction: f64,
    pub base_height: f64,
    pub terrain_amplitude: f64,
    pub seed: u64,
}

impl SceneConfig {
    /// Defaults scaled to the scene: building sides never exceed a quarter
    /// of the extent.
    pub fn desk(scene_size: usize, n_buildings: usize, seed: u64) -> Self {
        let pixel_size = 0.5;
        let building_max = (scene_size as f64 * pixel_size / 4.0).min(36.0);
        SceneConfig {
            scene_size,
            pixel_size,
            n_buildings,
            building_min: (building_max * 0.5).min(10.0),
            building_max,
            eave_min: 6.0,
            eave_max: 24.0,
            ridge_min: 2.0,
            ridge_max: 5.0,
            flat_fraction: 0.5,
            gabled_fraction: 0.5,
            l_shape_fraction: 0.3,
            base_height: 34.0,
            terrain_amplitude: 3.0,
            seed,
        }
    }

    pub fn max_footprint_px(&self) -> usize {
        (self.building_max / self.pixel_size).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.pixel_size,
            self.building_min,
            self.building_max,
            self.eave_min,
            self.eave_max,
            self.ridge_min,
            self.ridge_max,
            self.flat_fraction,
            self.gabled_fraction,
            self.l_shape_fraction,
            self.base_height,
            self.terrain_amplitude,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "scene config contains a non-finite value".into(),
            ));
        }
        if self.scene_size == 0 || self.pixel_size <= 0.0 {
            return Err(Error::Config(
                "scene size and pixel size must be positive".into(),
            ));
        }
        let ranges = [
            ("building size", self.building_min, self.building_max),
            ("eave height", self.eave_min, self.eave_max),
            ("ridge rise", self.ridge_min, self.ridge_max),
        ];
        for (name, lo, hi) in ranges {
            if lo < 0.0 || hi < lo {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if self.building_min < 2.0 * self.pixel_size {
            return Err(Error::Config(
                "buildings must span at least two pixels".into(),
            ));
        }
        let mix = [
            self.flat_fraction,
            self.gabled_fraction,
            self.l_shape_fraction,
        ];
        if mix.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.flat_fraction + self.gabled_fraction - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(
                "roof proportions must lie in [0, 1] and sum to 1".into(),
            ));
        }
        if self.terrain_amplitude < 0.0 {
            return Err(Error::Config(
                "terrain amplitude must be non-negative".into(),
            ));
        }
        if self.n_buildings > 0 && self.scene_size < 4 * self.max_footprint_px() {
            return Err(Error::Config(format!(
                "scene of {} px is smaller than 4 x the largest footprint ({} px)",
                self.scene_size,
                self.max_footprint_px()
            )));
        }
        Ok(())
    }

    pub fn transform(&self) -> GeoTransform {
        GeoTransform::north_up(
            0.0,
            self.scene_size as f64 * self.pixel_size,
            self.pixel_size,
        )
    }
}

/// Degradations applied to the ground truth. Lengths are metres unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradeConfig {
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_min: f64,
    pub outlier_max: f64,
    pub vegetation_count: usize,
    pub vegetation_height_min: f64,
    pub vegetation_height_max: f64,
    pub vegetation_radius_min: f64,
    pub vegetation_radius_max: f64,
    pub seed: u64,
}

pub const DEGRADE_PRESETS: [&str; 4] = ["none", "mild", "moderate", "severe"];

impl DegradeConfig {
    pub fn none(seed: u64) -> Self {
        DegradeConfig {
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_min: 0.0,
            outlier_max: 0.0,
            vegetation_count: 0,
            vegetation_height_min: 0.0,
            vegetation_height_max: 0.0,
            vegetation_radius_min: 0.0,
            vegetation_radius_max: 0.0,
            seed,
        }
    }

    /// Named degradation levels; `None` for an unknown name.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let (blur, noise, outliers, veg) = match name {
            "none" => return Some(Self::none(seed)),
            "mild" => (1.0, 0.3, 0.002, 4),
            "moderate" => (2.0, 0.6, 0.005, 8),
            "severe" => (3.0, 1.0, 0.01, 14),
            _ => return None,
        };
        Some(DegradeConfig {
            blur_sigma: blur,
            noise_sigma: noise,
            outlier_fraction: outliers,
            outlier_min: 3.0,
            outlier_max: 12.0,
            vegetation_count: veg,
            vegetation_height_min: 4.0,
            vegetation_height_max: 12.0,
            vegetation_radius_min: 2.0,
            vegetation_radius_max: 5.0,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.blur_sigma,
            self.noise_sigma,
            self.outlier_fraction,
            self.outlier_min,
            self.outlier_max,
            self.vegetation_height_min,
            self.vegetation_height_max,
            self.vegetation_radius_min,
            self.vegetation_radius_max,
        ];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "degradation magnitudes must be finite and non-negative".into(),
            ));
        }
        if self.outlier_fraction > 1.0 {
            return Err(Error::Config(format!(
                "outlier fraction {} exceeds 1",
                self.outlier_fraction
            )));
        }
        for (name, lo, hi) in [
            ("outlier magnitude", self.outlier_min, self.outlier_max),
            (
                "vegetation height",
                self.vegetation_height_min,
                self.vegetation_height_max,
            ),
            (
                "vegetation radius",
                self.vegetation_radius_min,
                self.vegetation_radius_max,
            ),
        ] {
            if hi < lo {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] is inverted"
                )));
            }
        }
        Ok(())
    }
}

/// Aligned rasters of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTriple {
    pub pan: RasterGrid,
    pub dsm_photo: RasterGrid,
    pub dsm_gt: RasterGrid,
    pub mask: MaskGrid,
}

impl SceneTriple {
    pub fn new(
        pan: RasterGrid,
        dsm_photo: RasterGrid,
        dsm_gt: RasterGrid,
        mask: MaskGrid,
    ) -> Result<Self> {
        dsm_gt.check_aligned(&pan, "PAN vs ground truth")?;
        dsm_gt.check_aligned(&dsm_photo, "input DSM vs ground truth")?;
        mask.check_masks(&dsm_gt)?;
        Ok(SceneTriple {
            pan,
            dsm_photo,
            dsm_gt,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.dsm_gt.width()
    }

    pub fn height(&self) -> usize {
        self.dsm_gt.height()
    }
}

/// Smooth terrain as a sum of Gaussian bumps, in metres.
pub fn terrain_field(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.scene_size;
    let extent = n as f64 * cfg.pixel_size;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let cx = rng.random::<f64>() * extent;
            let cy = rng.random::<f64>() * extent;
            let s = rng.random_range(0.15..0.4) * extent;
            let a = rng.random_range(-1.0..=1.0) * cfg.terrain_amplitude;
            (cx, cy, s, a)
        })
        .collect();
    let mut field = vec![cfg.base_height; n * n];
    if cfg.terrain_amplitude == 0.0 {
        return field;
    }
    for r in 0..n {
        let y = (r as f64 + 0.5) * cfg.pixel_size;
        for c in 0..n {
            let x = (c as f64 + 0.5) * cfg.pixel_size;
            let bump: f64 = bumps
                .iter()
                .map(|&(cx, cy, s, a)| {
                    a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
                })
                .sum();
            field[r * n + c] += bump;
        }
    }
    field
}

/// Seed offset separating the PAN noise stream from scene geometry.
const PAN_STREAM: u64 = 0x5041_4e00;

/// Builds one scene. Geometry and PAN depend on `cfg.seed`, the input DSM
/// additionally on `deg.seed`.
pub fn generate_scene(cfg: &SceneConfig, deg: &DegradeConfig) -> Result<SceneTriple> {
    cfg.validate()?;
    deg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let terrain = terrain_field(cfg, &mut rng);
    let buildings = buildings::place_buildings(cfg, &mut rng)?;
    let n = cfg.scene_size;
    let mut heights = terrain.clone();
    let mut mask = vec![0u8; n * n];
    for b in &buildings {
        b.extrude(&terrain, n, &mut heights, &mut mask);
    }
    let t = cfg.transform();
    let gt = RasterGrid::from_fn(n, n, t, |c, r| heights[r * n + c] as f32)?;
    let mask = MaskGrid::new(n, n, t, mask)?;
    let photo = degrade_dsm(&gt, deg)?;
    let pan = render_pan(
        &gt,
        &mask,
        &PanConfig {
            seed: cfg.seed ^ PAN_STREAM,
            ..PanConfig::default()
        },
    )?;
    SceneTriple::new(pan, photo, gt, mask)
}
