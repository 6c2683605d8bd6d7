use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{DegradeConfig, SceneConfig};

/// Name of the per-scene configuration file written next to the rasters.
pub const SIDECAR_FILE: &str = "scene.cfg";

/// Line-oriented `key=value` record of both configurations.
pub fn sidecar_text(cfg: &SceneConfig, deg: &DegradeConfig) -> String {
    let lines = [
        ("scene.size", cfg.scene_size.to_string()),
        ("scene.pixel_size", cfg.pixel_size.to_string()),
        ("scene.n_buildings", cfg.n_buildings.to_string()),
        ("scene.building_min", cfg.building_min.to_string()),
        ("scene.building_max", cfg.building_max.to_string()),
        ("scene.eave_min", cfg.eave_min.to_string()),
        ("scene.eave_max", cfg.eave_max.to_string()),
        ("scene.ridge_min", cfg.ridge_min.to_string()),
        ("scene.ridge_max", cfg.ridge_max.to_string()),
        ("scene.flat_fraction", cfg.flat_fraction.to_string()),
        ("scene.gabled_fraction", cfg.gabled_fraction.to_string()),
        ("scene.l_shape_fraction", cfg.l_shape_fraction.to_string()),
        ("scene.base_height", cfg.base_height.to_string()),
        ("scene.terrain_amplitude", cfg.terrain_amplitude.to_string()),
        ("scene.seed", cfg.seed.to_string()),
        ("degrade.blur_sigma", deg.blur_sigma.to_string()),
        ("degrade.noise_sigma", deg.noise_sigma.to_string()),
        ("degrade.outlier_fraction", deg.outlier_fraction.to_string()),
        ("degrade.outlier_min", deg.outlier_min.to_string()),
        ("degrade.outlier_max", deg.outlier_max.to_string()),
        ("degrade.vegetation_count", deg.vegetation_count.to_string()),
        (
            "degrade.vegetation_height_min",
            deg.vegetation_height_min.to_string(),
        ),
        (
            "degrade.vegetation_height_max",
            deg.vegetation_height_max.to_string(),
        ),
        (
            "degrade.vegetation_radius_min",
            deg.vegetation_radius_min.to_string(),
        ),
        (
            "degrade.vegetation_radius_max",
            deg.vegetation_radius_max.to_string(),
        ),
        ("degrade.seed", deg.seed.to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .0
            .get(key)
            .ok_or_else(|| Error::Format(format!("sidecar lacks key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("sidecar key `{key}` has malformed value `{raw}`")))
    }
}

/// Inverse of [`sidecar_text`]. Blank lines and `#` comments are ignored;
/// unknown keys are kept out of the result.
pub fn parse_sidecar(text: &str) -> Result<(SceneConfig, DegradeConfig)> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("sidecar line {} is not key=value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let f = Fields(map);
    let cfg = SceneConfig {
        scene_size: f.get("scene.size")?,
        pixel_size: f.get("scene.pixel_size")?,
        n_buildings: f.get("scene.n_buildings")?,
        building_min: f.get("scene.building_min")?,
        building_max: f.get("scene.building_max")?,
        eave_min: f.get("scene.eave_min")?,
        eave_max: f.get("scene.eave_max")?,
        ridge_min: f.get("scene.ridge_min")?,
        ridge_max: f.get("scene.ridge_max")?,
        flat_fraction: f.get("scene.flat_fraction")?,
        gabled_fraction: f.get("scene.gabled_fraction")?,
        l_shape_fraction: f.get("scene.l_shape_fraction")?,
        base_height: f.get("scene.base_height")?,
        terrain_amplitude: f.get("scene.terrain_amplitude")?,
        seed: f.get("scene.seed")?,
    };
    let deg = DegradeConfig {
        blur_sigma: f.get("degrade.blur_sigma")?,
        noise_sigma: f.get("degrade.noise_sigma")?,
        outlier_fraction: f.get("degrade.outlier_fraction")?,
        outlier_min: f.get("degrade.outlier_min")?,
        outlier_max: f.get("degrade.outlier_max")?,
        vegetation_count: f.get("degrade.vegetation_count")?,
        vegetation_height_min: f.get("degrade.vegetation_height_min")?,
        vegetation_height_max: f.get("degrade.vegetation_height_max")?,
        vegetation_radius_min: f.get("degrade.vegetation_radius_min")?,
        vegetation_radius_max: f.get("degrade.vegetation_radius_max")?,
        seed: f.get("degrade.seed")?,
    };
    Ok((cfg, deg))
}
