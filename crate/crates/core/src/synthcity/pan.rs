use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::raster::{hillshade, MaskGrid, RasterGrid, Sun};

/// Shading parameters of the panchromatic surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct PanConfig {
    pub sun: Sun,
    pub ground_albedo: f64,
    pub roof_albedo_min: f64,
    pub roof_albedo_max: f64,
    /// Brightness factor on footprint boundary pixels.
    pub edge_factor: f64,
    /// Sensor noise in grey levels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PanConfig {
    fn default() -> Self {
        PanConfig {
            sun: Sun::default(),
            ground_albedo: 0.45,
            roof_albedo_min: 0.55,
            roof_albedo_max: 0.95,
            edge_factor: 0.45,
            noise_sigma: 2.0,
            seed: 0,
        }
    }
}

/// 4-connected component labels of the mask, numbered from 1 in scan order.
fn label_components(mask: &MaskGrid) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.values()[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.values()[j] != 0 && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
    }
    (labels, next)
}

/// Grey-level image in `[0, 255]`: hillshade of the ground truth times a
/// per-roof albedo, darkened along footprint outlines, plus sensor noise.
pub fn render_pan(gt: &RasterGrid, mask: &MaskGrid, cfg: &PanConfig) -> Result<RasterGrid> {
    mask.check_masks(gt)?;
    let (w, h) = (gt.width(), gt.height());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (labels, n_roofs) = label_components(mask);
    let roof_albedo: Vec<f64> = (0..n_roofs)
        .map(|_| rng.random_range(cfg.roof_albedo_min..=cfg.roof_albedo_max))
        .collect();
    let shade = hillshade(gt, cfg.sun);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("non-negative sigma");
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let l = labels[i];
            let albedo = if l == 0 {
                cfg.ground_albedo
            } else {
                roof_albedo[l as usize - 1]
            };
            let boundary = [
                (c > 0).then(|| labels[i - 1]),
                (c + 1 < w).then(|| labels[i + 1]),
                (r > 0).then(|| labels[i - w]),
                (r + 1 < h).then(|| labels[i + w]),
            ]
            .iter()
            .flatten()
            .any(|&n| n != l);
            let s = if shade[i].is_nan() { 0.0 } else { shade[i] };
            let mut v = 255.0 * albedo * (0.3 + 0.7 * s);
            if boundary {
                v *= cfg.edge_factor;
            }
            if cfg.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            out.push(v.clamp(0.0, 255.0) as f32);
        }
    }
    gt.with_values(out)
}
