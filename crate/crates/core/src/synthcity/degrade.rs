use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::raster::RasterGrid;

use super::DegradeConfig;

/// Separable Gaussian blur with edge clamping, `sigma` in pixels.
pub(crate) fn gaussian_blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * values[r * w + clamp(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * tmp[clamp(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

/// Height jump that marks a building edge when seeding vegetation.
const EDGE_STEP: f32 = 2.0;

/// Ground pixels next to a building wall.
fn wall_feet(gt: &RasterGrid) -> Vec<usize> {
    let (w, h) = (gt.width(), gt.height());
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let z = gt.get(c, r);
            let neighbours = [
                (c > 0).then(|| gt.get(c - 1, r)),
                (c + 1 < w).then(|| gt.get(c + 1, r)),
                (r > 0).then(|| gt.get(c, r - 1)),
                (r + 1 < h).then(|| gt.get(c, r + 1)),
            ];
            if neighbours.iter().flatten().any(|&nz| nz - z > EDGE_STEP) {
                out.push(r * w + c);
            }
        }
    }
    out
}

/// Blur, vegetation next to walls, Gaussian noise and sparse outlier
/// spikes, in that order. Nodata pixels pass through unchanged.
pub fn degrade_dsm(gt: &RasterGrid, deg: &DegradeConfig) -> Result<RasterGrid> {
    deg.validate()?;
    gt.validate()?;
    let (w, h) = (gt.width(), gt.height());
    let (sx, _) = gt.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(deg.seed);
    let src: Vec<f64> = gt.values().iter().map(|&v| v as f64).collect();
    let mut out = gaussian_blur(&src, w, h, deg.blur_sigma);

    let feet = wall_feet(gt);
    for _ in 0..deg.vegetation_count {
        let centre = if feet.is_empty() {
            rng.random_range(0..w * h)
        } else {
            feet[rng.random_range(0..feet.len())]
        };
        let height = rng.random_range(deg.vegetation_height_min..=deg.vegetation_height_max);
        let radius = rng.random_range(deg.vegetation_radius_min..=deg.vegetation_radius_max) / sx;
        let (cc, cr) = ((centre % w) as f64, (centre / w) as f64);
        let reach = radius.ceil() as isize;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (cr as isize + dr, cc as isize + dc);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let q = ((dr * dr + dc * dc) as f64) / (radius * radius).max(f64::MIN_POSITIVE);
                if q < 1.0 {
                    out[r as usize * w + c as usize] += height * (1.0 - q).sqrt();
                }
            }
        }
    }

    if deg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, deg.noise_sigma).expect("validated sigma");
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let n_out = (deg.outlier_fraction * (w * h) as f64).round() as usize;
    if n_out > 0 {
        for i in index::sample(&mut rng, w * h, n_out) {
            let mag = rng.random_range(deg.outlier_min..=deg.outlier_max);
            out[i] += if rng.random::<bool>() { mag } else { -mag };
        }
    }

    let values = gt
        .values()
        .iter()
        .zip(&out)
        .map(|(&g, &o)| if g == gt.nodata() { g } else { o as f32 })
        .collect();
    gt.with_values(values)
}
