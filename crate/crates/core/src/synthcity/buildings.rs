use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::SceneConfig;

/// Pixel rectangle `[col0, col0 + w) x [row0, row0 + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub col0: usize,
    pub row0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.col0 && col < self.col0 + self.w && row >= self.row0 && row < self.row0 + self.h
    }

    /// True when the rectangles come closer than `gap` pixels.
    fn near(&self, other: &Rect, gap: usize) -> bool {
        self.col0 < other.col0 + other.w + gap
            && other.col0 < self.col0 + self.w + gap
            && self.row0 < other.row0 + other.h + gap
            && other.row0 < self.row0 + self.h + gap
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row0..self.row0 + self.h)
            .flat_map(move |r| (self.col0..self.col0 + self.w).map(move |c| (c, r)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoofKind {
    Flat,
    /// Ridge runs along the longer side, through the central pixel line.
    Gabled {
        rise: f64,
    },
}

/// Rectilinear prism: one rectangle, or two forming an L.
#[derive(Clone, Debug, PartialEq)]
pub struct Building {
    pub parts: Vec<Rect>,
    pub roof: RoofKind,
    pub eave: f64,
}

impl Building {
    /// Writes roof heights and mask flags. The prism stands on the highest
    /// terrain point under its footprint.
    pub fn extrude(&self, terrain: &[f64], n: usize, heights: &mut [f64], mask: &mut [u8]) {
        let base = self
            .parts
            .iter()
            .flat_map(|p| p.pixels())
            .map(|(c, r)| terrain[r * n + c])
            .fold(f64::NEG_INFINITY, f64::max);
        for part in &self.parts {
            for (c, r) in part.pixels() {
                let z = base + self.eave + self.roof_offset(part, c, r);
                heights[r * n + c] = z;
                mask[r * n + c] = 1;
            }
        }
    }

    /// Height above the eave at pixel `(c, r)` of `part`.
    pub fn roof_offset(&self, part: &Rect, c: usize, r: usize) -> f64 {
        match self.roof {
            RoofKind::Flat => 0.0,
            RoofKind::Gabled { rise } => {
                let (i, across) = if part.w >= part.h {
                    (r - part.row0, part.h)
                } else {
                    (c - part.col0, part.w)
                };
                let half = ((across - 1) / 2) as f64;
                rise * (1.0 - (i as f64 - half).abs() / half)
            }
        }
    }
}

const MAX_ATTEMPTS: usize = 500;
const GAP_PX: usize = 3;

fn in_scene(r: &Rect, n: usize) -> bool {
    r.col0 >= GAP_PX && r.row0 >= GAP_PX && r.col0 + r.w + GAP_PX <= n && r.row0 + r.h + GAP_PX <= n
}

fn draw_building(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Building {
    let n = cfg.scene_size;
    let px = |m: f64| ((m / cfg.pixel_size).round() as usize).max(2);
    let mut w = px(rng.random_range(cfg.building_min..=cfg.building_max));
    let mut h = px(rng.random_range(cfg.building_min..=cfg.building_max));
    let eave = rng.random_range(cfg.eave_min..=cfg.eave_max);
    let gabled = rng.random::<f64>() < cfg.gabled_fraction;
    let roof = if gabled {
        // an odd count across the ridge puts the ridge on a pixel line
        let across = if w >= h { &mut h } else { &mut w };
        if *across % 2 == 0 {
            *across -= 1;
        }
        *across = (*across).max(3);
        RoofKind::Gabled {
            rise: rng.random_range(cfg.ridge_min..=cfg.ridge_max),
        }
    } else {
        RoofKind::Flat
    };
    let col0 = rng.random_range(0..=n.saturating_sub(w));
    let row0 = rng.random_range(0..=n.saturating_sub(h));
    let main = Rect { col0, row0, w, h };
    let mut parts = vec![main];
    if !gabled && rng.random::<f64>() < cfg.l_shape_fraction {
        let along = rng.random_range(0.4..0.6);
        let depth = rng.random_range(0.3..0.6) * w.min(h) as f64;
        let depth = (depth.round() as usize).max(2);
        let wing = match rng.random_range(0..4u8) {
            0 => Rect {
                col0,
                row0: row0 + h,
                w: ((w as f64 * along) as usize).max(2),
                h: depth,
            },
            1 => Rect {
                col0,
                row0: row0.saturating_sub(depth),
                w: ((w as f64 * along) as usize).max(2),
                h: depth,
            },
            2 => Rect {
                col0: col0 + w,
                row0,
                w: depth,
                h: ((h as f64 * along) as usize).max(2),
            },
            _ => Rect {
                col0: col0.saturating_sub(depth),
                row0,
                w: depth,
                h: ((h as f64 * along) as usize).max(2),
            },
        };
        parts.push(wing);
    }
    Building { parts, roof, eave }
}

/// Rejection-samples non-overlapping buildings separated by a small gap.
pub(super) fn place_buildings(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Building>> {
    let mut placed: Vec<Building> = Vec::with_capacity(cfg.n_buildings);
    for k in 0..cfg.n_buildings {
        let mut attempt = 0;
        loop {
            let b = draw_building(cfg, rng);
            let fits = b.parts.iter().all(|p| in_scene(p, cfg.scene_size))
                && !placed.iter().any(|o| {
                    o.parts
                        .iter()
                        .any(|q| b.parts.iter().any(|p| p.near(q, GAP_PX)))
                });
            if fits {
                placed.push(b);
                break;
            }
            attempt += 1;
            if attempt == MAX_ATTEMPTS {
                return Err(Error::Placement(format!(
                    "building {} of {} did not fit after {MAX_ATTEMPTS} attempts",
                    k + 1,
                    cfg.n_buildings
                )));
            }
        }
    }
    Ok(placed)
}
