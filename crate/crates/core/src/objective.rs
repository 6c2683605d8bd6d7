//! Adversarial, L1 and surface-normal loss terms and the generator's
//! composite objective, all built from differentiable graph operations.
//!
//! Expectations are minibatch means. The discriminator emits sigmoid
//! scores, with target 1 for real and 0 for generated samples.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use crate::tiling::NormSpec;

/// Weights of the reconstruction and normal terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1000.0,
            gamma: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0
            && self.gamma >= 0.0
            && self.lambda.is_finite()
            && self.gamma.is_finite())
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Form of the adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Adversarial {
    #[default]
    LeastSquares,
    /// Cross-entropy form, kept for ablation.
    LogLikelihood,
}

impl Adversarial {
    pub fn name(self) -> &'static str {
        match self {
            Adversarial::LeastSquares => "lsgan",
            Adversarial::LogLikelihood => "bce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lsgan" => Some(Adversarial::LeastSquares),
            "bce" => Some(Adversarial::LogLikelihood),
            _ => None,
        }
    }

    pub fn d_loss<T: Scalar>(self, g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
        match self {
            Adversarial::LeastSquares => lsgan_d_loss(g, d_real, d_fake),
            Adversarial::LogLikelihood => bce_d_loss(g, d_real, d_fake),
        }
    }

    pub fn g_loss<T: Scalar>(self, g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
        match self {
            Adversarial::LeastSquares => lsgan_g_loss(g, d_fake),
            Adversarial::LogLikelihood => bce_g_loss(g, d_fake),
        }
    }
}

fn squared_distance_to<T: Scalar>(g: &mut Graph<T>, x: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(x, T::c(-target));
    let sq = g.square(d);
    g.mean(sq)
}

/// `mean((d_real - 1)^2) + mean(d_fake^2)`.
pub fn lsgan_d_loss<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    check_same(g, d_real, d_fake, "discriminator scores")?;
    let real = squared_distance_to(g, d_real, 1.0)?;
    let fake = squared_distance_to(g, d_fake, 0.0)?;
    g.add(real, fake)
}

/// `mean((d_fake - 1)^2)`.
pub fn lsgan_g_loss<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    squared_distance_to(g, d_fake, 1.0)
}

/// `-mean(ln d_real) - mean(ln(1 - d_fake))`.
pub fn bce_d_loss<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    check_same(g, d_real, d_fake, "discriminator scores")?;
    let lr = g.ln(d_real);
    let real = g.mean(lr)?;
    let one_minus = g.affine(d_fake, T::c(-1.0), T::one());
    let lf = g.ln(one_minus);
    let fake = g.mean(lf)?;
    let sum = g.add(real, fake)?;
    Ok(g.scale(sum, T::c(-1.0)))
}

/// `-mean(ln d_fake)`.
pub fn bce_g_loss<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Result<Var> {
    let l = g.ln(d_fake);
    let m = g.mean(l)?;
    Ok(g.scale(m, T::c(-1.0)))
}

fn check_same<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::Shape(format!("{what}: {sa} vs {sb}")));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    g.mean(a)
}

/// Unit surface normals on the interior pixels of a height tensor, one
/// `N x 1 x (H-2) x (W-2)` node per component.
#[derive(Clone, Copy, Debug)]
pub struct NormalField {
    pub x: Var,
    pub y: Var,
    pub z: Var,
    /// Number of normals, `N (H-2) (W-2)`.
    pub count: usize,
}

impl NormalField {
    /// Components as one `N x 3 x (H-2) x (W-2)` tensor.
    pub fn stacked<T: Scalar>(&self, g: &mut Graph<T>) -> Result<Var> {
        let xy = g.concat_channels(self.x, self.y)?;
        g.concat_channels(xy, self.z)
    }
}

/// Normals `(-dh/dx, -dh/dy, 1) / norm` from central differences over the
/// pixel spacing `(sx, sy)` in metres. `x` points east (increasing column)
/// and `y` north (decreasing row).
pub fn normals_from_dsm<T: Scalar>(
    g: &mut Graph<T>,
    dsm: Var,
    spacing: (f64, f64),
) -> Result<NormalField> {
    let s = g.shape(dsm);
    if s.c != 1 || s.h < 3 || s.w < 3 {
        return Err(Error::Shape(format!(
            "normals need a single-channel grid of at least 3x3, got {s}"
        )));
    }
    let (sx, sy) = spacing;
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::Config(format!(
            "pixel spacing ({sx}, {sy}) must be positive"
        )));
    }
    let inner = (1, s.h - 2, s.w - 2);
    let east = g.crop(dsm, 0, 1, 2, inner)?;
    let west = g.crop(dsm, 0, 1, 0, inner)?;
    let north = g.crop(dsm, 0, 0, 1, inner)?;
    let south = g.crop(dsm, 0, 2, 1, inner)?;
    let dx = g.sub(east, west)?;
    let gx = g.scale(dx, T::c(0.5 / sx));
    let dy = g.sub(north, south)?;
    let gy = g.scale(dy, T::c(0.5 / sy));
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let sum = g.add(gx2, gy2)?;
    let sum1 = g.add_scalar(sum, T::one());
    let norm = g.sqrt(sum1);
    let shape = g.shape(norm);
    let ones = g.constant(Tensor::full(shape, T::one()));
    let z = g.div(ones, norm)?;
    let qx = g.div(gx, norm)?;
    let x = g.scale(qx, T::c(-1.0));
    let qy = g.div(gy, norm)?;
    let y = g.scale(qy, T::c(-1.0));
    Ok(NormalField {
        x,
        y,
        z,
        count: shape.numel(),
    })
}

/// `mean(1 - <a, b>)` over corresponding unit normals.
pub fn normal_loss<T: Scalar>(g: &mut Graph<T>, a: &NormalField, b: &NormalField) -> Result<Var> {
    if a.count == 0 || b.count == 0 {
        return Err(Error::EmptyDomain("normal loss over zero normals".into()));
    }
    check_same(g, a.x, b.x, "normal fields")?;
    let px = g.mul(a.x, b.x)?;
    let py = g.mul(a.y, b.y)?;
    let pz = g.mul(a.z, b.z)?;
    let pxy = g.add(px, py)?;
    let dot = g.add(pxy, pz)?;
    let cos = g.mean(dot)?;
    Ok(g.affine(cos, T::c(-1.0), T::one()))
}

/// Generator objective and its parts as plain values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub adv: f64,
    pub l1: f64,
    pub normal: f64,
    pub total: f64,
}

/// `adv + lambda * L1 + gamma * normal`. `pred` and `target` are in the
/// normalized range; normals are taken on heights mapped back to metres
/// through `heights`.
#[allow(clippy::too_many_arguments)]
pub fn total_g_loss<T: Scalar>(
    g: &mut Graph<T>,
    form: Adversarial,
    d_fake: Var,
    pred: Var,
    target: Var,
    heights: &NormSpec,
    spacing: (f64, f64),
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let adv = form.g_loss(g, d_fake)?;
    let l1 = l1_loss(g, pred, target)?;
    let (scale, shift) = (heights.half_range(), heights.half_range() + heights.lo);
    let pred_m = g.affine(pred, T::c(scale), T::c(shift));
    let target_m = g.affine(target, T::c(scale), T::c(shift));
    let np = normals_from_dsm(g, pred_m, spacing)?;
    let nt = normals_from_dsm(g, target_m, spacing)?;
    let normal = normal_loss(g, &np, &nt)?;
    let wl1 = g.scale(l1, T::c(weights.lambda));
    let wn = g.scale(normal, T::c(weights.gamma));
    let partial = g.add(adv, wl1)?;
    let total = g.add(partial, wn)?;
    let item = |v: Var| g.value(v).item().as_f64();
    let breakdown = LossBreakdown {
        adv: item(adv),
        l1: item(l1),
        normal: item(normal),
        total: item(total),
    };
    Ok((total, breakdown))
}
