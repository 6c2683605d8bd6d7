//! Randomized gradient checks for every differentiable graph operation,
//! each loss term and the composite generator objective, in f64.

use dsmfuse::network::{
    build_generator, generator_forward, init_generator, GeneratorKind, GeneratorVariant,
};
use dsmfuse::objective::{
    bce_d_loss, bce_g_loss, l1_loss, lsgan_d_loss, lsgan_g_loss, normal_loss, normals_from_dsm,
    total_g_loss, Adversarial, LossWeights,
};
use dsmfuse::tensor::{grad_check, Activation, GradCheckReport, Graph, Mode, Shape, Tensor, Var};
use dsmfuse::tiling::{NormKind, NormSpec};
use dsmfuse::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;
const EPS: f64 = 1e-6;

type Case = fn(u64) -> Result<GradCheckReport>;

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
}

/// Values in `[lo, hi]` with magnitude at least `gap`, so kinks at zero
/// stay out of reach of the finite-difference step.
fn uniform(r: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = r.random_range(lo..hi);
        if v.abs() >= gap {
            break v;
        }
    })
}

fn small_shape(r: &mut ChaCha8Rng) -> Shape {
    Shape::new(
        r.random_range(1..3),
        r.random_range(1..4),
        r.random_range(2..5),
        r.random_range(2..5),
    )
}

/// `sum(w * x)` with fixed random weights, so every element of `x` gets
/// an order-one gradient.
fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let s = g.shape(x);
    let mut r = rng(seed, 777);
    let w = g.constant(uniform(&mut r, s, -1.0, 1.0, 0.1));
    let p = g.mul(x, w)?;
    let m = g.mean(p)?;
    Ok(g.scale(m, s.numel() as f64))
}

fn unary(
    seed: u64,
    lo: f64,
    hi: f64,
    op: fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut r = rng(seed, 1);
    let s = small_shape(&mut r);
    let x = uniform(&mut r, s, lo, hi, 0.05);
    grad_check(
        |g, v| {
            let y = op(g, v[0])?;
            probe(g, y, seed)
        },
        &[x],
        EPS,
    )
}

fn binary(seed: u64, op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut r = rng(seed, 2);
    let s = small_shape(&mut r);
    let a = uniform(&mut r, s, -2.0, 2.0, 0.0);
    let b = uniform(&mut r, s, 0.5, 2.0, 0.0).map(|v| if v as i64 % 2 == 0 { v } else { -v });
    grad_check(
        |g, v| {
            let y = op(g, v[0], v[1])?;
            probe(g, y, seed)
        },
        &[a, b],
        EPS,
    )
}

fn conv_case(seed: u64, transpose: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed, 3);
    let (n, ci, co) = (
        r.random_range(1..3),
        r.random_range(1..3),
        r.random_range(1..3),
    );
    let k = [1, 2, 3, 4][r.random_range(0..4)];
    let stride = r.random_range(1..3);
    let pad = r.random_range(0..k.min(2));
    let size = r.random_range(k.max(3)..6);
    let x = uniform(&mut r, Shape::new(n, ci, size, size), -1.0, 1.0, 0.0);
    let wshape = if transpose {
        Shape::new(ci, co, k, k)
    } else {
        Shape::new(co, ci, k, k)
    };
    let w = uniform(&mut r, wshape, -1.0, 1.0, 0.0);
    let b = uniform(&mut r, Shape::new(1, co, 1, 1), -1.0, 1.0, 0.0);
    grad_check(
        |g, v| {
            let y = if transpose {
                g.conv_transpose2d(v[0], v[1], Some(v[2]), stride, pad)?
            } else {
                g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?
            };
            probe(g, y, seed)
        },
        &[x, w, b],
        EPS,
    )
}

fn batch_norm_case(seed: u64, train: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed, 4);
    let mut s = small_shape(&mut r);
    s.h = s.h.max(2);
    let x = uniform(&mut r, s, -2.0, 2.0, 0.0);
    let gamma = uniform(&mut r, Shape::new(1, s.c, 1, 1), 0.5, 1.5, 0.0);
    let beta = uniform(&mut r, Shape::new(1, s.c, 1, 1), -0.5, 0.5, 0.0);
    let mean: Vec<f64> = (0..s.c).map(|_| r.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..s.c).map(|_| r.random_range(0.5..2.0)).collect();
    grad_check(
        |g, v| {
            let y = if train {
                g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0
            } else {
                g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?
            };
            probe(g, y, seed)
        },
        &[x, gamma, beta],
        EPS,
    )
}

fn crop_concat_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 5);
    let s = Shape::new(r.random_range(1..3), r.random_range(2..4), 4, 5);
    let a = uniform(&mut r, s, -1.0, 1.0, 0.0);
    let b = uniform(&mut r, Shape::new(s.n, 1, 4, 5), -1.0, 1.0, 0.0);
    let (c0, h0, w0) = (
        r.random_range(0..s.c - 1),
        r.random_range(0..2),
        r.random_range(0..2),
    );
    grad_check(
        |g, v| {
            let cat = g.concat_channels(v[0], v[1])?;
            let y = g.crop(cat, c0, h0, w0, (2, 2, 3))?;
            probe(g, y, seed)
        },
        &[a, b],
        EPS,
    )
}

fn dropout_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 6);
    let s = small_shape(&mut r);
    let x = uniform(&mut r, s, -1.0, 1.0, 0.0);
    grad_check(
        |g, v| {
            let mut mask_rng = rng(seed, 60);
            let y = g.dropout(v[0], 0.5, Mode::Train, &mut mask_rng)?;
            probe(g, y, seed)
        },
        &[x],
        EPS,
    )
}

fn score_maps(seed: u64, salt: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed, salt);
    let s = Shape::new(
        r.random_range(1..3),
        1,
        r.random_range(2..5),
        r.random_range(2..5),
    );
    (
        uniform(&mut r, s, 0.05, 0.95, 0.0),
        uniform(&mut r, s, 0.05, 0.95, 0.0),
    )
}

fn d_loss_case(
    seed: u64,
    form: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let (real, fake) = score_maps(seed, 7);
    grad_check(|g, v| form(g, v[0], v[1]), &[real, fake], EPS)
}

fn g_loss_case(
    seed: u64,
    form: fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let (fake, _) = score_maps(seed, 8);
    grad_check(|g, v| form(g, v[0]), &[fake], EPS)
}

fn l1_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 9);
    let s = small_shape(&mut r);
    let target = uniform(&mut r, s, -1.0, 1.0, 0.0);
    let offset = uniform(&mut r, s, -0.5, 0.5, 0.05);
    let pred = Tensor::from_fn(s, |i| target.data()[i] + offset.data()[i]);
    grad_check(|g, v| l1_loss(g, v[0], v[1]), &[pred, target], EPS)
}

/// Smooth random surface in metres with slopes of order one.
fn surface(r: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor<f64> {
    let (a, b, c) = (
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(0.2..0.8),
    );
    let noise = uniform(r, Shape::new(n, 1, size, size), -0.3, 0.3, 0.0);
    Tensor::from_fn(Shape::new(n, 1, size, size), |i| {
        let (row, col) = ((i / size) % size, i % size);
        a * col as f64 + b * row as f64 + (c * (row + col) as f64).sin() + noise.data()[i]
    })
}

fn normal_case(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 10);
    let n = r.random_range(1..3);
    let size = r.random_range(4..9);
    let spacing = (r.random_range(0.4..1.5), r.random_range(0.4..1.5));
    let a = surface(&mut r, n, size);
    let b = surface(&mut r, n, size);
    grad_check(
        |g, v| {
            let na = normals_from_dsm(g, v[0], spacing)?;
            let nb = normals_from_dsm(g, v[1], spacing)?;
            normal_loss(g, &na, &nb)
        },
        &[a, b],
        EPS,
    )
}

fn composite_case(seed: u64, form: Adversarial) -> Result<GradCheckReport> {
    let mut r = rng(seed, 11);
    let heights = NormSpec::new(NormKind::Height, 30.0, 60.0)?;
    let size = 16;
    let s = Shape::new(r.random_range(1..3), 1, size, size);
    let target = uniform(&mut r, s, -0.9, 0.9, 0.0);
    let offset = uniform(&mut r, s, -0.08, 0.08, 0.005);
    let pred = Tensor::from_fn(s, |i| target.data()[i] + offset.data()[i]);
    let scores = uniform(&mut r, Shape::new(s.n, 1, 2, 2), 0.05, 0.95, 0.0);
    let weights = LossWeights {
        lambda: r.random_range(1.0..1000.0),
        gamma: r.random_range(0.5..10.0),
    };
    grad_check(
        |g, v| Ok(total_g_loss(g, form, v[0], v[1], v[2], &heights, (0.5, 0.5), weights)?.0),
        &[scores, pred, target],
        EPS,
    )
}

/// End to end through a small generator, with respect to both inputs.
fn generator_case(seed: u64, kind: GeneratorKind) -> Result<GradCheckReport> {
    let mut r = rng(seed, 12);
    let mut variant = GeneratorVariant::new(kind, 3, 2);
    variant.dropout_rate = 0.0;
    let spec = build_generator(variant)?;
    let store = init_generator::<f64, _>(&spec, &mut r)?;
    let s = Shape::new(2, 1, spec.patch, spec.patch);
    let pan = uniform(&mut r, s, -0.9, 0.9, 0.0);
    let dsm = uniform(&mut r, s, -0.9, 0.9, 0.0);
    grad_check(
        |g, v| {
            let bound = store.bind(g, false);
            let mut dummy = rng(seed, 13);
            let out = generator_forward(
                g,
                &spec,
                &store,
                &bound,
                v[0],
                v[1],
                Mode::Train,
                &mut dummy,
            )?;
            probe(g, out.out, seed)
        },
        &[pan, dsm],
        EPS,
    )
}

pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", |s| binary(s, |g, a, b| g.add(a, b))),
        ("sub", |s| binary(s, |g, a, b| g.sub(a, b))),
        ("mul", |s| binary(s, |g, a, b| g.mul(a, b))),
        ("div", |s| binary(s, |g, a, b| g.div(a, b))),
        ("affine", |s| {
            unary(s, -2.0, 2.0, |g, x| Ok(g.affine(x, 1.7, -0.3)))
        }),
        ("scale", |s| {
            unary(s, -2.0, 2.0, |g, x| Ok(g.scale(x, -2.5)))
        }),
        ("add_scalar", |s| {
            unary(s, -2.0, 2.0, |g, x| Ok(g.add_scalar(x, 0.75)))
        }),
        ("square", |s| unary(s, -2.0, 2.0, |g, x| Ok(g.square(x)))),
        ("sqrt", |s| unary(s, 0.2, 3.0, |g, x| Ok(g.sqrt(x)))),
        ("abs", |s| unary(s, -2.0, 2.0, |g, x| Ok(g.abs(x)))),
        ("ln", |s| unary(s, 0.2, 3.0, |g, x| Ok(g.ln(x)))),
        ("leaky_relu", |s| {
            unary(s, -2.0, 2.0, |g, x| {
                Ok(g.activation(x, Activation::LeakyRelu(0.2)))
            })
        }),
        ("relu", |s| {
            unary(s, -2.0, 2.0, |g, x| Ok(g.activation(x, Activation::Relu)))
        }),
        ("tanh", |s| {
            unary(s, -2.0, 2.0, |g, x| Ok(g.activation(x, Activation::Tanh)))
        }),
        ("sigmoid", |s| {
            unary(
                s,
                -3.0,
                3.0,
                |g, x| Ok(g.activation(x, Activation::Sigmoid)),
            )
        }),
        ("mean", |s| unary(s, -2.0, 2.0, |g, x| g.mean(x))),
        ("crop_concat", crop_concat_case),
        ("conv2d", |s| conv_case(s, false)),
        ("conv_transpose2d", |s| conv_case(s, true)),
        ("batch_norm_train", |s| batch_norm_case(s, true)),
        ("batch_norm_eval", |s| batch_norm_case(s, false)),
        ("dropout", dropout_case),
        ("lsgan_d_loss", |s| d_loss_case(s, lsgan_d_loss)),
        ("lsgan_g_loss", |s| g_loss_case(s, lsgan_g_loss)),
        ("bce_d_loss", |s| d_loss_case(s, bce_d_loss)),
        ("bce_g_loss", |s| g_loss_case(s, bce_g_loss)),
        ("l1_loss", l1_case),
        ("normal_loss", normal_case),
        ("total_g_loss_lsgan", |s| {
            composite_case(s, Adversarial::LeastSquares)
        }),
        ("total_g_loss_bce", |s| {
            composite_case(s, Adversarial::LogLikelihood)
        }),
        ("generator_hybrid", |s| {
            generator_case(s, GeneratorKind::Hybrid)
        }),
        ("generator_wnet", |s| generator_case(s, GeneratorKind::WNet)),
        ("generator_single", |s| {
            generator_case(s, GeneratorKind::SingleStream)
        }),
    ]
}

/// Worst relative error of each case over all seeds.
pub fn run_all() -> Vec<(&'static str, Result<f64>)> {
    cases()
        .into_iter()
        .map(|(name, case)| {
            let worst =
                (0..SEEDS).try_fold(0.0f64, |acc, seed| Ok(acc.max(case(seed)?.max_rel_error)));
            (name, worst)
        })
        .collect()
}
