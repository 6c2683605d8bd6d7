use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Bound, Graph, Mode, ParamId, ParamStore, Tensor, Var};

use super::{DiscriminatorSpec, GeneratorKind, LayerOp, LayerSpec, NetworkSpec};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics observed by one training-mode batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnRecord<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

/// Output node of a forward pass plus the statistics to fold into the
/// running buffers once the step is accepted.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub out: Var,
    pub bn: Vec<BnRecord<T>>,
}

/// Exponential update of running mean and variance buffers.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, records: &[BnRecord<T>]) {
    let m = T::c(BN_MOMENTUM);
    let keep = T::one() - m;
    for r in records {
        for (id, fresh) in [(r.mean, &r.stats.mean), (r.var, &r.stats.var_unbiased)] {
            for (v, &f) in store.tensor_mut(id).data_mut().iter_mut().zip(fresh) {
                *v = keep * *v + m * f;
            }
        }
    }
}

struct Pass<'a, T: Scalar, R: ?Sized> {
    store: &'a ParamStore<T>,
    bound: &'a Bound,
    mode: Mode,
    rng: &'a mut R,
    bn: Vec<BnRecord<T>>,
}

impl<T: Scalar, R: Rng + ?Sized> Pass<'_, T, R> {
    fn id(&self, name: &str) -> Result<ParamId> {
        self.store
            .id(name)
            .ok_or_else(|| Error::Integrity(name.to_string()))
    }

    fn var(&self, name: &str) -> Result<Var> {
        Ok(self.bound.var(self.id(name)?))
    }

    fn layer(&mut self, g: &mut Graph<T>, l: &LayerSpec, x: Var) -> Result<Var> {
        let w = self.var(&format!("{}.weight", l.name))?;
        let b = self.var(&format!("{}.bias", l.name))?;
        let y = match l.op {
            LayerOp::Conv => g.conv2d(x, w, Some(b), l.stride, l.padding)?,
            LayerOp::ConvTranspose => g.conv_transpose2d(x, w, Some(b), l.stride, l.padding)?,
        };
        let mut y = g.activation(y, l.activation);
        if l.batch_norm {
            let gamma = self.var(&format!("{}.bn.gamma", l.name))?;
            let beta = self.var(&format!("{}.bn.beta", l.name))?;
            let mean = self.id(&format!("{}.bn.mean", l.name))?;
            let var = self.id(&format!("{}.bn.var", l.name))?;
            y = match self.mode {
                Mode::Train => {
                    let (out, stats) = g.batch_norm_train(y, gamma, beta, BN_EPS)?;
                    self.bn.push(BnRecord { mean, var, stats });
                    out
                }
                Mode::Eval => {
                    let (m, v) = (
                        self.store.get(mean).tensor.data(),
                        self.store.get(var).tensor.data(),
                    );
                    g.batch_norm_eval(y, gamma, beta, m, v, BN_EPS)?
                }
            };
        }
        if l.dropout > 0.0 {
            y = g.dropout(y, l.dropout, self.mode, &mut *self.rng)?;
        }
        Ok(y)
    }

    fn encode(&mut self, g: &mut Graph<T>, layers: &[LayerSpec], x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(layers.len());
        let mut h = x;
        for l in layers {
            h = self.layer(g, l, h)?;
            feats.push(h);
        }
        Ok(feats)
    }

    /// Decoder over `start`; layer `j > 0` first concatenates the level
    /// `depth - 1 - j` features of every skip stream.
    fn decode(
        &mut self,
        g: &mut Graph<T>,
        layers: &[LayerSpec],
        skips: &[&[Var]],
        start: Var,
    ) -> Result<Var> {
        let d = layers.len();
        let mut h = start;
        for (j, l) in layers.iter().enumerate() {
            if j > 0 {
                for feats in skips {
                    h = g.concat_channels(h, feats[d - 1 - j])?;
                }
            }
            h = self.layer(g, l, h)?;
        }
        Ok(h)
    }
}

/// Allowed excess over `[-1, 1]` before an input counts as unnormalized.
const RANGE_SLACK: f64 = 1e-3;

fn check_normalized<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if let Some(v) = t.data().iter().find(|v| {
        v.as_f64().abs().partial_cmp(&(1.0 + RANGE_SLACK)) != Some(std::cmp::Ordering::Less)
    }) {
        return Err(Error::Domain(format!(
            "{what} value {v} is outside the normalized range [-1, 1]"
        )));
    }
    Ok(())
}

/// Refined heights in `(-1, 1)` for normalized `N x 1 x P x P` inputs.
/// `rng` drives decoder dropout in training mode only.
#[allow(clippy::too_many_arguments)]
pub fn generator_forward<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    store: &ParamStore<T>,
    bound: &Bound,
    pan: Var,
    dsm: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Forward<T>> {
    let (sp, sd) = (g.shape(pan), g.shape(dsm));
    if sp != sd || sd.c != 1 {
        return Err(Error::Shape(format!(
            "generator inputs must be equal single-channel tensors, got {sp} and {sd}"
        )));
    }
    if spec.variant.kind != GeneratorKind::Identity && (sd.h != spec.patch || sd.w != spec.patch) {
        return Err(Error::Shape(format!(
            "generator expects {0}x{0} patches, got {sd}",
            spec.patch
        )));
    }
    check_normalized(g.value(dsm), "height input")?;
    if spec.uses_pan() {
        check_normalized(g.value(pan), "PAN input")?;
    }
    let mut p = Pass {
        store,
        bound,
        mode,
        rng,
        bn: Vec::new(),
    };
    let out = match spec.variant.kind {
        GeneratorKind::Identity => dsm,
        GeneratorKind::SingleStream => {
            let f = p.encode(g, &spec.enc_dsm, dsm)?;
            p.decode(g, &spec.dec, &[&f], f[f.len() - 1])?
        }
        GeneratorKind::Hybrid => {
            let f1 = p.encode(g, &spec.enc_pan, pan)?;
            let f2 = p.encode(g, &spec.enc_dsm, dsm)?;
            let b = g.concat_channels(f1[f1.len() - 1], f2[f2.len() - 1])?;
            p.decode(g, &spec.dec, &[&f1, &f2], b)?
        }
        GeneratorKind::WNet => {
            let f1 = p.encode(g, &spec.enc_pan, pan)?;
            let s1 = p.decode(g, &spec.dec_pan, &[&f1], f1[f1.len() - 1])?;
            let f2 = p.encode(g, &spec.enc_dsm, dsm)?;
            let s2 = p.decode(g, &spec.dec, &[&f2], f2[f2.len() - 1])?;
            let both = g.concat_channels(s1, s2)?;
            let fuse = spec
                .fuse
                .as_ref()
                .ok_or_else(|| Error::Config("wnet spec lacks its fusion layer".into()))?;
            p.layer(g, fuse, both)?
        }
    };
    Ok(Forward { out, bn: p.bn })
}

/// Patch score map in `(0, 1)` for a candidate height patch given the
/// input height patch (and optionally the PAN patch) as condition.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &DiscriminatorSpec,
    store: &ParamStore<T>,
    bound: &Bound,
    condition: Var,
    candidate: Var,
    pan: Option<Var>,
    mode: Mode,
) -> Result<Forward<T>> {
    let (sc, sx) = (g.shape(condition), g.shape(candidate));
    if sc != sx {
        return Err(Error::Shape(format!(
            "condition {sc} and candidate {sx} differ"
        )));
    }
    let mut x = g.concat_channels(condition, candidate)?;
    if spec.condition_on_pan {
        let pan = pan.ok_or_else(|| {
            Error::Config("discriminator is conditioned on PAN but none was given".into())
        })?;
        if g.shape(pan) != sc {
            return Err(Error::Shape(format!(
                "PAN condition {} vs {sc}",
                g.shape(pan)
            )));
        }
        x = g.concat_channels(x, pan)?;
    }
    // the discriminator has no dropout, so its pass never draws randomness
    let mut no_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut p = Pass {
        store,
        bound,
        mode,
        rng: &mut no_rng,
        bn: Vec::new(),
    };
    let mut h = x;
    for l in &spec.layers {
        h = p.layer(g, l, h)?;
    }
    Ok(Forward { out: h, bn: p.bn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{
        build_discriminator, build_generator, init_discriminator, init_generator, GeneratorVariant,
    };
    use crate::tensor::Shape;
    use rand_chacha::ChaCha8Rng;

    fn inputs(g: &mut Graph<f32>, n: usize, p: usize, seed: u64) -> (Var, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape::new(n, 1, p, p);
        let a = Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0));
        let b = Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0));
        (g.constant(a), g.constant(b))
    }

    fn run(kind: GeneratorKind, pan_seed: u64, mode: Mode) -> Tensor<f32> {
        let spec = build_generator(GeneratorVariant::new(kind, 5, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = init_generator::<f32, _>(&spec, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let (pan, _) = inputs(&mut g, 2, 32, pan_seed);
        let (_, dsm) = inputs(&mut g, 2, 32, 99);
        let f = generator_forward(&mut g, &spec, &store, &bound, pan, dsm, mode, &mut rng).unwrap();
        g.value(f.out).clone()
    }

    #[test]
    fn eval_is_deterministic_and_bounded() {
        for kind in [
            GeneratorKind::Hybrid,
            GeneratorKind::SingleStream,
            GeneratorKind::WNet,
        ] {
            let a = run(kind, 3, Mode::Eval);
            assert_eq!(a, run(kind, 3, Mode::Eval));
            assert_eq!(a.shape(), Shape::new(2, 1, 32, 32));
            assert!(a.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn input_dependence() {
        assert_eq!(
            run(GeneratorKind::SingleStream, 3, Mode::Eval),
            run(GeneratorKind::SingleStream, 4, Mode::Eval)
        );
        assert_ne!(
            run(GeneratorKind::Hybrid, 3, Mode::Eval),
            run(GeneratorKind::Hybrid, 4, Mode::Eval)
        );
        assert_ne!(
            run(GeneratorKind::WNet, 3, Mode::Eval),
            run(GeneratorKind::WNet, 4, Mode::Eval)
        );
    }

    #[test]
    fn unnormalized_input_rejected() {
        let spec =
            build_generator(GeneratorVariant::new(GeneratorKind::SingleStream, 5, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = init_generator::<f32, _>(&spec, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 32, 32), 1.5));
        let r = generator_forward(&mut g, &spec, &store, &bound, x, x, Mode::Eval, &mut rng);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn train_mode_records_statistics() {
        let spec = build_generator(GeneratorVariant::new(GeneratorKind::Hybrid, 5, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = init_generator::<f32, _>(&spec, &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g, true);
        let (pan, dsm) = inputs(&mut g, 2, 32, 8);
        let f = generator_forward(
            &mut g,
            &spec,
            &store,
            &bound,
            pan,
            dsm,
            Mode::Train,
            &mut rng,
        )
        .unwrap();
        let bn_layers = spec.layers().filter(|l| l.batch_norm).count();
        assert_eq!(f.bn.len(), bn_layers);
        let before = store.by_name("g.dec.0.bn.var").unwrap().clone();
        apply_bn_updates(&mut store, &f.bn);
        assert_ne!(&before, store.by_name("g.dec.0.bn.var").unwrap());
    }

    #[test]
    fn constant_discriminator() {
        let spec = build_discriminator(2, false, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = init_discriminator::<f64, _>(&spec, &mut rng).unwrap();
        let names: Vec<String> = store.iter().map(|(_, p, _)| p.name.clone()).collect();
        for name in names {
            let t = store.by_name(&name).unwrap();
            let zero = Tensor::zeros(t.shape());
            store.set(&name, zero).unwrap();
        }
        store
            .set("d.4.bias", Tensor::full(Shape::new(1, 1, 1, 1), 0.7))
            .unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 32, 32), 0.3));
        let f =
            discriminator_forward(&mut g, &spec, &store, &bound, x, x, None, Mode::Eval).unwrap();
        let expected = 1.0 / (1.0 + (-0.7f64).exp());
        assert_eq!(g.shape(f.out), Shape::new(1, 1, 1, 1));
        assert!(g
            .value(f.out)
            .data()
            .iter()
            .all(|v| (v - expected).abs() < 1e-12));
    }
}
