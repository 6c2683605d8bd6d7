//! Binary checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TGCK" u16 version
//! descriptor: u8 len + generator kind name, u16 depth, u32 base width,
//!             f32 dropout rate, u16 dropout layers, u32 discriminator width,
//!             u8 PAN conditioning, u8 adversarial form (0 lsgan, 1 bce),
//!             u8 has normalization, [f32 height lo, hi, f32 intensity lo, hi],
//!             u32 epoch, u64 step
//! u32 tensor count, per tensor: u16 name len, name, u8 rank, u32 dims, f32 values
//! optional "ADAM" section: u32 state count (generator, discriminator), per
//!     state: u64 step, then tensors `<name>.m` / `<name>.v` as above
//! optional "RNGS" section: 32 seed bytes, u64 stream, u128 word position
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{
    build_discriminator, build_generator, init_discriminator, init_generator, GeneratorKind,
    GeneratorVariant,
};
use crate::objective::Adversarial;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Role, Shape, Tensor};
use crate::tiling::{NormKind, NormPair, NormSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const ADAM_TAG: &[u8; 4] = b"ADAM";
const RNG_TAG: &[u8; 4] = b"RNGS";

/// Architecture and data mapping needed to rebuild a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub variant: GeneratorVariant,
    pub disc_width: usize,
    pub disc_on_pan: bool,
    pub adversarial: Adversarial,
    pub norms: Option<NormPair>,
}

/// Generator and discriminator optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub generator: AdamState<f32>,
    pub discriminator: AdamState<f32>,
}

/// Position of the training random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<RngState>,
    pub epoch: u32,
    pub step: u64,
}

impl Checkpoint {
    /// Freshly initialized parameter stores for `descriptor`, used as the
    /// template that loaded tensors must fill completely.
    pub fn template(descriptor: &Descriptor) -> Result<(ParamStore<f32>, ParamStore<f32>)> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = build_generator(descriptor.variant)?;
        let d = build_discriminator(descriptor.disc_width, descriptor.disc_on_pan, g.patch)?;
        Ok((
            init_generator(&g, &mut rng)?,
            init_discriminator(&d, &mut rng)?,
        ))
    }

    pub fn norms(&self) -> Result<&NormPair> {
        self.descriptor
            .norms
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no normalization ranges".into()))
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn name(&mut self, s: &str, wide: bool) {
        if wide {
            self.u16(s.len() as u16);
        } else {
            self.u8(s.len() as u8);
        }
        self.bytes(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, shape: Shape, values: &[f32]) {
        self.name(name, true);
        self.u8(4);
        for d in shape.dims() {
            self.u32(d as u32);
        }
        for &v in values {
            self.f32(v);
        }
    }
}

fn kind_code(kind: GeneratorKind) -> &'static str {
    kind.name()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    let d = &ckpt.descriptor;
    w.name(kind_code(d.variant.kind), false);
    w.u16(d.variant.depth as u16);
    w.u32(d.variant.base_width as u32);
    w.f32(d.variant.dropout_rate as f32);
    w.u16(d.variant.dropout_layers as u16);
    w.u32(d.disc_width as u32);
    w.u8(d.disc_on_pan as u8);
    w.u8(match d.adversarial {
        Adversarial::LeastSquares => 0,
        Adversarial::LogLikelihood => 1,
    });
    match &d.norms {
        Some(n) => {
            w.u8(1);
            for v in [n.height.lo, n.height.hi, n.intensity.lo, n.intensity.hi] {
                w.f32(v as f32);
            }
        }
        None => w.u8(0),
    }
    w.u32(ckpt.epoch);
    w.u64(ckpt.step);
    w.u32((ckpt.generator.len() + ckpt.discriminator.len()) as u32);
    for store in [&ckpt.generator, &ckpt.discriminator] {
        for (_, p, _) in store.iter() {
            w.tensor(&p.name, p.tensor.shape(), p.tensor.data());
        }
    }
    if let Some(opt) = &ckpt.optimizer {
        w.bytes(ADAM_TAG);
        w.u32(2);
        for (state, store) in [
            (&opt.generator, &ckpt.generator),
            (&opt.discriminator, &ckpt.discriminator),
        ] {
            w.u64(state.step);
            let trainable: Vec<_> = store
                .iter()
                .filter(|(_, _, r)| *r == Role::Trainable)
                .collect();
            w.u32(2 * trainable.len() as u32);
            for (id, p, _) in trainable {
                let i = store_index(store, id);
                w.tensor(&format!("{}.m", p.name), p.tensor.shape(), &state.m[i]);
                w.tensor(&format!("{}.v", p.name), p.tensor.shape(), &state.v[i]);
            }
        }
    }
    if let Some(r) = &ckpt.rng {
        w.bytes(RNG_TAG);
        w.bytes(&r.seed);
        w.u64(r.stream);
        w.bytes(&r.word_pos.to_le_bytes());
    }
    w.0
}

fn store_index(store: &ParamStore<f32>, id: crate::tensor::ParamId) -> usize {
    store
        .iter()
        .position(|(i, _, _)| i == id)
        .expect("id from this store")
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Length(format!(
                "checkpoint truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn name(&mut self, wide: bool) -> Result<String> {
        let n = if wide {
            self.u16()? as usize
        } else {
            self.u8()? as usize
        };
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<(String, Shape, Vec<f32>)> {
        let name = self.name(true)?;
        let rank = self.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let mut dims = [1usize; 4];
        for d in dims.iter_mut().skip(4 - rank) {
            *d = self.u32()? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let raw = self.take(shape.numel() * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, shape, values))
    }
}

fn norm_spec(kind: NormKind, lo: f32, hi: f32) -> Result<NormSpec> {
    NormSpec::new(kind, lo as f64, hi as f64)
        .map_err(|e| Error::Checkpoint(format!("invalid normalization range: {e}")))
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)
        .map_err(|_| Error::Format("file too short for a checkpoint".into()))?
        != CHECKPOINT_MAGIC
    {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind_name = r.name(false)?;
    let kind = GeneratorKind::parse(&kind_name)
        .ok_or_else(|| Error::Format(format!("unknown generator kind `{kind_name}`")))?;
    let variant = GeneratorVariant {
        kind,
        depth: r.u16()? as usize,
        base_width: r.u32()? as usize,
        dropout_rate: r.f32()? as f64,
        dropout_layers: r.u16()? as usize,
    };
    let disc_width = r.u32()? as usize;
    let disc_on_pan = r.u8()? != 0;
    let adversarial = match r.u8()? {
        0 => Adversarial::LeastSquares,
        1 => Adversarial::LogLikelihood,
        other => return Err(Error::Format(format!("unknown adversarial form {other}"))),
    };
    let norms = match r.u8()? {
        0 => None,
        _ => {
            let v = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
            Some(NormPair {
                height: norm_spec(NormKind::Height, v[0], v[1])?,
                intensity: norm_spec(NormKind::Intensity, v[2], v[3])?,
            })
        }
    };
    let epoch = r.u32()?;
    let step = r.u64()?;
    let descriptor = Descriptor {
        variant,
        disc_width,
        disc_on_pan,
        adversarial,
        norms,
    };
    let (mut generator, mut discriminator) = Checkpoint::template(&descriptor)?;
    let count = r.u32()? as usize;
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let (name, shape, values) = r.tensor()?;
        let store = if name.starts_with("g.") {
            &mut generator
        } else {
            &mut discriminator
        };
        if store.id(&name).is_none() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` appears twice")));
        }
        store.set(&name, Tensor::from_vec(shape, values)?)?;
    }
    for store in [&generator, &discriminator] {
        if let Some((_, p, _)) = store.iter().find(|(_, p, _)| !seen.contains(&p.name)) {
            return Err(Error::Integrity(p.name.clone()));
        }
    }

    let mut optimizer = None;
    let mut rng = None;
    while r.pos < buf.len() {
        let tag: [u8; 4] = r.array()?;
        match &tag {
            t if t == ADAM_TAG => {
                if r.u32()? != 2 {
                    return Err(Error::Format("ADAM section must hold two states".into()));
                }
                let mut states = Vec::with_capacity(2);
                for store in [&generator, &discriminator] {
                    let mut state = AdamState::new(AdamConfig::default(), store);
                    state.step = r.u64()?;
                    let n = r.u32()? as usize;
                    for _ in 0..n {
                        let (name, _, values) = r.tensor()?;
                        let (base, which) = name.rsplit_once('.').ok_or_else(|| {
                            Error::Format(format!(
                                "optimizer tensor `{name}` lacks a moment suffix"
                            ))
                        })?;
                        let id = store.id(base).ok_or_else(|| {
                            Error::Checkpoint(format!("moment for unknown parameter `{base}`"))
                        })?;
                        let i = store_index(store, id);
                        let slot = match which {
                            "m" => &mut state.m[i],
                            "v" => &mut state.v[i],
                            _ => return Err(Error::Format(format!("unknown moment `{name}`"))),
                        };
                        if slot.len() != values.len() {
                            return Err(Error::Checkpoint(format!(
                                "moment `{name}` has {} values",
                                values.len()
                            )));
                        }
                        *slot = values;
                    }
                    states.push(state);
                }
                let discriminator_state = states.pop().expect("two states");
                let generator_state = states.pop().expect("two states");
                optimizer = Some(OptimizerState {
                    generator: generator_state,
                    discriminator: discriminator_state,
                });
            }
            t if t == RNG_TAG => {
                let seed = r.array::<32>()?;
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.array()?);
                rng = Some(RngState {
                    seed,
                    stream,
                    word_pos,
                });
            }
            other => {
                return Err(Error::Format(format!(
                    "unknown checkpoint section {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        }
    }
    Ok(Checkpoint {
        descriptor,
        generator,
        discriminator,
        optimizer,
        rng,
        epoch,
        step,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
