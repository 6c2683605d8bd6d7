//! Alternating adversarial training, checkpoints and full-scene inference.
//!
//! Each step draws one batch of random patches, runs the generator once in
//! training mode, updates the discriminator on real and detached generated
//! patches, then updates the generator against the freshly updated
//! discriminator. All randomness (scene choice, windows, dropout) comes from
//! one seeded stream, so runs and resumed runs are reproducible.

mod checkpoint;
mod log;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Descriptor,
    OptimizerState, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use log::{log_csv, TrainLogRow, ValRow, LOG_HEADER};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalmetrics;
use crate::network::{
    apply_bn_updates, build_discriminator, build_generator, discriminator_forward,
    generator_forward, init_discriminator, init_generator, DiscriminatorSpec, GeneratorKind,
    GeneratorVariant, NetworkSpec,
};
use crate::objective::{total_g_loss, Adversarial, LossWeights};
use crate::raster::{MaskGrid, RasterGrid};
use crate::synthcity::SceneTriple;
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Mode, ParamStore, Tensor};
use crate::tiling::{
    cut_patch, plan_inference_tiles, sample_training_patch, stitch, NormPair, NormSpec, TileWindow,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: GeneratorVariant,
    pub disc_width: usize,
    pub disc_on_pan: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// Random patches per epoch; `None` means total scene area over patch
    /// area, rounded up.
    pub patches_per_epoch: Option<usize>,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub adversarial: Adversarial,
    pub seed: u64,
    /// Epochs between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Skip discriminator updates.
    pub freeze_discriminator: bool,
    /// Epochs between validation passes; 0 disables validation.
    pub validate_every: usize,
}

impl TrainConfig {
    /// Patch 64, depth 6, width 16, 30 epochs, batch 5.
    pub fn desk(kind: GeneratorKind, seed: u64) -> Self {
        TrainConfig {
            variant: GeneratorVariant::new(kind, 6, 16),
            disc_width: 16,
            disc_on_pan: false,
            epochs: 30,
            batch_size: 5,
            patches_per_epoch: None,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            adversarial: Adversarial::LeastSquares,
            seed,
            checkpoint_every: 0,
            freeze_discriminator: false,
            validate_every: 1,
        }
    }

    /// Patch 256, depth 8, width 64, 200 epochs, batch 5.
    pub fn paper(kind: GeneratorKind, seed: u64) -> Self {
        TrainConfig {
            variant: GeneratorVariant::new(kind, 8, 64),
            disc_width: 64,
            epochs: 200,
            ..Self::desk(kind, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.kind == GeneratorKind::Identity {
            return Err(Error::Config(
                "the identity generator cannot be trained".into(),
            ));
        }
        self.variant.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        if self.patches_per_epoch == Some(0) {
            return Err(Error::Config("an epoch needs at least one patch".into()));
        }
        Ok(())
    }

    pub fn descriptor(&self, norms: Option<NormPair>) -> Descriptor {
        Descriptor {
            variant: self.variant,
            disc_width: self.disc_width,
            disc_on_pan: self.disc_on_pan,
            adversarial: self.adversarial,
            norms,
        }
    }
}

/// Patches per epoch for a split when not configured explicitly.
pub fn default_patches_per_epoch(scenes: &[SceneTriple], patch: usize) -> usize {
    let area: usize = scenes.iter().map(|s| s.width() * s.height()).sum();
    area.div_ceil(patch * patch)
}

/// Rounds a range to the `f32` values stored in checkpoints so a resumed
/// run uses exactly the mapping of the original one.
fn f32_exact(s: NormSpec) -> Result<NormSpec> {
    NormSpec::new(s.kind, s.lo as f32 as f64, s.hi as f32 as f64)
}

/// Mutable state of a training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen_spec: NetworkSpec,
    pub disc_spec: DiscriminatorSpec,
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub g_opt: AdamState<f32>,
    pub d_opt: AdamState<f32>,
    pub norms: NormPair,
    pub spacing: (f64, f64),
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: usize,
    rng: ChaCha8Rng,
}

fn check_split(scenes: &[SceneTriple], patch: usize) -> Result<(f64, f64)> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::Config("training split is empty".into()))?;
    let spacing = first.dsm_gt.spacing();
    for s in scenes {
        if s.width() < patch || s.height() < patch {
            return Err(Error::Shape(format!(
                "scene {}x{} is smaller than patch {patch}",
                s.width(),
                s.height()
            )));
        }
        if s.dsm_gt.spacing() != spacing {
            return Err(Error::Config(
                "training scenes have different pixel spacings".into(),
            ));
        }
    }
    Ok(spacing)
}

impl Trainer {
    /// Fits the normalization on `scenes` and initializes both networks.
    pub fn new(cfg: TrainConfig, scenes: &[SceneTriple]) -> Result<Self> {
        cfg.validate()?;
        let gen_spec = build_generator(cfg.variant)?;
        let disc_spec = build_discriminator(cfg.disc_width, cfg.disc_on_pan, gen_spec.patch)?;
        let spacing = check_split(scenes, gen_spec.patch)?;
        let fitted = NormPair::fit(scenes)?;
        let norms = NormPair {
            height: f32_exact(fitted.height)?,
            intensity: f32_exact(fitted.intensity)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = init_generator(&gen_spec, &mut rng)?;
        let discriminator = init_discriminator(&disc_spec, &mut rng)?;
        Ok(Trainer {
            g_opt: AdamState::new(cfg.adam, &generator),
            d_opt: AdamState::new(cfg.adam, &discriminator),
            cfg,
            gen_spec,
            disc_spec,
            generator,
            discriminator,
            norms,
            spacing,
            epoch: 0,
            step: 0,
            rng,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: TrainConfig, scenes: &[SceneTriple], ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ckpt.descriptor != cfg.descriptor(ckpt.descriptor.norms) {
            return Err(Error::Checkpoint(
                "checkpoint architecture differs from the training configuration".into(),
            ));
        }
        let norms = *ckpt.norms()?;
        let gen_spec = build_generator(cfg.variant)?;
        let disc_spec = build_discriminator(cfg.disc_width, cfg.disc_on_pan, gen_spec.patch)?;
        let spacing = check_split(scenes, gen_spec.patch)?;
        let opt = ckpt.optimizer.ok_or_else(|| {
            Error::Checkpoint("checkpoint has no optimizer state to resume from".into())
        })?;
        let rng = ckpt
            .rng
            .ok_or_else(|| Error::Checkpoint("checkpoint has no random stream position".into()))?
            .restore();
        let (mut g_opt, mut d_opt) = (opt.generator, opt.discriminator);
        g_opt.config = cfg.adam;
        d_opt.config = cfg.adam;
        Ok(Trainer {
            cfg,
            gen_spec,
            disc_spec,
            generator: ckpt.generator,
            discriminator: ckpt.discriminator,
            g_opt,
            d_opt,
            norms,
            spacing,
            epoch: ckpt.epoch as usize,
            step: ckpt.step as usize,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            descriptor: self.cfg.descriptor(Some(self.norms)),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            optimizer: Some(OptimizerState {
                generator: self.g_opt.clone(),
                discriminator: self.d_opt.clone(),
            }),
            rng: Some(RngState::capture(&self.rng)),
            epoch: self.epoch as u32,
            step: self.step as u64,
        }
    }

    fn sample_batch(&mut self, scenes: &[SceneTriple]) -> Result<[Tensor<f32>; 3]> {
        let patch = self.gen_spec.patch;
        let mut pans = Vec::with_capacity(self.cfg.batch_size);
        let mut dsms = Vec::with_capacity(self.cfg.batch_size);
        let mut gts = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let k = self.rng.random_range(0..scenes.len());
            let p = sample_training_patch(&scenes[k], patch, &self.norms, &mut self.rng)?;
            pans.push(p.pan);
            dsms.push(p.dsm);
            gts.push(p.gt);
        }
        Ok([
            Tensor::stack(&pans)?,
            Tensor::stack(&dsms)?,
            Tensor::stack(&gts)?,
        ])
    }

    /// One discriminator update followed by one generator update. On a
    /// non-finite loss or gradient nothing is modified.
    pub fn step(&mut self, scenes: &[SceneTriple], epoch: usize) -> Result<TrainLogRow> {
        let start = Instant::now();
        let [pan, dsm, gt] = self.sample_batch(scenes)?;
        let mut g = Graph::<f32>::new();
        let pan = g.constant(pan);
        let dsm = g.constant(dsm);
        let gt = g.constant(gt);
        let g_bound = self.generator.bind(&mut g, true);
        let fake = generator_forward(
            &mut g,
            &self.gen_spec,
            &self.generator,
            &g_bound,
            pan,
            dsm,
            Mode::Train,
            &mut self.rng,
        )?;
        let pan_cond = self.disc_spec.condition_on_pan.then_some(pan);

        // discriminator step on detached fakes
        let fake_const = g.detach(fake.out);
        let d_bound = self.discriminator.bind(&mut g, true);
        let d_real = discriminator_forward(
            &mut g,
            &self.disc_spec,
            &self.discriminator,
            &d_bound,
            dsm,
            gt,
            pan_cond,
            Mode::Train,
        )?;
        let d_fake = discriminator_forward(
            &mut g,
            &self.disc_spec,
            &self.discriminator,
            &d_bound,
            dsm,
            fake_const,
            pan_cond,
            Mode::Train,
        )?;
        let d_loss = self
            .cfg
            .adversarial
            .d_loss(&mut g, d_real.out, d_fake.out)?;
        let d_value = g.value(d_loss).item() as f64;
        if !d_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "discriminator loss {d_value} at step {}",
                self.step + 1
            )));
        }
        let mut d_update = None;
        if !self.cfg.freeze_discriminator {
            let grads = g.backward(d_loss)?;
            d_update = Some(self.discriminator.collect_grads(&d_bound, &grads));
        }

        // generator step against the updated discriminator
        let mut d_next = self.discriminator.clone();
        let mut d_opt_next = self.d_opt.clone();
        if let Some(grads) = &d_update {
            adam_step(&mut d_next, grads, &mut d_opt_next)
                .map_err(|e| Error::NonFinite(e.to_string()))?;
            apply_bn_updates(&mut d_next, &d_real.bn);
            apply_bn_updates(&mut d_next, &d_fake.bn);
        }
        let d_frozen = d_next.bind(&mut g, false);
        let d_gen = discriminator_forward(
            &mut g,
            &self.disc_spec,
            &d_next,
            &d_frozen,
            dsm,
            fake.out,
            pan_cond,
            Mode::Train,
        )?;
        let (total, parts) = total_g_loss(
            &mut g,
            self.cfg.adversarial,
            d_gen.out,
            fake.out,
            gt,
            &self.norms.height,
            self.spacing,
            self.cfg.weights,
        )?;
        if ![parts.adv, parts.l1, parts.normal, parts.total]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(format!(
                "generator loss {parts:?} at step {}",
                self.step + 1
            )));
        }
        let grads = g.backward(total)?;
        let g_grads = self.generator.collect_grads(&g_bound, &grads);
        let mut g_next = self.generator.clone();
        let mut g_opt_next = self.g_opt.clone();
        adam_step(&mut g_next, &g_grads, &mut g_opt_next)
            .map_err(|e| Error::NonFinite(e.to_string()))?;
        apply_bn_updates(&mut g_next, &fake.bn);

        self.discriminator = d_next;
        self.d_opt = d_opt_next;
        self.generator = g_next;
        self.g_opt = g_opt_next;
        self.step += 1;
        Ok(TrainLogRow {
            epoch,
            step: self.step,
            d_loss: d_value,
            g_adv: parts.adv,
            g_l1: parts.l1,
            g_normal: parts.normal,
            g_total: parts.total,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    pub fn patches_per_epoch(&self, scenes: &[SceneTriple]) -> usize {
        self.cfg
            .patches_per_epoch
            .unwrap_or_else(|| default_patches_per_epoch(scenes, self.gen_spec.patch))
    }

    /// Steps of one epoch; the last step may complete a partial batch.
    pub fn steps_per_epoch(&self, scenes: &[SceneTriple]) -> usize {
        self.patches_per_epoch(scenes).div_ceil(self.cfg.batch_size)
    }

    /// Current generator with the training normalization, for inference.
    pub fn inference_model(&self) -> Model {
        Model {
            spec: self.gen_spec.clone(),
            params: self.generator.clone(),
            norms: self.norms,
        }
    }
}

/// When a checkpoint is offered to the caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointEvent {
    /// Intermediate checkpoint after the given epoch.
    Epoch(usize),
    Final,
    /// State before the failing step of an aborted run.
    LastGood,
}

/// Log rows and final checkpoint of a run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
    pub validation: Vec<ValRow>,
}

/// Runs the remaining epochs of `trainer`. `on_checkpoint` receives
/// intermediate, final and last-good checkpoints.
pub fn run(
    trainer: &mut Trainer,
    scenes: &[SceneTriple],
    val: Option<&SceneTriple>,
    mut on_checkpoint: impl FnMut(&Checkpoint, CheckpointEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    let steps = trainer.steps_per_epoch(scenes);
    let mut log = Vec::new();
    let mut validation = Vec::new();
    while trainer.epoch < trainer.cfg.epochs {
        let epoch = trainer.epoch + 1;
        for _ in 0..steps {
            match trainer.step(scenes, epoch) {
                Ok(row) => log.push(row),
                Err(e @ Error::NonFinite(_)) => {
                    on_checkpoint(&trainer.checkpoint(), CheckpointEvent::LastGood)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        trainer.epoch = epoch;
        let every = trainer.cfg.validate_every;
        if let Some(v) = val.filter(|_| every > 0 && epoch.is_multiple_of(every)) {
            let pred = infer_scene(&trainer.inference_model(), &v.pan, &v.dsm_photo)?;
            validation.push(ValRow {
                epoch,
                rmse: validation_rmse(&pred, &v.dsm_gt, &v.mask)?,
            });
        }
        let cadence = trainer.cfg.checkpoint_every;
        if cadence > 0 && epoch.is_multiple_of(cadence) && epoch < trainer.cfg.epochs {
            on_checkpoint(&trainer.checkpoint(), CheckpointEvent::Epoch(epoch))?;
        }
    }
    let checkpoint = trainer.checkpoint();
    on_checkpoint(&checkpoint, CheckpointEvent::Final)?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        validation,
    })
}

/// Trains from scratch.
pub fn train(
    scenes: &[SceneTriple],
    val: Option<&SceneTriple>,
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(&Checkpoint, CheckpointEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), scenes)?;
    run(&mut trainer, scenes, val, on_checkpoint)
}

/// RMSE in metres over building pixels, or over the whole scene when it
/// has none.
pub fn validation_rmse(pred: &RasterGrid, gt: &RasterGrid, mask: &MaskGrid) -> Result<f64> {
    if mask.count() > 0 {
        evalmetrics::rmse(pred, gt, mask)
    } else {
        evalmetrics::rmse(pred, gt, &MaskGrid::full_like(gt))
    }
}

/// Generator parameters with the normalization they were trained under.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: ParamStore<f32>,
    pub norms: NormPair,
}

impl Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let norms = *ckpt.norms()?;
        Ok(Model {
            spec: build_generator(ckpt.descriptor.variant)?,
            params: ckpt.generator.clone(),
            norms,
        })
    }

    /// Parameter-free model returning its height input, for pipeline tests.
    pub fn identity(patch_depth: usize, norms: NormPair) -> Result<Self> {
        let variant = GeneratorVariant::new(GeneratorKind::Identity, patch_depth, 1);
        Ok(Model {
            spec: build_generator(variant)?,
            params: ParamStore::new(),
            norms,
        })
    }

    pub fn patch(&self) -> usize {
        self.spec.patch
    }
}

/// Number of tiles [`infer_scene`] evaluates for a raster.
pub fn tile_count(model: &Model, width: usize, height: usize) -> Result<usize> {
    Ok(plan_inference_tiles(width, height, model.patch())?.len())
}

/// Tiles evaluated together in one inference batch.
const INFER_BATCH: usize = 16;

/// Refined DSM in metres over the full extent of the inputs.
pub fn infer_scene(model: &Model, pan: &RasterGrid, dsm: &RasterGrid) -> Result<RasterGrid> {
    infer_scene_threads(model, pan, dsm, 1)
}

type Tiles = Vec<(TileWindow, Vec<f32>)>;

/// [`infer_scene`] with tile batches spread over `threads` workers. The
/// result does not depend on the thread count.
pub fn infer_scene_threads(
    model: &Model,
    pan: &RasterGrid,
    dsm: &RasterGrid,
    threads: usize,
) -> Result<RasterGrid> {
    dsm.check_aligned(pan, "PAN vs DSM")?;
    let plan = plan_inference_tiles(dsm.width(), dsm.height(), model.patch())?;
    let chunks: Vec<&[TileWindow]> = plan.chunks(INFER_BATCH).collect();
    let workers = threads.clamp(1, chunks.len());
    let per_worker = chunks.len().div_ceil(workers);
    let results: Vec<Result<Tiles>> = if workers == 1 {
        chunks
            .iter()
            .map(|c| infer_tiles(model, pan, dsm, c))
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .chunks(per_worker)
                .map(|group| {
                    scope.spawn(move || {
                        group
                            .iter()
                            .map(|c| infer_tiles(model, pan, dsm, c))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("inference worker panicked"))
                .collect()
        })
    };
    let mut tiles = Vec::with_capacity(plan.len());
    for r in results {
        tiles.extend(r?);
    }
    let values = stitch(&tiles, dsm.width(), dsm.height())?;
    let values = values
        .into_iter()
        .zip(dsm.values())
        .map(|(v, &src)| if src == dsm.nodata() { src } else { v })
        .collect();
    dsm.with_values(values)
}

/// Heights in metres for one batch of windows.
fn infer_tiles(
    model: &Model,
    pan: &RasterGrid,
    dsm: &RasterGrid,
    windows: &[TileWindow],
) -> Result<Vec<(TileWindow, Vec<f32>)>> {
    let patch = model.patch();
    let heights = model.norms.height;
    let pans = windows
        .iter()
        .map(|&w| cut_patch(pan, w, &model.norms.intensity))
        .collect::<Result<Vec<_>>>()?;
    let dsms = windows
        .iter()
        .map(|&w| cut_patch(dsm, w, &heights))
        .collect::<Result<Vec<_>>>()?;
    let mut g = Graph::<f32>::new();
    let p = g.constant(Tensor::stack(&pans)?);
    let d = g.constant(Tensor::stack(&dsms)?);
    let bound = model.params.bind(&mut g, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = generator_forward(
        &mut g,
        &model.spec,
        &model.params,
        &bound,
        p,
        d,
        Mode::Eval,
        &mut rng,
    )?;
    let values = g.value(out.out).data();
    Ok(windows
        .iter()
        .enumerate()
        .map(|(i, &win)| {
            let tile = &values[i * patch * patch..(i + 1) * patch * patch];
            (
                win,
                tile.iter()
                    .map(|&v| heights.inverse(v as f64) as f32)
                    .collect(),
            )
        })
        .collect())
}

/// Height range covering a single raster, for ad-hoc inference without a
/// trained mapping.
pub fn norms_for(pan: &RasterGrid, dsm: &RasterGrid) -> Result<NormPair> {
    Ok(NormPair {
        height: NormSpec::fit_heights(&[dsm])?,
        intensity: NormSpec::fit_intensity(&[pan])?,
    })
}
