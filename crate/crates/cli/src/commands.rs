use std::path::{Path, PathBuf};

use dsmfuse::evalmetrics::{evaluate, to_table, write_csv};
use dsmfuse::network::GeneratorKind;
use dsmfuse::objective::{Adversarial, LossWeights};
use dsmfuse::raster::{
    extract_profile, read_rfg, read_rfm, render_png, write_rfg, write_rfm, RenderMode, Sun,
};
use dsmfuse::synthcity::{
    generate_scene, sidecar_text, DegradeConfig, SceneConfig, SceneTriple, SIDECAR_FILE,
};
use dsmfuse::trainer::{
    infer_scene_threads, load_checkpoint, log_csv, run, save_checkpoint, CheckpointEvent, Model,
    TrainConfig, Trainer,
};

use crate::{
    with_suffix, AdversarialArg, Artifacts, CliError, CliResult, Command, EvalArgs, InferArgs,
    Profile, ProfileArgs, RenderArgs, RenderModeArg, SynthArgs, TrainArgs, Variant,
};

pub const PAN_FILE: &str = "pan.rfg";
pub const DSM_PHOTO_FILE: &str = "dsm_photo.rfg";
pub const DSM_GT_FILE: &str = "dsm_gt.rfg";
pub const MASK_FILE: &str = "mask.rfm";

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn push(args: &mut Vec<String>, flag: &str, value: impl ToString) {
    args.push(format!("--{flag}"));
    args.push(value.to_string());
}

fn push_all<T: ToString>(args: &mut Vec<String>, flag: &str, values: &[T]) {
    if !values.is_empty() {
        args.push(format!("--{flag}"));
        args.extend(values.iter().map(|v| v.to_string()));
    }
}

fn stems(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            )
        })
        .collect()
}

fn labels(given: &[String], paths: &[PathBuf], what: &str) -> CliResult<Vec<String>> {
    if given.is_empty() {
        return Ok(stems(paths));
    }
    if given.len() != paths.len() {
        return Err(CliError::Usage(format!(
            "{} labels given for {} {what}",
            given.len(),
            paths.len()
        )));
    }
    Ok(given.to_vec())
}

fn kind_of(v: Variant) -> GeneratorKind {
    match v {
        Variant::Hybrid => GeneratorKind::Hybrid,
        Variant::Wnet => GeneratorKind::WNet,
        Variant::Single => GeneratorKind::SingleStream,
    }
}

/// Training configuration with every override applied.
pub fn train_config(a: &TrainArgs) -> TrainConfig {
    let kind = kind_of(a.variant);
    let mut cfg = match a.profile {
        Profile::Desk => TrainConfig::desk(kind, a.seed),
        Profile::Paper => TrainConfig::paper(kind, a.seed),
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.patches_per_epoch = a.patches_per_epoch.or(cfg.patches_per_epoch);
    cfg.weights = LossWeights {
        lambda: a.lambda.unwrap_or(cfg.weights.lambda),
        gamma: a.gamma.unwrap_or(cfg.weights.gamma),
    };
    cfg.adam.lr = a.lr.unwrap_or(cfg.adam.lr);
    cfg.adversarial = match a.adversarial {
        AdversarialArg::Lsgan => Adversarial::LeastSquares,
        AdversarialArg::Bce => Adversarial::LogLikelihood,
    };
    cfg.disc_on_pan = a.disc_on_pan;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.validate_every = usize::from(a.val.is_some());
    cfg
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    out.parent()
        .map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn train_log_path(a: &TrainArgs) -> PathBuf {
    a.log
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "train_log.csv"))
}

fn val_log_path(a: &TrainArgs) -> PathBuf {
    a.val_log
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "val_log.csv"))
}

/// The command's arguments with every default resolved, so a replay does
/// not depend on the defaults of a later build.
pub fn full_args(command: &Command) -> CliResult<Vec<String>> {
    let mut v = Vec::new();
    match command {
        Command::Synth(a) => {
            v.push("synth".into());
            push(&mut v, "out", p(&a.out));
            push(&mut v, "size", a.size);
            push(&mut v, "buildings", a.buildings);
            push(&mut v, "seed", a.seed);
            push(&mut v, "degrade-preset", &a.degrade_preset);
            push(&mut v, "degrade-seed", a.degrade_seed.unwrap_or(a.seed));
        }
        Command::Train(a) => {
            let cfg = train_config(a);
            v.push("train".into());
            push_all(
                &mut v,
                "data",
                &a.data.iter().map(|d| p(d)).collect::<Vec<_>>(),
            );
            if let Some(val) = &a.val {
                push(&mut v, "val", p(val));
            }
            push(&mut v, "variant", format!("{:?}", a.variant).to_lowercase());
            push(&mut v, "profile", format!("{:?}", a.profile).to_lowercase());
            push(&mut v, "epochs", cfg.epochs);
            push(&mut v, "batch-size", cfg.batch_size);
            if let Some(n) = cfg.patches_per_epoch {
                push(&mut v, "patches-per-epoch", n);
            }
            push(&mut v, "lambda", cfg.weights.lambda);
            push(&mut v, "gamma", cfg.weights.gamma);
            push(&mut v, "adversarial", cfg.adversarial.name());
            push(&mut v, "lr", cfg.adam.lr);
            push(&mut v, "seed", a.seed);
            push(&mut v, "out", p(&a.out));
            push(&mut v, "log", p(&train_log_path(a)));
            push(&mut v, "val-log", p(&val_log_path(a)));
            push(&mut v, "checkpoint-every", a.checkpoint_every);
            if a.disc_on_pan {
                v.push("--disc-on-pan".into());
            }
            if a.wall_time {
                v.push("--wall-time".into());
            }
            if let Some(r) = &a.resume {
                push(&mut v, "resume", p(r));
            }
        }
        Command::Infer(a) => {
            v.push("infer".into());
            push(&mut v, "ckpt", p(&a.ckpt));
            push(&mut v, "pan", p(&a.pan));
            push(&mut v, "dsm", p(&a.dsm));
            push(&mut v, "out", p(&a.out));
        }
        Command::Eval(a) => {
            v.push("eval".into());
            push_all(
                &mut v,
                "pred",
                &a.pred.iter().map(|d| p(d)).collect::<Vec<_>>(),
            );
            push_all(&mut v, "label", &labels(&a.label, &a.pred, "predictions")?);
            push(&mut v, "gt", p(&a.gt));
            push(&mut v, "mask", p(&a.mask));
            push(&mut v, "out", p(&a.out));
        }
        Command::Render(a) => {
            v.push("render".into());
            push(&mut v, "input", p(&a.input));
            push(&mut v, "out", p(&a.out));
            push(&mut v, "mode", format!("{:?}", a.mode).to_lowercase());
            push(&mut v, "azimuth", a.azimuth);
            push(&mut v, "altitude", a.altitude);
        }
        Command::Profile(a) => {
            v.push("profile".into());
            push_all(
                &mut v,
                "input",
                &a.input.iter().map(|d| p(d)).collect::<Vec<_>>(),
            );
            push_all(&mut v, "label", &labels(&a.label, &a.input, "inputs")?);
            push(&mut v, "from", &a.from);
            push(&mut v, "to", &a.to);
            push(&mut v, "samples", a.samples);
            push(&mut v, "out", p(&a.out));
        }
        Command::Replay(a) => {
            v.push("replay".into());
            v.push(p(&a.manifest));
        }
    }
    Ok(v)
}

pub fn dispatch(command: &Command, threads: usize) -> CliResult<Artifacts> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a, threads),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
        Command::Profile(a) => profile(a),
        Command::Replay(_) => unreachable!("replay is dispatched before command execution"),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Creates the directories above each output path.
fn ensure_parents<'a>(paths: impl IntoIterator<Item = &'a Path>) -> CliResult<()> {
    for dir in paths
        .into_iter()
        .filter_map(Path::parent)
        .filter(|d| !d.as_os_str().is_empty())
    {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> CliResult<Artifacts> {
    let cfg = SceneConfig::desk(a.size, a.buildings, a.seed);
    let degrade_seed = a.degrade_seed.unwrap_or(a.seed);
    let deg = DegradeConfig::preset(&a.degrade_preset, degrade_seed).ok_or_else(|| {
        CliError::Usage(format!("unknown degradation preset `{}`", a.degrade_preset))
    })?;
    let scene = generate_scene(&cfg, &deg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let outputs: Vec<PathBuf> = [
        PAN_FILE,
        DSM_PHOTO_FILE,
        DSM_GT_FILE,
        MASK_FILE,
        SIDECAR_FILE,
    ]
    .iter()
    .map(|f| a.out.join(f))
    .collect();
    write_rfg(&scene.pan, &outputs[0])?;
    write_rfg(&scene.dsm_photo, &outputs[1])?;
    write_rfg(&scene.dsm_gt, &outputs[2])?;
    write_rfm(&scene.mask, &outputs[3])?;
    write_text(&outputs[4], &sidecar_text(&cfg, &deg))?;
    println!(
        "scene {}: {} building pixels",
        a.out.display(),
        scene.mask.count()
    );
    Ok(Artifacts {
        inputs: Vec::new(),
        outputs,
        seeds: vec![("scene".into(), a.seed), ("degrade".into(), degrade_seed)],
    })
}

fn scene_files(dir: &Path) -> Vec<PathBuf> {
    [PAN_FILE, DSM_PHOTO_FILE, DSM_GT_FILE, MASK_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

/// Reads the four rasters of a scene directory.
pub fn load_scene(dir: &Path) -> CliResult<SceneTriple> {
    let f = scene_files(dir);
    Ok(SceneTriple::new(
        read_rfg(&f[0])?,
        read_rfg(&f[1])?,
        read_rfg(&f[2])?,
        read_rfm(&f[3])?,
    )?)
}

fn train_cmd(a: &TrainArgs) -> CliResult<Artifacts> {
    let cfg = train_config(a);
    let scenes = a
        .data
        .iter()
        .map(|d| load_scene(d))
        .collect::<CliResult<Vec<_>>>()?;
    let val = a.val.as_deref().map(load_scene).transpose()?;
    ensure_parents([a.out.as_path(), &train_log_path(a), &val_log_path(a)])?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(cfg, &scenes, load_checkpoint(path)?)?,
        None => Trainer::new(cfg, &scenes)?,
    };
    let mut outputs = Vec::new();
    let result = run(&mut trainer, &scenes, val.as_ref(), |ckpt, event| {
        let path = match event {
            CheckpointEvent::Final => a.out.clone(),
            CheckpointEvent::Epoch(e) => with_suffix(&a.out, &format!(".epoch{e}")),
            CheckpointEvent::LastGood => with_suffix(&a.out, ".lastgood"),
        };
        save_checkpoint(ckpt, &path)?;
        outputs.push(path);
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            for path in &outputs {
                eprintln!("wrote {}", path.display());
            }
            return Err(e.into());
        }
    };
    let log_path = train_log_path(a);
    write_text(&log_path, &log_csv(&outcome.log, a.wall_time))?;
    outputs.push(log_path);
    if val.is_some() {
        let mut text = String::from("epoch,rmse_m\n");
        for row in &outcome.validation {
            text.push_str(&format!("{},{:.9e}\n", row.epoch, row.rmse));
        }
        let path = val_log_path(a);
        write_text(&path, &text)?;
        outputs.push(path);
    }
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {} step {}: g_total {:.6} d_loss {:.6}",
            last.epoch, last.step, last.g_total, last.d_loss
        );
    }
    if let Some(v) = outcome.validation.last() {
        println!("validation RMSE after epoch {}: {:.4} m", v.epoch, v.rmse);
    }
    let mut inputs: Vec<PathBuf> = a.data.iter().flat_map(|d| scene_files(d)).collect();
    if let Some(v) = &a.val {
        inputs.extend(scene_files(v));
    }
    inputs.extend(a.resume.iter().cloned());
    Ok(Artifacts {
        inputs,
        outputs,
        seeds: vec![("train".into(), a.seed)],
    })
}

fn infer(a: &InferArgs, threads: usize) -> CliResult<Artifacts> {
    let model = Model::from_checkpoint(&load_checkpoint(&a.ckpt)?)?;
    let pan = read_rfg(&a.pan)?;
    let dsm = read_rfg(&a.dsm)?;
    let refined = infer_scene_threads(&model, &pan, &dsm, threads)?;
    ensure_parents([a.out.as_path()])?;
    write_rfg(&refined, &a.out)?;
    Ok(Artifacts {
        inputs: vec![a.ckpt.clone(), a.pan.clone(), a.dsm.clone()],
        outputs: vec![a.out.clone()],
        seeds: Vec::new(),
    })
}

fn eval(a: &EvalArgs) -> CliResult<Artifacts> {
    let names = labels(&a.label, &a.pred, "predictions")?;
    let gt = read_rfg(&a.gt)?;
    let mask = read_rfm(&a.mask)?;
    let reports = a
        .pred
        .iter()
        .zip(&names)
        .map(|(path, label)| Ok(evaluate(&read_rfg(path)?, &gt, &mask, label)?))
        .collect::<CliResult<Vec<_>>>()?;
    ensure_parents([a.out.as_path()])?;
    write_csv(&reports, &a.out)?;
    print!("{}", to_table(&reports));
    let mut inputs = a.pred.clone();
    inputs.extend([a.gt.clone(), a.mask.clone()]);
    Ok(Artifacts {
        inputs,
        outputs: vec![a.out.clone()],
        seeds: Vec::new(),
    })
}

fn render(a: &RenderArgs) -> CliResult<Artifacts> {
    let grid = read_rfg(&a.input)?;
    let mode = match a.mode {
        RenderModeArg::Hillshade => RenderMode::Hillshade(Sun {
            azimuth_deg: a.azimuth,
            altitude_deg: a.altitude,
        }),
        RenderModeArg::Colormap => RenderMode::Colormap,
    };
    ensure_parents([a.out.as_path()])?;
    render_png(&grid, mode, &a.out)?;
    Ok(Artifacts {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        seeds: Vec::new(),
    })
}

fn point(s: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("expected a point `x,y`, got `{s}`"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        x.trim().parse().map_err(|_| bad())?,
        y.trim().parse().map_err(|_| bad())?,
    ))
}

fn profile(a: &ProfileArgs) -> CliResult<Artifacts> {
    let names = labels(&a.label, &a.input, "inputs")?;
    let (p0, p1) = (point(&a.from)?, point(&a.to)?);
    let profiles = a
        .input
        .iter()
        .map(|path| Ok(extract_profile(&read_rfg(path)?, p0, p1, a.samples)?))
        .collect::<CliResult<Vec<_>>>()?;
    let mut text = String::from("distance_m");
    if names.len() == 1 {
        text.push_str(",height_m");
    } else {
        for n in &names {
            text.push(',');
            text.push_str(n);
        }
    }
    text.push('\n');
    for i in 0..a.samples {
        text.push_str(&format!("{:.6}", profiles[0][i].0));
        for prof in &profiles {
            text.push_str(&format!(",{:.6}", prof[i].1));
        }
        text.push('\n');
    }
    ensure_parents([a.out.as_path()])?;
    write_text(&a.out, &text)?;
    Ok(Artifacts {
        inputs: a.input.clone(),
        outputs: vec![a.out.clone()],
        seeds: Vec::new(),
    })
}
