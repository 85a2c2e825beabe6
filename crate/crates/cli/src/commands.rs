use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use bgseg::baselines::sweep::{write_sweep_csv, SweepItem};
use bgseg::baselines::{
    default_grid, pca_background, pca_fit, rpca_update, threshold_classify, threshold_sweep, RpcaState,
};
use bgseg::checkpoint::Checkpoint;
use bgseg::config::RunConfig;
use bgseg::data::augment::{paste_objects, Sprite};
use bgseg::data::eval::{format_table, write_reports_csv, Evaluation};
use bgseg::data::imageio::{load_mask, save_mask, save_rgb};
use bgseg::data::sample::resize_image;
use bgseg::data::{synth_sequence, write_sequence, FrameSample, Normalization, SyntheticSceneSpec};
use bgseg::pipeline::{
    fill_missing_backgrounds, infer_end_to_end, overall_f_measure, run_training_schedule, write_loss_csv,
    TrainingEvent, TwoStageModel,
};
use bgseg::segmentation::LabelMap;
use bgseg::Tensor;

use crate::dataset::{load_all, prepare_out, Sequence};
use crate::{Common, EvalArgs, Method, RunArgs, Scene, Split, SweepArgs, SynthArgs, UsageError};

/// Frames per inference call.
const CHUNK: usize = 4;

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("training.seed={seed}"));
    }
    let cfg = RunConfig::resolve(common.profile.as_deref(), common.config.as_deref(), &overrides)?;
    log::info!("resolved configuration:\n{}", cfg.to_toml_string()?);
    Ok(cfg)
}

fn load_model(checkpoint: Option<&Path>, command: &str) -> Result<TwoStageModel> {
    let path = checkpoint.ok_or_else(|| UsageError(format!("{command} needs --checkpoint")))?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    log::info!(
        "checkpoint {}: {} completed steps, channels {:?}",
        path.display(),
        ckpt.meta.completed_steps,
        ckpt.meta.channel_order
    );
    Ok(ckpt.into_model()?)
}

fn frame_file(dir: &Path, prefix: &str, n: usize) -> PathBuf {
    dir.join(format!("{prefix}{n:06}.png"))
}

/// Pastes sprites into labelled training frames that show no foreground, so the
/// segmenter sees positives on every sequence.
fn paste_into_empty_frames(samples: &mut [FrameSample], seed: u64) -> Result<usize> {
    let mut pasted = 0;
    for (i, s) in samples.iter_mut().enumerate() {
        if s.labels.scorable() == 0 || s.labels.has_foreground() {
            continue;
        }
        let size = (s.height().min(s.width()) / 6).max(2);
        *s = paste_objects(s, &Sprite::library(size), None, seed.wrapping_add(i as u64))?.0;
        pasted += 1;
    }
    Ok(pasted)
}

pub fn train(a: &RunArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    if a.checkpoint.is_some() {
        return Err(UsageError("train starts from fresh weights and does not take --checkpoint".into()).into());
    }
    prepare_out(&a.out, &[&a.data])?;
    let seqs = load_all(&a.data, cfg.data.label_mode)?;
    let mut train = Vec::new();
    for s in &seqs {
        train.extend(s.select(Split::Train)?.into_iter().cloned());
    }
    fill_missing_backgrounds(&mut train)?;
    if cfg.data.paste_objects {
        let n = paste_into_empty_frames(&mut train, cfg.training.seed)?;
        log::info!("pasted sprites into {n} training frames without foreground");
    }
    fs::write(a.out.join("config.toml"), cfg.to_toml_string()?)?;

    let norm = Normalization::from_samples(&train)?;
    let mut model = TwoStageModel::initialized(cfg.model.clone(), norm, cfg.training.init, cfg.training.seed)?;
    let start = Instant::now();
    let history = run_training_schedule(&mut model, &cfg.training, &train, |event| {
        match event {
            TrainingEvent::Iteration(r) => {
                if r.iteration % 100 == 0 {
                    log::info!("step {} iteration {} joint loss {:.6}", r.step, r.iteration, r.joint);
                }
            }
            TrainingEvent::StepFinished { step, model } => {
                let path = a.out.join(format!("step{step}.bgfg"));
                Checkpoint::from_model(model, Some(&cfg.training), step).save(&path)?;
                log::info!("step {step} finished after {:.1}s, wrote {}", start.elapsed().as_secs_f64(), path.display());
            }
        }
        Ok(())
    })?;
    write_loss_csv(BufWriter::new(File::create(a.out.join("losses.csv"))?), &history)?;
    log::info!("training-split F {:.4}", overall_f_measure(&model, &train)?);
    Ok(())
}

/// Runs the model over every frame; writes backgrounds and, with `masks`, binary
/// masks at the frame's own resolution.
pub fn infer(a: &RunArgs, masks: bool) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let model = load_model(a.checkpoint.as_deref(), if masks { "infer" } else { "reconstruct" })?;
    prepare_out(&a.out, &[&a.data])?;
    for seq in load_all(&a.data, cfg.data.label_mode)? {
        let dir = seq.out_dir(&a.out);
        let (bg_dir, mask_dir) = (dir.join("background"), dir.join("mask"));
        fs::create_dir_all(&bg_dir)?;
        if masks {
            fs::create_dir_all(&mask_dir)?;
        }
        for chunk in seq.frames.chunks(CHUNK) {
            let frames: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
            let out = infer_end_to_end(&model, &frames)?;
            for (i, s) in chunk.iter().enumerate() {
                save_rgb(&frame_file(&bg_dir, "bg", s.frame_index), &out.background.batch_item(i)?)?;
                if masks {
                    let m = out.masks[i].resize_nearest(s.height(), s.width());
                    save_mask(&frame_file(&mask_dir, "bin", s.frame_index), &m)?;
                }
            }
        }
        log::info!("wrote {}", dir.display());
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let seqs = load_all(&a.data, cfg.data.label_mode)?;
    let mut ev = Evaluation::new();
    match (&a.checkpoint, &a.masks) {
        (Some(ckpt), None) => {
            let model = load_model(Some(ckpt), "eval")?;
            let s2 = model.config.stage2_size;
            for seq in &seqs {
                let chosen = seq.select(a.split)?;
                for chunk in chosen.chunks(CHUNK) {
                    let frames: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
                    let out = infer_end_to_end(&model, &frames)?;
                    for (s, m) in chunk.iter().zip(&out.masks) {
                        let labels = s.labels.resize_nearest(s2, s2);
                        ev.add_frame(&seq.entry.category, &seq.entry.name, s.frame_index, m, &labels)?;
                    }
                }
            }
        }
        (None, Some(root)) => {
            for seq in &seqs {
                let dir = seq.out_dir(root).join("mask");
                for s in seq.select(a.split)? {
                    if s.labels.scorable() == 0 {
                        continue;
                    }
                    let path = frame_file(&dir, "bin", s.frame_index);
                    if !path.is_file() {
                        return Err(bgseg::Error::Data(format!("missing mask {}", path.display())).into());
                    }
                    let m = load_mask(&path)?.resize_nearest(s.height(), s.width());
                    ev.add_frame(&seq.entry.category, &seq.entry.name, s.frame_index, &m, &s.labels)?;
                }
            }
        }
        _ => return Err(UsageError("eval needs exactly one of --checkpoint or --masks".into()).into()),
    }
    let reports = ev.reports()?;
    print!("{}", format_table(&reports));
    if let Some(out) = &a.out {
        let mut inputs = vec![a.data.as_path()];
        inputs.extend(a.masks.as_deref());
        prepare_out(out, &inputs)?;
        write_reports_csv(BufWriter::new(File::create(out.join("reports.csv"))?), &reports)?;
    }
    Ok(())
}

/// Training-half PCA model of one sequence.
fn fit_pca(seq: &Sequence, rank: usize) -> Result<bgseg::baselines::PcaBackgroundModel> {
    let train: Vec<Tensor> = seq.select(Split::Train)?.into_iter().map(|s| s.image.clone()).collect();
    let k = rank.min(train.len());
    if k < rank {
        log::warn!("{}: PCA rank lowered to {k}, the number of training frames", seq.entry.name);
    }
    Ok(pca_fit(&train, k)?)
}

/// Streams every frame through robust PCA and returns the low-rank part per frame.
fn rpca_backgrounds(seq: &Sequence, cfg: &RunConfig) -> Result<Vec<Tensor>> {
    let mut state = RpcaState::new(cfg.baselines.rpca_rank, cfg.baselines.rpca_threshold)?;
    seq.frames
        .iter()
        .map(|s| Ok(rpca_update(&mut state, &s.image)?.0))
        .collect()
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    if a.checkpoint.is_some() && a.method != Method::Baseline1 {
        log::warn!("--checkpoint is only used by baseline1; ignoring it");
    }
    let model = match a.method {
        Method::Baseline1 => Some(load_model(a.checkpoint.as_deref(), "sweep --method baseline1")?),
        _ => None,
    };
    prepare_out(&a.out, &[&a.data])?;
    // (frame, background estimate, labels) at a common resolution.
    let mut scored: Vec<(Tensor, Tensor, LabelMap)> = Vec::new();
    for seq in load_all(&a.data, cfg.data.label_mode)? {
        match a.method {
            Method::Pca => {
                let pca = fit_pca(&seq, cfg.baselines.pca_rank)?;
                for s in seq.select(a.split)? {
                    scored.push((s.image.clone(), pca_background(&pca, &s.image)?, s.labels.clone()));
                }
            }
            Method::Rpca => {
                let mut backgrounds = rpca_backgrounds(&seq, &cfg)?;
                for i in seq.indices(a.split)? {
                    let s = &seq.frames[i];
                    let bg = std::mem::replace(&mut backgrounds[i], Tensor::zeros(vec![0]));
                    scored.push((s.image.clone(), bg, s.labels.clone()));
                }
            }
            Method::Baseline1 => {
                let model = model.as_ref().expect("loaded above");
                let s1 = model.config.stage1.input_size;
                let chosen = seq.select(a.split)?;
                for chunk in chosen.chunks(CHUNK) {
                    let frames: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
                    let out = infer_end_to_end(model, &frames)?;
                    for (i, s) in chunk.iter().enumerate() {
                        scored.push((
                            resize_image(&s.image, s1)?,
                            out.background.batch_item(i)?,
                            s.labels.resize_nearest(s1, s1),
                        ));
                    }
                }
            }
        }
    }
    let items: Vec<SweepItem<'_>> = scored
        .iter()
        .map(|(frame, background, labels)| SweepItem { frame, background, labels })
        .collect();
    let result = threshold_sweep(a.method.name(), &items, &default_grid())?;
    let path = a.out.join("sweep.csv");
    write_sweep_csv(BufWriter::new(File::create(&path)?), std::slice::from_ref(&result))?;
    log::info!(
        "{}: best F {:.4} at theta {:.2}; wrote {}",
        result.method,
        result.best.f_measure,
        result.best.theta,
        path.display()
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match a.scene {
        Scene::MovingSquare => SyntheticSceneSpec::moving_square(a.seed),
        Scene::Camouflage => SyntheticSceneSpec::camouflage(a.seed),
    };
    if let Some(n) = a.frames {
        spec.frames = n;
    }
    spec.validate()?;
    log::info!("scene: {spec:?}");
    prepare_out(&a.out, &[])?;
    let samples = synth_sequence(&spec)?;
    write_sequence(&a.out, &samples)?;
    log::info!("wrote {} frames to {}", samples.len(), a.out.display());
    Ok(())
}

/// Writes one background and one thresholded mask per frame.
fn write_baseline_outputs(seq: &Sequence, out: &Path, backgrounds: &[Tensor], theta: f64) -> Result<()> {
    let dir = seq.out_dir(out);
    let (bg_dir, mask_dir) = (dir.join("background"), dir.join("mask"));
    fs::create_dir_all(&bg_dir)?;
    fs::create_dir_all(&mask_dir)?;
    for (s, bg) in seq.frames.iter().zip(backgrounds) {
        save_rgb(&frame_file(&bg_dir, "bg", s.frame_index), bg)?;
        save_mask(&frame_file(&mask_dir, "bin", s.frame_index), &threshold_classify(&s.image, bg, theta)?)?;
    }
    log::info!("wrote {}", dir.display());
    Ok(())
}

pub fn pca(a: &RunArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    prepare_out(&a.out, &[&a.data])?;
    for seq in load_all(&a.data, cfg.data.label_mode)? {
        let model = fit_pca(&seq, cfg.baselines.pca_rank)?;
        let ratio: f64 = model.explained_variance_ratio().iter().sum();
        log::info!("{}: rank {} explains {:.4} of the variance", seq.entry.name, model.rank(), ratio);
        let backgrounds = seq
            .frames
            .iter()
            .map(|s| Ok(pca_background(&model, &s.image)?))
            .collect::<Result<Vec<_>>>()?;
        write_baseline_outputs(&seq, &a.out, &backgrounds, cfg.baselines.theta)?;
    }
    Ok(())
}

pub fn rpca(a: &RunArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    prepare_out(&a.out, &[&a.data])?;
    for seq in load_all(&a.data, cfg.data.label_mode)? {
        let backgrounds = rpca_backgrounds(&seq, &cfg)?;
        write_baseline_outputs(&seq, &a.out, &backgrounds, cfg.baselines.theta)?;
    }
    Ok(())
}
