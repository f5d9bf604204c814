use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gdiff_core::bvh::bvh_import;
use gdiff_core::flow::{sample_many, stream, FlowModel, FlowNoise, LossBreakdown, Trainer};
use gdiff_core::io::{
    read_clips, read_dataset, write_clip, DatasetDir, Manifest, ManifestRow, MotionFile, Split, MANIFEST, SKELETON_FILE,
};
use gdiff_core::metrics::{
    beat_align, beats_from_track, detect_motion_beats, diversity, extract_features, frechet_distance,
    smoothness_report, FeatureStats,
};
use gdiff_core::net::{ClipCondition, SEED_FRAMES};
use gdiff_core::params::ParamStore;
use gdiff_core::skeleton::{error_accumulation_experiment, AccumulationRow};
use gdiff_core::synth::{gen_dataset, gen_skeleton, hand_joints, Template};
use gdiff_core::temporal::{EncoderConfig, TemporalEncoder, TemporalVae};
use gdiff_core::{MotionSeq, Skeleton};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MODEL_FILE: &str = "model.gdpw";
pub const CHECKPOINT_FILE: &str = "checkpoint.gdpw";
pub const LOSS_FILE: &str = "loss.csv";

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::data(format!("{} does not exist", path.display())))
    }
}

pub fn cmd_fkdemo(depth: usize, epsilon: f64) -> Result<Vec<AccumulationRow>, CliError> {
    if depth < 2 {
        return Err(CliError::usage(format!("depth must be at least 2, got {depth}")));
    }
    Ok(error_accumulation_experiment(depth, epsilon)?)
}

pub fn fkdemo_csv(rows: &[AccumulationRow]) -> String {
    let mut s = String::from("depth,local,global\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e}", r.depth, r.local, r.global);
    }
    s
}

pub fn fkdemo_table(rows: &[AccumulationRow]) -> String {
    let mut s = format!("{:>5}  {:>14}  {:>14}  {:>8}\n", "depth", "local", "global", "ratio");
    for r in rows {
        let ratio = if r.global > 0.0 { r.local / r.global } else { 0.0 };
        let _ = writeln!(s, "{:>5}  {:>14.9}  {:>14.9}  {:>8.3}", r.depth, r.local, r.global, ratio);
    }
    s
}

/// Writes the synthetic dataset to `out` and returns its manifest.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let sc = cfg.synth()?;
    let out = cfg.path("out")?;
    let data = gen_dataset(&sc)?;
    ensure_dir(&out)?;
    fs::write(out.join(SKELETON_FILE), data.skeleton.to_text())?;
    let mut rows = Vec::with_capacity(sc.n_clips);
    for (split, clips) in [(Split::Train, &data.train), (Split::Val, &data.val)] {
        for c in clips {
            let name = format!("clip_{:05}", rows.len());
            write_clip(&out, &name, &c.motion, Some(&c.cond), sc.fps)?;
            rows.push(ManifestRow { name, style: c.cond.style, seed: c.seed, period: c.period, split });
        }
    }
    let manifest = Manifest { fps: sc.fps, hand_joints: hand_joints(sc.template), n_styles: sc.n_styles, rows };
    fs::write(out.join(MANIFEST), manifest.to_text())?;
    info!("wrote {} clips to {}", manifest.rows.len(), out.display());
    Ok(manifest)
}

/// Pre-trains the temporal VAE on `clips` and returns its frozen encoder.
pub fn pretrain_encoder(
    clips: &[MotionSeq],
    enc: EncoderConfig,
    steps: usize,
    lr: f64,
    beta: f64,
    batch: usize,
    seed: u64,
) -> Result<TemporalEncoder, CliError> {
    if clips.is_empty() {
        return Err(CliError::data("no clips to pre-train the encoder on"));
    }
    let mut vae = TemporalVae::new(enc, seed, lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e5c);
    for s in 0..steps {
        let b: Vec<MotionSeq> = (0..batch).map(|_| clips[rng.gen_range(0..clips.len())].clone()).collect();
        let st = vae.train_step(&b, beta)?;
        if s % 50 == 0 || s + 1 == steps {
            info!("encoder step {s}: recon {:.5} kl {:.3}", st.recon_mse, st.kl);
        }
    }
    Ok(vae.encoder())
}

/// Mean loss of the trainer's current generator on a fixed seeded batch.
pub fn probe_loss(tr: &Trainer, n: usize, seed: u64) -> Result<LossBreakdown, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<(usize, FlowNoise)> = (0..n)
        .map(|k| {
            let i = k % tr.examples().len();
            let m = &tr.examples()[i].normalized;
            (i, FlowNoise::sample(&mut rng, m.frames(), m.joints()))
        })
        .collect();
    Ok(tr.loss_and_grad(&batch)?.0)
}

/// Runs `tr` up to `steps` total steps, passing logged rows to `log`.
pub fn train_until(
    tr: &mut Trainer,
    steps: u64,
    log_every: u64,
    mut log: impl FnMut(u64, &LossBreakdown) -> Result<(), CliError>,
) -> Result<(), CliError> {
    while tr.step() < steps {
        let step = tr.step();
        let loss = tr.train_step()?;
        if step.is_multiple_of(log_every.max(1)) || step + 1 == steps {
            log(step, &loss)?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainFlags {
    pub resume: bool,
    pub no_lj: bool,
    pub no_ls: bool,
    pub no_lm: bool,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<(u64, LossBreakdown)>,
    pub model: PathBuf,
    pub checkpoint: PathBuf,
}

fn load_encoder(path: &Path) -> Result<TemporalEncoder, CliError> {
    let mut e = TemporalEncoder::from_params(&ParamStore::load(&existing(path.to_path_buf())?)?)?;
    e.freeze();
    Ok(e)
}

fn pairs(d: &DatasetDir) -> Vec<(MotionSeq, ClipCondition)> {
    if d.train.is_empty() {
        d.val.clone()
    } else {
        d.train.clone()
    }
}

pub fn cmd_train(cfg: &RunConfig, flags: TrainFlags) -> Result<TrainReport, CliError> {
    let data_dir = existing(cfg.path("data")?)?;
    let out = cfg.path("out")?;
    let mut fc = cfg.flow()?;
    if flags.no_lj {
        fc.lambda_j = 0.0;
    }
    if flags.no_ls {
        fc.lambda_s = 0.0;
    }
    if flags.no_lm {
        fc.lambda_m = 0.0;
    }
    let steps: u64 = cfg.get("steps")?;
    let log_every: u64 = cfg.get("log_every")?;
    let ds = read_dataset(&data_dir)?;
    let data = pairs(&ds);
    let (model, ckpt, loss_csv) = (out.join(MODEL_FILE), out.join(CHECKPOINT_FILE), out.join(LOSS_FILE));
    ensure_dir(&out)?;

    let mut tr = if flags.resume {
        let state = ParamStore::load(&existing(ckpt.clone())?)?;
        Trainer::resume(fc, ds.skeleton.clone(), &data, &state)?
    } else {
        let encoder = if fc.lambda_m > 0.0 {
            Some(match cfg.raw("encoder") {
                Some(p) => load_encoder(Path::new(p))?,
                None => {
                    let clips: Vec<MotionSeq> = data.iter().map(|p| p.0.clone()).collect();
                    pretrain_encoder(
                        &clips,
                        cfg.encoder(clips[0].channels())?,
                        cfg.get("vae_steps")?,
                        cfg.get("vae_lr")?,
                        cfg.get("vae_beta")?,
                        fc.batch_size,
                        fc.seed,
                    )?
                }
            })
        } else {
            None
        };
        let net = cfg.net(ds.skeleton.len(), ds.manifest.hand_joints.clone(), ds.manifest.n_styles.max(1))?;
        fs::write(&loss_csv, format!("{}\n", LossBreakdown::CSV_HEADER))?;
        Trainer::new(fc, net, ds.skeleton.clone(), &data, encoder)?
    };

    let mut csv = fs::read_to_string(&loss_csv).unwrap_or_else(|_| format!("{}\n", LossBreakdown::CSV_HEADER));
    let mut rows = Vec::new();
    train_until(&mut tr, steps, log_every, |step, loss| {
        csv.push_str(&loss.csv_row(step));
        csv.push('\n');
        info!("step {step}: total {:.6}", loss.total);
        rows.push((step, *loss));
        Ok(())
    })?;
    fs::write(&loss_csv, csv)?;
    tr.model().to_params().save(&model)?;
    tr.checkpoint().save(&ckpt)?;
    Ok(TrainReport { rows, model, checkpoint: ckpt })
}

fn load_model(cfg: &RunConfig) -> Result<FlowModel, CliError> {
    Ok(FlowModel::from_params(&ParamStore::load(&existing(cfg.path("model")?)?)?)?)
}

/// Conditions and seed poses of the dataset's validation clips (or all clips
/// if there is no validation split).
fn sampling_items(ds: &DatasetDir) -> Result<Vec<(ClipCondition, MotionSeq)>, CliError> {
    let src = if ds.val.is_empty() { &ds.train } else { &ds.val };
    src.iter().map(|(m, c)| Ok((c.clone(), m.window(0, SEED_FRAMES)?))).collect()
}

/// One sample per validation clip; returns the written clip names.
pub fn cmd_sample(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let model = load_model(cfg)?;
    let ds = read_dataset(&existing(cfg.path("data")?)?)?;
    let out = cfg.path("out")?;
    let items = sampling_items(&ds)?;
    let samples = sample_many(&model.gen, &model.norm, &items, cfg.get("sample_steps")?, cfg.seed()?)?;
    ensure_dir(&out)?;
    let mut names = Vec::with_capacity(samples.len());
    for (i, (m, (c, _))) in samples.iter().zip(&items).enumerate() {
        let name = format!("sample_{i:05}");
        write_clip(&out, &name, m, Some(c), ds.manifest.fps)?;
        names.push(name);
    }
    Ok(names)
}

/// Streams `n_stream` clips conditioned on consecutive validation clips.
pub fn cmd_stream(cfg: &RunConfig) -> Result<MotionSeq, CliError> {
    let model = load_model(cfg)?;
    let ds = read_dataset(&existing(cfg.path("data")?)?)?;
    let n: usize = cfg.get("n_stream")?;
    if n == 0 {
        return Err(CliError::usage("n_stream must be at least 1"));
    }
    let items = sampling_items(&ds)?;
    let conds: Vec<ClipCondition> = (0..n).map(|i| items[i % items.len()].0.clone()).collect();
    let motion = stream(&model.gen, &model.norm, &items[0].1, &conds, cfg.get("sample_steps")?, cfg.seed()?)?;
    let out = cfg.path("out")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    MotionFile { motion: motion.clone(), fps: ds.manifest.fps as f32 }.save(&out)?;
    Ok(motion)
}

/// Generated and ground-truth clips (with their condition tracks) to compare.
pub struct EvalInput<'a> {
    pub gen: &'a [(MotionSeq, Option<ClipCondition>)],
    pub gt: &'a [(MotionSeq, Option<ClipCondition>)],
}

fn mean_beat_align(
    clips: &[(MotionSeq, Option<ClipCondition>)],
    skel: &Skeleton,
    sigma: f64,
) -> Result<Option<f64>, CliError> {
    let mut total = 0.0;
    for (m, c) in clips {
        let Some(c) = c else { return Ok(None) };
        let cond_beats = beats_from_track(&c.beat_track);
        total += beat_align(&detect_motion_beats(m, skel)?, &cond_beats, sigma)?;
    }
    Ok(Some(total / clips.len() as f64))
}

fn mean_jerk(clips: &[(MotionSeq, Option<ClipCondition>)], skel: &Skeleton) -> Result<f64, CliError> {
    let mut total = 0.0;
    for (m, _) in clips {
        let r = smoothness_report(m, skel)?;
        total += r.iter().sum::<f64>() / r.len() as f64;
    }
    Ok(total / clips.len() as f64)
}

/// `(metric, value)` rows: FGD, BeatAlign, Diversity (raw, GT and their gap)
/// and mean RMS jerk.
pub fn evaluate(
    enc: &TemporalEncoder,
    skel: &Skeleton,
    input: &EvalInput,
    sigma: f64,
) -> Result<Vec<(String, f64)>, CliError> {
    let gen: Vec<MotionSeq> = input.gen.iter().map(|c| c.0.clone()).collect();
    let gt: Vec<MotionSeq> = input.gt.iter().map(|c| c.0.clone()).collect();
    let fg = FeatureStats::from_embeddings(&extract_features(enc, &gen)?)?;
    let ft = FeatureStats::from_embeddings(&extract_features(enc, &gt)?)?;
    let mut rows = vec![("fgd".to_string(), frechet_distance(&ft, &fg)?)];
    if let Some(v) = mean_beat_align(input.gen, skel, sigma)? {
        rows.push(("beat_align".into(), v));
    }
    if let Some(v) = mean_beat_align(input.gt, skel, sigma)? {
        rows.push(("beat_align_gt".into(), v));
    }
    let (dg, dt) = (diversity(&gen)?, diversity(&gt)?);
    rows.push(("diversity".into(), dg));
    rows.push(("diversity_gt".into(), dt));
    rows.push(("diversity_gap".into(), (dg - dt).abs()));
    rows.push(("jerk".into(), mean_jerk(input.gen, skel)?));
    rows.push(("jerk_gt".into(), mean_jerk(input.gt, skel)?));
    Ok(rows)
}

pub fn metrics_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn clip_dir(dir: &Path) -> Result<Vec<(MotionSeq, Option<ClipCondition>)>, CliError> {
    let clips = read_clips(&existing(dir.to_path_buf())?)?;
    if clips.is_empty() {
        return Err(CliError::data(format!("no motion files in {}", dir.display())));
    }
    Ok(clips.into_iter().map(|c| (c.motion, c.cond)).collect())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<(String, f64)>, CliError> {
    let gen_dir = cfg.path("gen")?;
    let gt_dir = cfg.path("gt")?;
    let gen = clip_dir(&gen_dir)?;
    let gt = clip_dir(&gt_dir)?;
    let skel = match fs::read_to_string(gt_dir.join(SKELETON_FILE)) {
        Ok(text) => Skeleton::parse(&text)?,
        Err(_) => gen_skeleton(cfg.template()?)?,
    };
    let enc_path = match cfg.raw("encoder") {
        Some(p) => PathBuf::from(p),
        None => cfg.path("model").map_err(|_| CliError::usage("eval needs `encoder` or `model` for FGD features"))?,
    };
    let enc = load_encoder(&enc_path)?;
    let rows = evaluate(&enc, &skel, &EvalInput { gen: &gen, gt: &gt }, cfg.get("sigma")?)?;
    if let Some(out) = cfg.raw("out") {
        fs::write(out, metrics_csv(&rows))?;
    }
    Ok(rows)
}

/// Imports a BVH file into `out/skeleton.txt` and `out/motion.gdmo`.
pub fn cmd_bvh_import(input: &Path, out: &Path) -> Result<(Skeleton, MotionSeq), CliError> {
    let b = bvh_import(&existing(input.to_path_buf())?)?;
    ensure_dir(out)?;
    fs::write(out.join(SKELETON_FILE), b.skeleton.to_text())?;
    MotionFile { motion: b.motion.clone(), fps: b.fps as f32 }.save(&out.join("motion.gdmo"))?;
    Ok((b.skeleton, b.motion))
}

pub fn cmd_skeleton_gen(template: Template) -> Result<Skeleton, CliError> {
    Ok(gen_skeleton(template)?)
}
