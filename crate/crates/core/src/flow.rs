//! Flow-matching training, the Euler sampler and seed-pose streaming.
//!
//! The network predicts the clean sample `x̂₁` from `x_t = (1 − t)·x₀ + t·x₁`
//! in per-channel standardized space. The spatial losses and the latent motion
//! loss are applied to the de-standardized prediction against the clip's
//! ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::constraints::{AnchorSet, FrameTargets, SpatialLoss};
use crate::error::{Error, Result};
use crate::motion::MotionSeq;
use crate::net::{ClipCondition, Condition, Generator, NetConfig, SEED_FRAMES};
use crate::optim::Adam;
use crate::params::{accumulate, ParamStore};
use crate::skeleton::Skeleton;
use crate::tape::Tensor;
use crate::temporal::{LatentEmbedding, TemporalEncoder};

pub const STD_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub sample_steps: usize,
    pub lambda_pos: f64,
    pub lambda_j: f64,
    pub lambda_s: f64,
    pub lambda_m: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            sample_steps: 20,
            lambda_pos: 1.0,
            lambda_j: 1.0,
            lambda_s: 1.0,
            lambda_m: 0.1,
            lr: 1e-4,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_pos, self.lambda_j, self.lambda_s, self.lambda_m];
        if self.sample_steps == 0
            || self.batch_size == 0
            || !(self.lr > 0.0 && self.lr.is_finite())
            || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::BadConfig(format!("invalid flow config {self:?}")));
        }
        Ok(())
    }
}

/// `(1 − t)·x₀ + t·x₁` elementwise.
pub fn interpolate(x0: &MotionSeq, x1: &MotionSeq, t: f64) -> Result<MotionSeq> {
    x0.same_shape(x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::BadConfig(format!("flow time {t} outside [0, 1]")));
    }
    let data = x0.data().iter().zip(x1.data()).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    MotionSeq::from_data(x0.frames(), x0.joints(), data)
}

/// Per-channel standardization fitted on training clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Normalizer { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn fit(clips: &[MotionSeq]) -> Result<Self> {
        let first = clips.first().ok_or(Error::TooFewClips(0))?;
        let c = first.channels();
        let (mut sum, mut sq, mut n) = (vec![0.0; c], vec![0.0; c], 0.0);
        for clip in clips {
            if clip.channels() != c {
                return Err(Error::ShapeMismatch("clips have different channel counts".into()));
            }
            for f in 0..clip.frames() {
                for (k, v) in clip.frame(f).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR)).collect();
        Ok(Normalizer { mean, std })
    }

    fn map(&self, x: &MotionSeq, f: impl Fn(f64, f64, f64) -> f64) -> Result<MotionSeq> {
        if x.channels() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "normalizer has {} channels, motion {}",
                self.mean.len(),
                x.channels()
            )));
        }
        let c = self.mean.len();
        let data = x.data().iter().enumerate().map(|(i, v)| f(*v, self.mean[i % c], self.std[i % c])).collect();
        MotionSeq::from_data(x.frames(), x.joints(), data)
    }

    pub fn normalize(&self, x: &MotionSeq) -> Result<MotionSeq> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &MotionSeq) -> Result<MotionSeq> {
        self.map(x, |v, m, s| v * s + m)
    }

    pub fn to_params(&self) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("mean", Tensor::row_vector(self.mean.clone()));
        p.insert("std", Tensor::row_vector(self.std.clone()));
        p
    }

    pub fn from_params(p: &ParamStore) -> Result<Self> {
        let mean = p.require("mean")?.data.clone();
        let std = p.require("std")?.data.clone();
        if mean.len() != std.len() || std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Format("invalid normalizer arrays".into()));
        }
        Ok(Normalizer { mean, std })
    }
}

/// Logged loss components of one step (batch means).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub simple: f64,
    pub pos: f64,
    pub j: f64,
    pub s: f64,
    pub m: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,simple,pos,j,s,m,total";

    pub fn csv_row(&self, step: u64) -> String {
        format!("{step},{},{},{},{},{},{}", self.simple, self.pos, self.j, self.s, self.m, self.total)
    }

    fn components(&self) -> [f64; 6] {
        [self.simple, self.pos, self.j, self.s, self.m, self.total]
    }

    fn add_scaled(&mut self, o: &LossBreakdown, w: f64) {
        self.simple += w * o.simple;
        self.pos += w * o.pos;
        self.j += w * o.j;
        self.s += w * o.s;
        self.m += w * o.m;
        self.total += w * o.total;
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite())
    }
}

/// A training clip with everything the objective needs precomputed.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub motion: MotionSeq,
    pub normalized: MotionSeq,
    pub cond: ClipCondition,
    pub targets: FrameTargets,
    pub latent: Option<LatentEmbedding>,
}

/// Flow time and source noise for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNoise {
    pub t: f64,
    pub x0: MotionSeq,
}

impl FlowNoise {
    pub fn sample<R: Rng>(rng: &mut R, frames: usize, joints: usize) -> Self {
        let t = rng.gen::<f64>();
        let mut x0 = MotionSeq::zeros(frames, joints);
        x0.data_mut().iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        FlowNoise { t, x0 }
    }
}

/// The weighted training objective.
#[derive(Clone, Debug)]
pub struct FlowObjective {
    pub cfg: FlowConfig,
    pub norm: Normalizer,
    pub spatial: SpatialLoss,
    pub encoder: Option<TemporalEncoder>,
}

impl FlowObjective {
    pub fn new(cfg: FlowConfig, norm: Normalizer, skel: Skeleton, encoder: Option<TemporalEncoder>) -> Result<Self> {
        cfg.validate()?;
        if cfg.lambda_m > 0.0 && encoder.is_none() {
            return Err(Error::BadConfig("the motion loss needs a frozen encoder".into()));
        }
        if let Some(e) = &encoder {
            if !e.is_frozen() {
                return Err(Error::BadConfig("the motion loss needs a frozen encoder".into()));
            }
        }
        let anchors = AnchorSet::for_skeleton(&skel)?;
        Ok(FlowObjective { cfg, norm, spatial: SpatialLoss::new(skel, anchors), encoder })
    }

    pub fn example(&self, motion: MotionSeq, cond: ClipCondition) -> Result<TrainExample> {
        if cond.beat_track.len() != motion.frames() {
            return Err(Error::LengthMismatch(cond.beat_track.len(), motion.frames()));
        }
        let normalized = self.norm.normalize(&motion)?;
        let targets = FrameTargets::from_motion(&motion, self.spatial.skeleton())?;
        let latent = match &self.encoder {
            Some(e) => Some(e.encode(&motion)?),
            None => None,
        };
        Ok(TrainExample { motion, normalized, cond, targets, latent })
    }

    /// Loss components of a standardized prediction of `ex` and the gradient of
    /// the weighted total with respect to that prediction.
    pub fn prediction_loss(&self, pred: &MotionSeq, ex: &TrainExample) -> Result<(LossBreakdown, Vec<f64>)> {
        pred.same_shape(&ex.normalized)?;
        let n = pred.data().len() as f64;
        let mut grad: Vec<f64> = pred.data().iter().zip(ex.normalized.data()).map(|(p, x)| 2.0 * (p - x) / n).collect();
        let mut out = LossBreakdown {
            simple: pred.data().iter().zip(ex.normalized.data()).map(|(p, x)| (p - x) * (p - x)).sum::<f64>() / n,
            ..LossBreakdown::default()
        };
        let cfg = &self.cfg;
        let spatial_on = cfg.lambda_pos > 0.0 || cfg.lambda_j > 0.0 || cfg.lambda_s > 0.0;
        if spatial_on || cfg.lambda_m > 0.0 {
            let raw = self.norm.denormalize(pred)?;
            let c = self.norm.std.len();
            let mut raw_grad = vec![0.0; grad.len()];
            if spatial_on {
                let terms = self.spatial.evaluate(&raw, &ex.targets)?;
                for (lambda, term, slot) in [
                    (cfg.lambda_pos, &terms.position, &mut out.pos),
                    (cfg.lambda_j, &terms.joint, &mut out.j),
                    (cfg.lambda_s, &terms.skeleton, &mut out.s),
                ] {
                    if lambda > 0.0 {
                        *slot = term.value;
                        raw_grad.iter_mut().zip(&term.grad).for_each(|(g, t)| *g += lambda * t);
                    }
                }
            }
            if cfg.lambda_m > 0.0 {
                let enc = self.encoder.as_ref().expect("checked at construction");
                let target =
                    ex.latent.as_ref().ok_or_else(|| Error::BadConfig("example has no latent target".into()))?;
                let lm = enc.motion_loss_to(&raw, target)?;
                out.m = lm.value;
                raw_grad.iter_mut().zip(&lm.grad).for_each(|(g, t)| *g += cfg.lambda_m * t);
            }
            for (i, g) in grad.iter_mut().enumerate() {
                *g += raw_grad[i] * self.norm.std[i % c];
            }
        }
        out.total =
            out.simple + cfg.lambda_pos * out.pos + cfg.lambda_j * out.j + cfg.lambda_s * out.s + cfg.lambda_m * out.m;
        if !out.is_finite() {
            return Err(Error::NonFiniteLoss(format!("{out:?}")));
        }
        Ok((out, grad))
    }

    /// Loss components and parameter gradients for one example and fixed noise.
    pub fn evaluate(
        &self,
        gen: &Generator,
        ex: &TrainExample,
        noise: &FlowNoise,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let x_t = interpolate(&noise.x0, &ex.normalized, noise.t)?;
        let seed_pose = ex.normalized.window(0, SEED_FRAMES)?;
        let cond = Condition::new(&ex.cond, seed_pose, noise.t);
        let mut breakdown = LossBreakdown::default();
        let (_, grads) = gen.forward_backward(&x_t, &cond, |pred| {
            let (b, g) = self.prediction_loss(pred, ex)?;
            breakdown = b;
            Ok(g)
        })?;
        Ok((breakdown, grads))
    }
}

/// Per-step generator: identical for a fresh run and a resumed one.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Generator, optimizer state and data for flow-matching training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub objective: FlowObjective,
    gen: Generator,
    adam: Adam,
    examples: Vec<TrainExample>,
    step: u64,
}

impl Trainer {
    pub fn new(
        cfg: FlowConfig,
        net: NetConfig,
        skel: Skeleton,
        data: &[(MotionSeq, ClipCondition)],
        encoder: Option<TemporalEncoder>,
    ) -> Result<Self> {
        let clips: Vec<MotionSeq> = data.iter().map(|(m, _)| m.clone()).collect();
        let norm = Normalizer::fit(&clips)?;
        let gen = Generator::new(net, cfg.seed)?;
        let adam = Adam::new(gen.params(), cfg.lr);
        Trainer::assemble(FlowObjective::new(cfg, norm, skel, encoder)?, gen, adam, data, 0)
    }

    fn assemble(
        objective: FlowObjective,
        gen: Generator,
        adam: Adam,
        data: &[(MotionSeq, ClipCondition)],
        step: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::TooFewClips(0));
        }
        let examples =
            data.par_iter().map(|(m, c)| objective.example(m.clone(), c.clone())).collect::<Result<Vec<_>>>()?;
        Ok(Trainer { objective, gen, adam, examples, step })
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Overwrites the generator weights from a flat vector.
    pub fn set_generator_params(&mut self, flat: &[f64]) -> Result<()> {
        self.gen.params_mut().set_flat(flat)
    }

    pub fn examples(&self) -> &[TrainExample] {
        &self.examples
    }

    /// Draws this step's batch indices and noise.
    pub fn batch_noise(&self) -> Vec<(usize, FlowNoise)> {
        let mut rng = step_rng(self.objective.cfg.seed, self.step);
        (0..self.objective.cfg.batch_size)
            .map(|_| {
                let i = rng.gen_range(0..self.examples.len());
                let m = &self.examples[i].normalized;
                (i, FlowNoise::sample(&mut rng, m.frames(), m.joints()))
            })
            .collect()
    }

    /// Batch-mean loss and gradients without updating anything.
    pub fn loss_and_grad(&self, batch: &[(usize, FlowNoise)]) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let results: Vec<(LossBreakdown, Vec<Tensor>)> = batch
            .par_iter()
            .map(|(i, noise)| self.objective.evaluate(&self.gen, &self.examples[*i], noise))
            .collect::<Result<_>>()?;
        let w = 1.0 / batch.len() as f64;
        let mut total = LossBreakdown::default();
        let mut grads = self.gen.params().zeros_like();
        for (b, g) in &results {
            total.add_scaled(b, w);
            accumulate(&mut grads, g, w);
        }
        Ok((total, grads))
    }

    /// One Adam step on a fresh batch.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let batch = self.batch_noise();
        let (loss, grads) = self.loss_and_grad(&batch)?;
        if !loss.is_finite() || grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss(format!("step {}: {loss:?}", self.step)));
        }
        self.adam.step(self.gen.params_mut(), &grads)?;
        self.step += 1;
        Ok(loss)
    }

    pub fn model(&self) -> FlowModel {
        FlowModel { gen: self.gen.clone(), norm: self.objective.norm.clone(), encoder: self.objective.encoder.clone() }
    }

    /// Everything needed to resume: weights, optimizer moments, normalizer,
    /// encoder and the step counter.
    pub fn checkpoint(&self) -> ParamStore {
        let mut p = self.model().to_params();
        p.merge_prefixed("adam.", &self.adam.state(self.gen.params()));
        p.insert("meta.step", Tensor::scalar(self.step as f64));
        p
    }

    /// Resumes from [`Trainer::checkpoint`] output. `cfg` supplies loss weights,
    /// batch size and seed; the learning rate is taken from `cfg` as well.
    pub fn resume(
        cfg: FlowConfig,
        skel: Skeleton,
        data: &[(MotionSeq, ClipCondition)],
        ckpt: &ParamStore,
    ) -> Result<Self> {
        let model = FlowModel::from_params(ckpt)?;
        let adam = Adam::restore(model.gen.params(), &ckpt.extract_prefixed("adam."), cfg.lr)?;
        let step = ckpt.require("meta.step")?.data[0] as u64;
        let objective = FlowObjective::new(cfg, model.norm, skel, model.encoder)?;
        Trainer::assemble(objective, model.gen, adam, data, step)
    }
}

/// A trained generator with its normalizer (and the encoder it was trained with).
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub gen: Generator,
    pub norm: Normalizer,
    pub encoder: Option<TemporalEncoder>,
}

impl FlowModel {
    pub fn to_params(&self) -> ParamStore {
        let cfg = self.gen.config();
        let mut p = ParamStore::new();
        let shape = [cfg.joints, cfg.hidden, cfg.blocks, cfg.n_styles, cfg.style_dim, cfg.time_dim];
        p.insert("meta.net", Tensor::row_vector(shape.iter().map(|v| *v as f64).collect()));
        p.insert("meta.hands", Tensor::row_vector(cfg.hand_joints.iter().map(|v| *v as f64).collect()));
        p.merge_prefixed("gen.", self.gen.params());
        p.merge_prefixed("norm.", &self.norm.to_params());
        if let Some(e) = &self.encoder {
            p.merge_prefixed("", e.params());
        }
        p
    }

    pub fn from_params(p: &ParamStore) -> Result<Self> {
        let shape: Vec<usize> = p.require("meta.net")?.data.iter().map(|v| *v as usize).collect();
        if shape.len() != 6 {
            return Err(Error::Format("`meta.net` must hold 6 values".into()));
        }
        let hands = p.require("meta.hands")?.data.iter().map(|v| *v as usize).collect();
        let cfg = NetConfig {
            joints: shape[0],
            hand_joints: hands,
            hidden: shape[1],
            blocks: shape[2],
            n_styles: shape[3],
            style_dim: shape[4],
            time_dim: shape[5],
        };
        let gen = Generator::from_params(cfg, p.extract_prefixed("gen."))?;
        let norm = Normalizer::from_params(&p.extract_prefixed("norm."))?;
        let encoder = if p.get("enc.s1.conv1.w").is_some() { Some(TemporalEncoder::from_params(p)?) } else { None };
        Ok(FlowModel { gen, norm, encoder })
    }
}

/// Anything that predicts the clean standardized sample from `x_t`.
pub trait Denoiser: Sync {
    fn predict(&self, x_t: &MotionSeq, cond: &Condition) -> Result<MotionSeq>;
}

impl Denoiser for Generator {
    fn predict(&self, x_t: &MotionSeq, cond: &Condition) -> Result<MotionSeq> {
        self.forward(x_t, cond)
    }
}

/// Euler integration of the velocity `(x̂₁ − x)/(1 − t)` from `t = 0`; the
/// answer is the last `x̂₁`, de-standardized. `seed_pose` is raw motion and
/// replaces the first [`SEED_FRAMES`] frames of every `x̂₁`.
pub fn sample(
    den: &dyn Denoiser,
    norm: &Normalizer,
    clip: &ClipCondition,
    seed_pose: &MotionSeq,
    steps: usize,
    noise_seed: u64,
) -> Result<MotionSeq> {
    if steps == 0 {
        return Err(Error::BadConfig("the sampler needs at least one step".into()));
    }
    if seed_pose.frames() != SEED_FRAMES {
        return Err(Error::ShapeMismatch(format!("seed pose must have {SEED_FRAMES} frames")));
    }
    let frames = clip.beat_track.len();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut x = FlowNoise::sample(&mut rng, frames, seed_pose.joints()).x0;
    let seed_std = norm.normalize(seed_pose)?;
    let dt = 1.0 / steps as f64;
    let t_max = 1.0 - 0.5 * dt;
    let mut pred = x.clone();
    for i in 0..steps {
        let t = (i as f64 * dt).min(t_max);
        pred = den.predict(&x, &Condition::new(clip, seed_std.clone(), t))?;
        for f in 0..SEED_FRAMES {
            pred.frame_mut(f).copy_from_slice(seed_std.frame(f));
        }
        if i + 1 < steps {
            let k = dt / (1.0 - t);
            for (xv, pv) in x.data_mut().iter_mut().zip(pred.data()) {
                *xv += (pv - *xv) * k;
            }
        }
    }
    norm.denormalize(&pred)
}

/// Samples `conds.len()` clips back to back, each seeded with the previous
/// clip's last [`SEED_FRAMES`] frames. Those frames are not repeated, so the
/// result has `Σ (Tᵢ − 8) + 8` frames. Clip `i` uses noise seed `seed + i`.
pub fn stream(
    den: &dyn Denoiser,
    norm: &Normalizer,
    first_seed: &MotionSeq,
    conds: &[ClipCondition],
    steps: usize,
    seed: u64,
) -> Result<MotionSeq> {
    let first = conds.first().ok_or_else(|| Error::BadConfig("stream needs at least one clip".into()))?;
    let mut out = sample(den, norm, first, first_seed, steps, seed)?;
    let mut prev = out.clone();
    for (i, cond) in conds.iter().enumerate().skip(1) {
        if cond.beat_track.len() <= SEED_FRAMES {
            return Err(Error::SequenceTooShort { needed: SEED_FRAMES + 1, got: cond.beat_track.len() });
        }
        let seed_pose = prev.window(prev.frames() - SEED_FRAMES, SEED_FRAMES)?;
        let clip = sample(den, norm, cond, &seed_pose, steps, seed.wrapping_add(i as u64))?;
        out.extend_from(&clip, SEED_FRAMES)?;
        prev = clip;
    }
    Ok(out)
}

/// One sample per `(condition, seed pose)`, in parallel, with seeds `seed + i`.
pub fn sample_many(
    den: &dyn Denoiser,
    norm: &Normalizer,
    items: &[(ClipCondition, MotionSeq)],
    steps: usize,
    seed: u64,
) -> Result<Vec<MotionSeq>> {
    items
        .par_iter()
        .enumerate()
        .map(|(i, (c, s))| sample(den, norm, c, s, steps, seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, hand_joints, SynthConfig, Template};
    use crate::temporal::EncoderConfig;

    struct Perfect(MotionSeq);

    impl Denoiser for Perfect {
        fn predict(&self, _: &MotionSeq, _: &Condition) -> Result<MotionSeq> {
            Ok(self.0.clone())
        }
    }

    fn data(n: usize) -> (Skeleton, Vec<(MotionSeq, ClipCondition)>) {
        let cfg =
            SynthConfig { template: Template::Chain(4), frames: 16, n_clips: n, n_styles: 2, ..SynthConfig::default() };
        let d = gen_dataset(&cfg).unwrap();
        let pairs = d.train.iter().chain(&d.val).map(|c| (c.motion.clone(), c.cond.clone())).collect();
        (d.skeleton, pairs)
    }

    fn net() -> NetConfig {
        NetConfig { hidden: 8, blocks: 1, ..NetConfig::new(4, hand_joints(Template::Chain(4)), 2) }
    }

    fn encoder() -> TemporalEncoder {
        let mut e = TemporalEncoder::new(EncoderConfig { hidden: 8, latent: 4, ..EncoderConfig::new(27) }, 3);
        e.freeze();
        e
    }

    #[test]
    fn interpolation() {
        let a = MotionSeq::zeros(2, 1);
        let b = MotionSeq::from_data(2, 1, vec![2.0; 18]).unwrap();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        assert!(interpolate(&a, &b, 0.5).unwrap().data().iter().all(|v| *v == 1.0));
        assert!(interpolate(&a, &MotionSeq::zeros(3, 1), 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn normalizer_roundtrip() {
        let (_, d) = data(10);
        let clips: Vec<MotionSeq> = d.iter().map(|p| p.0.clone()).collect();
        let n = Normalizer::fit(&clips).unwrap();
        assert!(n.std.iter().all(|s| *s >= STD_FLOOR));
        let z = n.normalize(&clips[0]).unwrap();
        let back = n.denormalize(&z).unwrap();
        assert!(back.data().iter().zip(clips[0].data()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(Normalizer::from_params(&n.to_params()).unwrap(), n);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let (skel, d) = data(10);
        let clips: Vec<MotionSeq> = d.iter().map(|p| p.0.clone()).collect();
        let obj =
            FlowObjective::new(FlowConfig::default(), Normalizer::fit(&clips).unwrap(), skel, Some(encoder())).unwrap();
        let ex = obj.example(d[0].0.clone(), d[0].1.clone()).unwrap();
        let (b, g) = obj.prediction_loss(&ex.normalized.clone(), &ex).unwrap();
        assert_eq!(b.simple, 0.0);
        assert!(b.pos.abs() < 1e-20 && b.j.abs() < 1e-20 && b.s.abs() < 1e-20 && b.m.abs() < 1e-20);
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_weights_give_simple_only() {
        let (skel, d) = data(10);
        let cfg = FlowConfig { lambda_pos: 0.0, lambda_j: 0.0, lambda_s: 0.0, lambda_m: 0.0, ..FlowConfig::default() };
        let mut tr = Trainer::new(cfg, net(), skel, &d, None).unwrap();
        let b = tr.train_step().unwrap();
        assert_eq!(b.total, b.simple);
        assert_eq!((b.pos, b.j, b.s, b.m), (0.0, 0.0, 0.0, 0.0));
        assert!(FlowObjective::new(FlowConfig::default(), tr.objective.norm.clone(), gen_skel(), None).is_err());
    }

    fn gen_skel() -> Skeleton {
        crate::synth::gen_skeleton(Template::Chain(4)).unwrap()
    }

    #[test]
    fn end_to_end_gradient() {
        let (skel, d) = data(10);
        let cfg = FlowConfig { batch_size: 2, ..FlowConfig::default() };
        let tr = Trainer::new(cfg, net(), skel, &d, Some(encoder())).unwrap();
        let batch = tr.batch_noise();
        let (_, grads) = tr.loss_and_grad(&batch).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data.iter().copied()).collect();
        let flat = tr.generator().params().flatten();
        let value = |p: &[f64]| {
            let mut t = tr.clone();
            t.gen.params_mut().set_flat(p)?;
            Ok(t.loss_and_grad(&batch)?.0.total)
        };
        let r = crate::gradcheck::fd_check_with(
            value,
            &flat,
            &analytic,
            1e-5,
            crate::gradcheck::Coverage::Subset { count: 100, seed: 2 },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn resume_is_bit_identical() {
        let (skel, d) = data(10);
        let cfg = FlowConfig { batch_size: 2, lr: 1e-3, ..FlowConfig::default() };
        let mut a = Trainer::new(cfg.clone(), net(), skel.clone(), &d, Some(encoder())).unwrap();
        for _ in 0..3 {
            a.train_step().unwrap();
        }
        let ckpt = ParamStore::from_bytes(&a.checkpoint().to_bytes()).unwrap();
        let mut b = Trainer::resume(cfg, skel, &d, &ckpt).unwrap();
        for _ in 0..3 {
            assert_eq!(a.train_step().unwrap(), b.train_step().unwrap());
        }
        assert_eq!(a.generator().params(), b.generator().params());
    }

    #[test]
    fn sampler_properties() {
        let (skel, d) = data(10);
        let tr = Trainer::new(FlowConfig::default(), net(), skel, &d, Some(encoder())).unwrap();
        let model = tr.model();
        let (clip, cond) = &d[0];
        let seed = clip.window(0, SEED_FRAMES).unwrap();
        let a = sample(&model.gen, &model.norm, cond, &seed, 4, 11).unwrap();
        assert_eq!(a, sample(&model.gen, &model.norm, cond, &seed, 4, 11).unwrap());
        assert_ne!(a, sample(&model.gen, &model.norm, cond, &seed, 4, 12).unwrap());

        // One step is a single prediction from pure noise at t = 0.
        let one = sample(&model.gen, &model.norm, cond, &seed, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = FlowNoise::sample(&mut rng, 16, 4).x0;
        let c = Condition::new(cond, model.norm.normalize(&seed).unwrap(), 0.0);
        let direct = model.norm.denormalize(&model.gen.forward(&x0, &c).unwrap()).unwrap();
        assert_eq!(
            one.window(SEED_FRAMES, 16 - SEED_FRAMES).unwrap(),
            direct.window(SEED_FRAMES, 16 - SEED_FRAMES).unwrap()
        );
        let head = one.window(0, SEED_FRAMES).unwrap();
        assert!(head.data().iter().zip(seed.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_ne!(one.window(0, SEED_FRAMES).unwrap(), direct.window(0, SEED_FRAMES).unwrap());

        let target = model.norm.normalize(clip).unwrap();
        for steps in [1, 2, 7, 20] {
            let out = sample(&Perfect(target.clone()), &model.norm, cond, &seed, steps, 3).unwrap();
            assert!(out.data().iter().zip(clip.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let id = Normalizer::identity(27);
        let out = sample(&Perfect(clip.clone()), &id, cond, &seed, 9, 3).unwrap();
        assert_eq!(&out, clip);
    }

    #[test]
    fn stream_lengths() {
        let (skel, d) = data(10);
        let tr = Trainer::new(FlowConfig::default(), net(), skel, &d, Some(encoder())).unwrap();
        let m = tr.model();
        let seed = d[0].0.window(0, SEED_FRAMES).unwrap();
        let conds: Vec<ClipCondition> = d.iter().take(3).map(|p| p.1.clone()).collect();
        let s = stream(&m.gen, &m.norm, &seed, &conds, 2, 7).unwrap();
        assert_eq!(s.frames(), 3 * (16 - 8) + 8);
        let one = stream(&m.gen, &m.norm, &seed, &conds[..1], 2, 7).unwrap();
        assert_eq!(one, sample(&m.gen, &m.norm, &conds[0], &seed, 2, 7).unwrap());
        assert_eq!(s.window(0, 16).unwrap(), one);
    }
}
