//! The conditional generator: one residual temporal-convolution stack per
//! body region (hands, torso), FiLM-modulated by a style and flow-time
//! embedding.
//!
//! Each region sees the full noisy motion, its own channel slice, the beat
//! track and the seed pose (as a zero-padded track plus a mask). Block `b`
//! uses dilation `2^b` (capped at 8), so four blocks see ±31 frames.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::{channels_for, MotionSeq};
use crate::params::{BoundParams, ParamStore};
use crate::tape::{Gradients, Tape, Tensor, Var};

pub const SEED_FRAMES: usize = 8;
pub const KERNEL: usize = 3;
/// Width of the sinusoidal flow-time features.
pub const TIME_FEATURES: usize = 32;
pub const REGIONS: [&str; 2] = ["hand", "torso"];

/// Temporal dilation of both convolutions in residual block `block`.
pub fn dilation(block: usize) -> usize {
    1 << block.min(3)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub joints: usize,
    pub hand_joints: Vec<usize>,
    pub hidden: usize,
    pub blocks: usize,
    pub n_styles: usize,
    pub style_dim: usize,
    pub time_dim: usize,
}

impl NetConfig {
    pub fn new(joints: usize, hand_joints: Vec<usize>, n_styles: usize) -> Self {
        NetConfig { joints, hand_joints, hidden: 128, blocks: 4, n_styles, style_dim: 16, time_dim: 16 }
    }

    pub fn channels(&self) -> usize {
        channels_for(self.joints)
    }

    pub fn cond_dim(&self) -> usize {
        self.style_dim + self.time_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.blocks == 0 || self.n_styles == 0 || self.style_dim == 0 || self.time_dim == 0 {
            return Err(Error::BadConfig(format!("degenerate network config {self:?}")));
        }
        RegionPartition::new(self.joints, &self.hand_joints)?;
        Ok(())
    }

    /// Closed-form count of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (c, h, s) = (self.channels(), self.hidden, self.cond_dim());
        let part = RegionPartition::new(self.joints, &self.hand_joints).expect("validated partition");
        let shared = self.n_styles * self.style_dim + self.time_dim * TIME_FEATURES + self.time_dim;
        let region = |cr: usize| {
            let input = 2 * c + cr + 2;
            let stem = h * KERNEL * input + h;
            let block = 2 * (h * KERNEL * h + h) + 2 * (h * s + h);
            stem + self.blocks * block + cr * h + cr
        };
        shared + region(part.hand.len()) + region(part.torso.len())
    }
}

/// Channel-disjoint split of the motion layout into hand and torso channels.
/// The root translation belongs to the torso.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPartition {
    pub hand: Vec<usize>,
    pub torso: Vec<usize>,
}

impl RegionPartition {
    pub fn new(joints: usize, hand_joints: &[usize]) -> Result<Self> {
        let mut is_hand = vec![false; joints];
        for &j in hand_joints {
            if j >= joints || is_hand[j] {
                return Err(Error::PartitionMismatch(format!(
                    "hand joint {j} is out of range or repeated for {joints} joints"
                )));
            }
            is_hand[j] = true;
        }
        if hand_joints.is_empty() || hand_joints.len() == joints {
            return Err(Error::PartitionMismatch("both regions need at least one joint".into()));
        }
        let (mut hand, mut torso) = (Vec::new(), Vec::new());
        for (j, h) in is_hand.iter().enumerate() {
            let dst = if *h { &mut hand } else { &mut torso };
            dst.extend(6 * j..6 * j + 6);
        }
        torso.extend(6 * joints..6 * joints + 3);
        Ok(RegionPartition { hand, torso })
    }

    pub fn channels(&self) -> usize {
        self.hand.len() + self.torso.len()
    }

    /// Positions of each motion channel in `hand ++ torso`.
    pub fn merge_order(&self) -> Vec<usize> {
        let mut order = vec![0; self.channels()];
        for (i, &c) in self.hand.iter().chain(&self.torso).enumerate() {
            order[c] = i;
        }
        order
    }

    fn region(&self, r: usize) -> &[usize] {
        if r == 0 {
            &self.hand
        } else {
            &self.torso
        }
    }
}

/// Splits frame-major motion into `(hands, torso)` tensors.
pub fn split_regions(x: &MotionSeq, part: &RegionPartition) -> Result<(Tensor, Tensor)> {
    if x.channels() != part.channels() {
        return Err(Error::PartitionMismatch(format!(
            "partition covers {} channels, motion has {}",
            part.channels(),
            x.channels()
        )));
    }
    let pick = |cols: &[usize]| {
        let mut data = Vec::with_capacity(x.frames() * cols.len());
        for f in 0..x.frames() {
            let row = x.frame(f);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Tensor { rows: x.frames(), cols: cols.len(), data }
    };
    Ok((pick(&part.hand), pick(&part.torso)))
}

/// Inverse of [`split_regions`].
pub fn merge_regions(hands: &Tensor, torso: &Tensor, part: &RegionPartition, joints: usize) -> Result<MotionSeq> {
    if hands.cols != part.hand.len() || torso.cols != part.torso.len() || hands.rows != torso.rows {
        return Err(Error::PartitionMismatch("region tensors do not match the partition".into()));
    }
    let mut out = MotionSeq::zeros(hands.rows, joints);
    if out.channels() != part.channels() {
        return Err(Error::PartitionMismatch("joint count does not match the partition".into()));
    }
    for f in 0..hands.rows {
        let row = out.frame_mut(f);
        for (&c, v) in part.hand.iter().zip(hands.row(f)) {
            row[c] = *v;
        }
        for (&c, v) in part.torso.iter().zip(torso.row(f)) {
            row[c] = *v;
        }
    }
    Ok(out)
}

/// The per-clip part of the condition: what a dataset stores next to a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipCondition {
    pub style: usize,
    pub beat_track: Vec<f64>,
}

/// Everything the generator is conditioned on besides the noisy motion.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    /// One value in `[0, 1]` per frame.
    pub beat_track: Vec<f64>,
    pub style: usize,
    /// The first [`SEED_FRAMES`] frames, in the same space as the network input.
    pub seed_pose: MotionSeq,
    /// Flow time in `[0, 1]`.
    pub t: f64,
}

impl Condition {
    pub fn new(clip: &ClipCondition, seed_pose: MotionSeq, t: f64) -> Self {
        Condition { beat_track: clip.beat_track.clone(), style: clip.style, seed_pose, t }
    }
}

pub fn time_features(t: f64) -> Tensor {
    let mut data = Vec::with_capacity(TIME_FEATURES);
    for k in 0..TIME_FEATURES / 2 {
        let w = PI * (k + 1) as f64 * t;
        data.push(w.sin());
        data.push(w.cos());
    }
    Tensor::row_vector(data)
}

fn init_normal(store: &mut ParamStore, name: &str, rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) {
    let std = if gain == 0.0 { 0.0 } else { gain / (cols as f64).sqrt() };
    store.insert_normal(name, rows, cols, std, rng);
}

/// Deterministic initialization. FiLM heads start at zero so modulation is
/// the identity until training moves them.
pub fn init_params(seed: u64, cfg: &NetConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let part = RegionPartition::new(cfg.joints, &cfg.hand_joints)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let (c, h, s) = (cfg.channels(), cfg.hidden, cfg.cond_dim());
    p.insert_normal("style.table", cfg.n_styles, cfg.style_dim, 1.0, &mut rng);
    init_normal(&mut p, "time.w", cfg.time_dim, TIME_FEATURES, 1.0, &mut rng);
    p.insert_normal("time.b", 1, cfg.time_dim, 0.0, &mut rng);
    let residual_gain = 1.0 / (cfg.blocks as f64).sqrt();
    for (r, name) in REGIONS.iter().enumerate() {
        let cr = part.region(r).len();
        init_normal(&mut p, &format!("{name}.in.w"), h, KERNEL * (2 * c + cr + 2), 1.0, &mut rng);
        p.insert_normal(&format!("{name}.in.b"), 1, h, 0.0, &mut rng);
        for b in 0..cfg.blocks {
            let pre = format!("{name}.b{b}");
            init_normal(&mut p, &format!("{pre}.conv1.w"), h, KERNEL * h, 1.0, &mut rng);
            p.insert_normal(&format!("{pre}.conv1.b"), 1, h, 0.0, &mut rng);
            init_normal(&mut p, &format!("{pre}.conv2.w"), h, KERNEL * h, residual_gain, &mut rng);
            p.insert_normal(&format!("{pre}.conv2.b"), 1, h, 0.0, &mut rng);
            for head in ["gamma", "beta"] {
                p.insert_normal(&format!("{pre}.{head}.w"), h, s, 0.0, &mut rng);
                p.insert_normal(&format!("{pre}.{head}.b"), 1, h, 0.0, &mut rng);
            }
        }
        init_normal(&mut p, &format!("{name}.out.w"), cr, h, 1.0, &mut rng);
        p.insert_normal(&format!("{name}.out.b"), 1, cr, 0.0, &mut rng);
    }
    Ok(p)
}

/// Network configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    cfg: NetConfig,
    part: RegionPartition,
    params: ParamStore,
}

/// Handles of one recorded forward pass.
pub struct ForwardGraph {
    pub input: Var,
    pub output: Var,
}

impl Generator {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        let params = init_params(seed, &cfg)?;
        Generator::from_params(cfg, params)
    }

    pub fn from_params(cfg: NetConfig, params: ParamStore) -> Result<Self> {
        let part = RegionPartition::new(cfg.joints, &cfg.hand_joints)?;
        let reference = init_params(0, &cfg)?;
        if reference.len() != params.len() {
            return Err(Error::Format(format!("{} parameter arrays, expected {}", params.len(), reference.len())));
        }
        for (i, (n, t)) in reference.iter().enumerate() {
            let got = params.tensor(i);
            if params.name(i) != n || got.rows != t.rows || got.cols != t.cols {
                return Err(Error::Format(format!("parameter `{}` does not match `{n}`", params.name(i))));
            }
        }
        Ok(Generator { cfg, part, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn partition(&self) -> &RegionPartition {
        &self.part
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check(&self, x: &MotionSeq, cond: &Condition) -> Result<()> {
        if x.joints() != self.cfg.joints {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} joints, got {}",
                self.cfg.joints,
                x.joints()
            )));
        }
        if x.frames() < SEED_FRAMES {
            return Err(Error::SequenceTooShort { needed: SEED_FRAMES, got: x.frames() });
        }
        if cond.beat_track.len() != x.frames() {
            return Err(Error::ShapeMismatch(format!(
                "beat track has {} frames, motion {}",
                cond.beat_track.len(),
                x.frames()
            )));
        }
        if cond.seed_pose.frames() != SEED_FRAMES || cond.seed_pose.joints() != self.cfg.joints {
            return Err(Error::ShapeMismatch(format!(
                "seed pose must be {SEED_FRAMES} frames of {} joints",
                self.cfg.joints
            )));
        }
        if cond.style >= self.cfg.n_styles {
            return Err(Error::BadConfig(format!("style {} outside {} styles", cond.style, self.cfg.n_styles)));
        }
        if !(0.0..=1.0).contains(&cond.t) {
            return Err(Error::BadConfig(format!("flow time {} outside [0, 1]", cond.t)));
        }
        Ok(())
    }

    /// Beat track, seed track and seed mask as one `T × (C + 2)` tensor.
    fn context(&self, frames: usize, cond: &Condition) -> Tensor {
        let c = self.cfg.channels();
        let mut data = Vec::with_capacity(frames * (c + 2));
        for f in 0..frames {
            data.push(cond.beat_track[f]);
            if f < SEED_FRAMES {
                data.extend_from_slice(cond.seed_pose.frame(f));
                data.push(1.0);
            } else {
                data.extend(std::iter::repeat_n(0.0, c + 1));
            }
        }
        Tensor { rows: frames, cols: c + 2, data }
    }

    fn embedding(&self, tape: &mut Tape, p: &BoundParams, cond: &Condition) -> Result<Var> {
        let style = tape.select_row(p.var("style.table")?, cond.style)?;
        let tf = tape.leaf(time_features(cond.t));
        let te = tape.linear(tf, p.var("time.w")?, p.var("time.b")?)?;
        let te = tape.silu(te);
        tape.concat(&[style, te])
    }

    fn film(&self, tape: &mut Tape, p: &BoundParams, pre: &str, s: Var) -> Result<(Var, Var)> {
        let gamma = tape.linear(s, p.var(&format!("{pre}.gamma.w"))?, p.var(&format!("{pre}.gamma.b"))?)?;
        let scale = tape.add_scalar(gamma, 1.0);
        let shift = tape.linear(s, p.var(&format!("{pre}.beta.w"))?, p.var(&format!("{pre}.beta.b"))?)?;
        Ok((scale, shift))
    }

    /// Records the forward pass of `x_t` on `tape` against bound parameters.
    pub fn record(&self, tape: &mut Tape, p: &BoundParams, x_t: &MotionSeq, cond: &Condition) -> Result<ForwardGraph> {
        self.check(x_t, cond)?;
        let frames = x_t.frames();
        let x = tape.leaf(Tensor { rows: frames, cols: x_t.channels(), data: x_t.data().to_vec() });
        let ctx = tape.leaf(self.context(frames, cond));
        let s = self.embedding(tape, p, cond)?;
        let mut outs = Vec::with_capacity(REGIONS.len());
        for (r, name) in REGIONS.iter().enumerate() {
            let slice = tape.gather_cols(x, self.part.region(r))?;
            let input = tape.concat(&[x, slice, ctx])?;
            let mut h =
                tape.conv(input, p.var(&format!("{name}.in.w"))?, p.var(&format!("{name}.in.b"))?, KERNEL, 1)?;
            for b in 0..self.cfg.blocks {
                let pre = format!("{name}.b{b}");
                let d = dilation(b);
                let a = tape.silu(h);
                let a = tape.dilated_conv(
                    a,
                    p.var(&format!("{pre}.conv1.w"))?,
                    p.var(&format!("{pre}.conv1.b"))?,
                    KERNEL,
                    d,
                )?;
                let (scale, shift) = self.film(tape, p, &pre, s)?;
                let a = tape.mul_row(a, scale)?;
                let a = tape.add_row(a, shift)?;
                let a = tape.silu(a);
                let a = tape.dilated_conv(
                    a,
                    p.var(&format!("{pre}.conv2.w"))?,
                    p.var(&format!("{pre}.conv2.b"))?,
                    KERNEL,
                    d,
                )?;
                h = tape.add(h, a)?;
            }
            outs.push(tape.linear(h, p.var(&format!("{name}.out.w"))?, p.var(&format!("{name}.out.b"))?)?);
        }
        let both = tape.concat(&outs)?;
        let output = tape.gather_cols(both, &self.part.merge_order())?;
        Ok(ForwardGraph { input: x, output })
    }

    /// Predicted clean motion for `x_t`.
    pub fn forward(&self, x_t: &MotionSeq, cond: &Condition) -> Result<MotionSeq> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let g = self.record(&mut tape, &p, x_t, cond)?;
        let out = tape.value(g.output);
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss("generator produced non-finite output".into()));
        }
        MotionSeq::from_data(x_t.frames(), x_t.joints(), out.data.clone())
    }

    /// Output and parameter gradients of `<seed, f(x_t, c)>`.
    pub fn forward_backward(
        &self,
        x_t: &MotionSeq,
        cond: &Condition,
        upstream: impl FnOnce(&MotionSeq) -> Result<Vec<f64>>,
    ) -> Result<(MotionSeq, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let g = self.record(&mut tape, &p, x_t, cond)?;
        let out = MotionSeq::from_data(x_t.frames(), x_t.joints(), tape.value(g.output).data.clone())?;
        let seed = upstream(&out)?;
        let seed = Tensor::from_vec(out.frames(), out.channels(), seed)?;
        let mut grads: Gradients = tape.backward_from(g.output, seed)?;
        Ok((out, p.collect(&mut grads)))
    }

    /// FiLM scale and shift of one block for a condition (region 0 = hands).
    pub fn film_modulation(&self, cond: &Condition, region: usize, block: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if region >= REGIONS.len() || block >= self.cfg.blocks {
            return Err(Error::BadConfig(format!("no block {block} in region {region}")));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let s = self.embedding(&mut tape, &p, cond)?;
        let (scale, shift) = self.film(&mut tape, &p, &format!("{}.b{block}", REGIONS[region]), s)?;
        Ok((tape.value(scale).data.clone(), tape.value(shift).data.clone()))
    }
}
