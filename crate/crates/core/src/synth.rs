//! Procedural skeletons and a beat-locked synthetic motion dataset.
//!
//! Every joint follows the same monotone ease profile between consecutive
//! beats, alternating direction each interval, so angular velocity vanishes
//! exactly at the beats and nowhere else. Styles differ in per-joint
//! amplitudes and root sway.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::motion::MotionSeq;
use crate::net::ClipCondition;
use crate::rotation::{euler_to_matrix, AxisOrder, EulerAngles, RotMat, Vec3};
use crate::skeleton::{locals_to_globals, Joint, Pose, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Chain(usize),
    Humanoid13,
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let u = s.trim().to_ascii_uppercase();
        if u == "HUMANOID13" {
            return Ok(Template::Humanoid13);
        }
        u.strip_prefix("CHAIN(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|n| n.parse().ok())
            .map(Template::Chain)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::Chain(d) => write!(f, "CHAIN({d})"),
            Template::Humanoid13 => f.write_str("HUMANOID13"),
        }
    }
}

fn joint(name: &str, parent: Option<usize>, offset: [f64; 3]) -> Joint {
    Joint { name: name.to_string(), parent, offset: Vec3::from(offset) }
}

pub fn gen_skeleton(template: Template) -> Result<Skeleton> {
    match template {
        Template::Chain(d) => {
            if d < 2 {
                return Err(Error::UnknownTemplate(format!("CHAIN({d}) needs at least 2 joints")));
            }
            let joints = (0..d)
                .map(|k| {
                    let off = if k == 0 { [0.0; 3] } else { [0.0, 1.0, 0.0] };
                    joint(&format!("j{k}"), k.checked_sub(1), off)
                })
                .collect();
            Skeleton::new(joints)
        }
        Template::Humanoid13 => {
            let mut joints = vec![
                joint("pelvis", None, [0.0; 3]),
                joint("spine", Some(0), [0.0, 0.3, 0.0]),
                joint("head", Some(1), [0.0, 0.3, 0.0]),
            ];
            for (side, sign) in [("l", 1.0), ("r", -1.0)] {
                let base = joints.len();
                joints.push(joint(&format!("{side}_shoulder"), Some(1), [sign * 0.18, 0.2, 0.0]));
                joints.push(joint(&format!("{side}_elbow"), Some(base), [sign * 0.28, 0.0, 0.0]));
                joints.push(joint(&format!("{side}_wrist"), Some(base + 1), [sign * 0.25, 0.0, 0.0]));
                joints.push(joint(&format!("{side}_knuckle"), Some(base + 2), [sign * 0.08, 0.0, 0.0]));
                joints.push(joint(&format!("{side}_fingertip"), Some(base + 3), [sign * 0.05, 0.0, 0.0]));
            }
            Skeleton::new(joints)
        }
    }
}

/// Joints assigned to the hand region: wrist, knuckle and fingertip of each
/// arm for the humanoid, the distal joint for a chain.
pub fn hand_joints(template: Template) -> Vec<usize> {
    match template {
        Template::Chain(d) => vec![d.saturating_sub(1)],
        Template::Humanoid13 => vec![5, 6, 7, 10, 11, 12],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub template: Template,
    pub frames: usize,
    pub fps: f64,
    pub n_clips: usize,
    pub n_styles: usize,
    /// Inclusive range of beat periods in frames.
    pub period_range: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            template: Template::Humanoid13,
            frames: 64,
            fps: 15.0,
            n_clips: 256,
            n_styles: 4,
            period_range: (10, 18),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.period_range;
        if self.frames < 16 || self.n_styles == 0 || lo < 4 || hi < lo || self.fps.is_nan() || self.fps <= 0.0 {
            return Err(Error::BadConfig(format!("invalid synth config {self:?}")));
        }
        gen_skeleton(self.template).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub motion: MotionSeq,
    pub cond: ClipCondition,
    pub beats: Vec<usize>,
    pub period: usize,
    pub seed: u64,
}

/// `0 → 1` ease with zero slope at both ends.
fn ease(phi: f64) -> f64 {
    phi - (2.0 * PI * phi).sin() / (2.0 * PI)
}

/// Profile in `[0, 1]`, rising on even beat intervals and falling on odd ones.
pub fn beat_profile(frame: f64, first_beat: f64, period: f64) -> f64 {
    let u = (frame - first_beat) / period;
    let k = u.floor();
    let r = ease(u - k);
    if (k as i64).rem_euclid(2) == 0 {
        r
    } else {
        1.0 - r
    }
}

/// Raised-cosine bumps of width 3 frames: `(0.25, 1, 0.25)` around each beat.
pub fn beat_track(frames: usize, beats: &[usize]) -> Vec<f64> {
    let mut track = vec![0.0f64; frames];
    for &b in beats {
        for (d, w) in [(-1i64, 0.25), (0, 1.0), (1, 0.25)] {
            let f = b as i64 + d;
            if (0..frames as i64).contains(&f) {
                track[f as usize] = track[f as usize].max(w);
            }
        }
    }
    track
}

struct StyleParams {
    amplitude: Vec<[f64; 3]>,
    sway: f64,
}

fn style_params(style: usize, joints: usize) -> StyleParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5747_1e00 + style as u64);
    let amplitude = (0..joints)
        .map(|_| {
            let mut a = [0.0; 3];
            for v in &mut a {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                *v = sign * rng.gen_range(0.05..0.5);
            }
            a
        })
        .collect();
    StyleParams { amplitude, sway: rng.gen_range(0.02..0.08) }
}

/// One clip of global-6D motion and its condition.
pub fn gen_clip(cfg: &SynthConfig, style: usize, seed: u64) -> Result<SynthClip> {
    cfg.validate()?;
    if style >= cfg.n_styles {
        return Err(Error::BadConfig(format!("style {style} outside {} styles", cfg.n_styles)));
    }
    let skel = gen_skeleton(cfg.template)?;
    let j = skel.len();
    let sp = style_params(style, j);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = rng.gen_range(cfg.period_range.0..=cfg.period_range.1);
    let first = rng.gen_range(0..period);
    let gain = rng.gen_range(0.8..1.2);
    let base: Vec<[f64; 3]> =
        (0..j).map(|_| [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)]).collect();

    let mut rotations = Vec::with_capacity(cfg.frames);
    let mut roots = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let h = 2.0 * beat_profile(f as f64, first as f64, period as f64) - 1.0;
        let locals: Vec<RotMat> = (0..j)
            .map(|k| {
                let a = sp.amplitude[k];
                let angles = [0, 1, 2].map(|i| base[k][i] + gain * a[i] * h);
                euler_to_matrix(&EulerAngles::new(angles, AxisOrder::Zxy))
            })
            .collect::<Result<_>>()?;
        let root = Vec3::new(sp.sway * gain * h, 1.0, 0.0);
        let global = locals_to_globals(&skel, &Pose::local(locals, root))?;
        rotations.push(global.rotations);
        roots.push(root);
    }
    let motion = MotionSeq::from_rotations(&rotations, &roots)?;
    let beats: Vec<usize> = (first..cfg.frames).step_by(period).collect();
    let cond = ClipCondition { style, beat_track: beat_track(cfg.frames, &beats) };
    Ok(SynthClip { motion, cond, beats, period, seed })
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub skeleton: Skeleton,
    pub train: Vec<SynthClip>,
    pub val: Vec<SynthClip>,
}

/// Seed of clip `index`; distinct for every index below 2²⁰.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    (seed << 20).wrapping_add(index as u64)
}

/// `n_clips` clips with round-robin styles; the last tenth is held out.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let clips: Vec<SynthClip> = (0..cfg.n_clips)
        .into_par_iter()
        .map(|i| gen_clip(cfg, i % cfg.n_styles, clip_seed(cfg.seed, i)))
        .collect::<Result<_>>()?;
    let n_val = cfg.n_clips / 10;
    let mut train = clips;
    let val = train.split_off(cfg.n_clips - n_val);
    Ok(SynthDataset { skeleton: gen_skeleton(cfg.template)?, train, val })
}
