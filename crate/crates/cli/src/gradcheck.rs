//! Finite-difference checks of every analytic gradient on a small
//! configuration (4-joint chain, 16 frames).

use std::fmt::Write as _;

use gdiff_core::constraints::{AnchorSet, FrameTargets, SpatialLoss};
use gdiff_core::flow::{FlowConfig, Trainer};
use gdiff_core::gradcheck::{fd_check_with, Coverage};
use gdiff_core::net::{Condition, Generator, NetConfig, SEED_FRAMES};
use gdiff_core::rotation::{rot6d_to_matrix, rot6d_to_matrix_vjp, Rot6D};
use gdiff_core::synth::{gen_dataset, hand_joints, SynthConfig, Template};
use gdiff_core::temporal::{motion_loss, EncoderConfig, TemporalEncoder};
use gdiff_core::{MotionSeq, Result};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GEOMETRIC_TOL: f64 = 1e-5;
pub const NETWORK_TOL: f64 = 1e-4;
const JOINTS: usize = 4;
const FRAMES: usize = 16;
/// Inputs up to this size are checked on every coordinate.
const FULL_COVERAGE: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub term: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn report_table(rows: &[CheckRow]) -> String {
    let mut s = format!("{:<12} {:>12} {:>10} {:>8}  result\n", "term", "max_rel_err", "tolerance", "checked");
    for r in rows {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        let _ =
            writeln!(s, "{:<12} {:>12.3e} {:>10.0e} {:>8}  {verdict}", r.term, r.max_rel_error, r.tolerance, r.checked);
    }
    s
}

/// Breaks analytic gradients on purpose so the harness can be seen to fail.
fn corrupt(grad: &mut [f64], fault: bool) {
    if fault {
        grad.iter_mut().for_each(|g| *g = 1.1 * *g + 1e-3);
    }
}

fn check(
    term: &'static str,
    tolerance: f64,
    value: impl Fn(&[f64]) -> Result<f64>,
    input: &[f64],
    mut grad: Vec<f64>,
    h: f64,
    fault: bool,
) -> Result<CheckRow> {
    corrupt(&mut grad, fault);
    let coverage = if input.len() <= FULL_COVERAGE { Coverage::All } else { Coverage::Subset { count: 128, seed: 0 } };
    let r = fd_check_with(value, input, &grad, h, coverage)?;
    Ok(CheckRow { term, max_rel_error: r.max_rel_error, tolerance, checked: r.checked })
}

fn perturbed(m: &MotionSeq, scale: f64, rng: &mut ChaCha8Rng) -> MotionSeq {
    let mut p = m.clone();
    p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    p
}

/// Runs every check; `fault` corrupts each analytic gradient first.
pub fn run_checks(seed: u64, fault: bool) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = Template::Chain(JOINTS);
    let sc = SynthConfig { template, frames: FRAMES, n_clips: 8, n_styles: 2, seed, ..SynthConfig::default() };
    let ds = gen_dataset(&sc)?;
    let skel = ds.skeleton.clone();
    let gt = ds.train[0].motion.clone();
    let pred = perturbed(&gt, 0.2, &mut rng);
    let targets = FrameTargets::from_motion(&gt, &skel)?;
    let spatial = SpatialLoss::new(skel.clone(), AnchorSet::for_skeleton(&skel)?);
    let mut rows = Vec::new();

    let r6: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let up = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let rot_value = |x: &[f64]| Ok(rot6d_to_matrix(&Rot6D::from_slice(x))?.matrix().component_mul(&up).sum());
    let rot_grad = rot6d_to_matrix_vjp(&Rot6D::from_slice(&r6), &up)?.to_vec();
    rows.push(check("rot6d", GEOMETRIC_TOL, rot_value, &r6, rot_grad, 1e-6, fault)?);

    let terms = spatial.evaluate(&pred, &targets)?;
    let eval_term = |k: usize| {
        let (spatial, targets) = (&spatial, &targets);
        move |x: &[f64]| {
            let t = spatial.evaluate(&MotionSeq::from_data(FRAMES, JOINTS, x.to_vec())?, targets)?;
            Ok([t.position.value, t.joint.value, t.skeleton.value][k])
        }
    };
    let geometric = [("L_pos", terms.position.grad), ("L_j", terms.joint.grad), ("L_s", terms.skeleton.grad)];
    for (k, (name, grad)) in geometric.into_iter().enumerate() {
        rows.push(check(name, GEOMETRIC_TOL, eval_term(k), pred.data(), grad, 1e-6, fault)?);
    }

    let mut enc =
        TemporalEncoder::new(EncoderConfig { hidden: 16, latent: 8, ..EncoderConfig::new(gt.channels()) }, seed);
    enc.freeze();
    let lm = motion_loss(&enc, &pred, &gt)?;
    let lm_value = |x: &[f64]| Ok(motion_loss(&enc, &MotionSeq::from_data(FRAMES, JOINTS, x.to_vec())?, &gt)?.value);
    rows.push(check("L_m", NETWORK_TOL, lm_value, pred.data(), lm.grad, 1e-5, fault)?);

    let net = NetConfig {
        hidden: 8,
        blocks: 2,
        style_dim: 4,
        time_dim: 4,
        ..NetConfig::new(JOINTS, hand_joints(template), 2)
    };
    let gen = Generator::new(net.clone(), seed)?;
    let flat: Vec<f64> = gen.params().flatten().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
    let mut gen = gen;
    gen.params_mut().set_flat(&flat)?;
    let x_t = perturbed(&MotionSeq::zeros(FRAMES, JOINTS), 1.0, &mut rng);
    let cond = Condition::new(&ds.train[0].cond, gt.window(0, SEED_FRAMES)?, 0.3);
    let weights: Vec<f64> = (0..x_t.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, grads) = gen.forward_backward(&x_t, &cond, |_| Ok(weights.clone()))?;
    let net_grad = grads.iter().flat_map(|t| t.data.iter().copied()).collect();
    let net_value = |p: &[f64]| {
        let mut g = gen.clone();
        g.params_mut().set_flat(p)?;
        Ok(g.forward(&x_t, &cond)?.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };
    rows.push(check("network", NETWORK_TOL, net_value, &flat, net_grad, 1e-4, fault)?);

    let data: Vec<_> = ds.train.iter().map(|c| (c.motion.clone(), c.cond.clone())).collect();
    let fc = FlowConfig { batch_size: 2, seed, ..FlowConfig::default() };
    let tr = Trainer::new(fc, net, skel, &data, Some(enc))?;
    let batch = tr.batch_noise();
    let (_, grads) = tr.loss_and_grad(&batch)?;
    let total_grad = grads.iter().flat_map(|t| t.data.iter().copied()).collect();
    let base = tr.generator().params().flatten();
    let total_value = |p: &[f64]| {
        let mut t = tr.clone();
        t.set_generator_params(p)?;
        Ok(t.loss_and_grad(&batch)?.0.total)
    };
    rows.push(check("flow_total", NETWORK_TOL, total_value, &base, total_grad, 1e-4, fault)?);
    Ok(rows)
}
