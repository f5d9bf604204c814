//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use gdiff_cli::commands::{cmd_fkdemo, evaluate, pretrain_encoder, probe_loss, train_until, EvalInput};
use gdiff_cli::gradcheck::{run_checks, GEOMETRIC_TOL, NETWORK_TOL};
use gdiff_cli::EXIT_DATA;
use gdiff_core::bvh::parse_bvh;
use gdiff_core::constraints::{default_anchors, joint_loss, AnchorSet, FrameTargets, SpatialLoss};
use gdiff_core::flow::{sample_many, stream, FlowConfig, FlowModel, Trainer};
use gdiff_core::metrics::{beat_align, diversity, extract_features, frechet_distance, FeatureStats};
use gdiff_core::net::{ClipCondition, NetConfig, SEED_FRAMES};
use gdiff_core::rotation::{geodesic_distance, matrix_to_rot6d, rot6d_to_matrix, Rot6D};
use gdiff_core::skeleton::{fk_global, fk_global_raw, fk_local, locals_to_globals, Joint, Pose};
use gdiff_core::synth::{gen_dataset, hand_joints, SynthConfig, SynthDataset, Template};
use gdiff_core::temporal::{motion_loss, EncoderConfig, TemporalEncoder};
use gdiff_core::{MotionSeq, RotMat, Skeleton, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("{what} took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> RotMat {
    let axis = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    RotMat::from_axis_angle(&axis.normalize(), rng.gen_range(-PI..PI))
}

fn random_skeleton(rng: &mut ChaCha8Rng, joints: usize) -> Skeleton {
    let joints = (0..joints)
        .map(|k| Joint {
            name: format!("j{k}"),
            parent: (k > 0).then(|| rng.gen_range(0..k)),
            offset: if k == 0 {
                Vec3::zeros()
            } else {
                Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0), rng.gen_range(-1.0..1.0))
            },
        })
        .collect();
    Skeleton::new(joints).unwrap()
}

fn fk_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=64);
        let skel = random_skeleton(&mut rng, n);
        let rots = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let root = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let local = Pose::local(rots, root);
        let (_, a) = fk_local(&skel, &local).map_err(|e| e.to_string())?;
        let b = fk_global(&skel, &locals_to_globals(&skel, &local).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - q).amax());
        }
    }
    within(start.elapsed(), 5.0, "FK equivalence")?;
    ensure(worst <= 1e-12, format!("200 skeletons, max-abs {worst:.2e} (tol 1e-12)"))
}

/// Tip displacement of a `depth`-bone +Y chain whose root is turned by `eps`,
/// by explicit 2D accumulation of the bones.
fn chain_oracle(depth: usize, eps: f64, local: bool) -> f64 {
    let (mut x, mut y) = (0.0f64, 0.0f64);
    for bone in 0..depth {
        let angle = if local || bone == 0 { eps } else { 0.0 };
        x += -angle.sin();
        y += angle.cos();
    }
    (x * x + (y - depth as f64).powi(2)).sqrt()
}

fn error_accumulation() -> Outcome {
    let start = Instant::now();
    let eps = 0.01;
    let analytic = 2.0 * (eps / 2.0f64).sin();
    let mut worst: f64 = 0.0;
    for d in 2..=20 {
        let rows = cmd_fkdemo(d, eps).map_err(|e| e.to_string())?;
        let tip = rows.last().ok_or("empty table")?;
        let errs = [
            (tip.local - chain_oracle(d, eps, true)).abs(),
            (tip.global - chain_oracle(d, eps, false)).abs(),
            (tip.local - d as f64 * analytic).abs(),
            (tip.global - analytic).abs(),
            (tip.local / tip.global - d as f64).abs(),
        ];
        worst = worst.max(errs.iter().cloned().fold(0.0, f64::max));
    }
    within(start.elapsed(), 1.0, "fkdemo sweep")?;
    let rows = cmd_fkdemo(10, eps).map_err(|e| e.to_string())?;
    let tip = rows.last().unwrap();
    ensure(
        worst < 1e-9,
        format!("D=2..20, worst deviation {worst:.1e}; D=10 local {:.6} global {:.6}", tip.local, tip.global),
    )
}

fn rotation_representation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ortho, mut det, mut round): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100_000 {
        let r: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let m = rot6d_to_matrix(&Rot6D::from_slice(&r)).map_err(|e| e.to_string())?;
        ortho = ortho.max(m.orthonormality_error());
        det = det.max((m.determinant() - 1.0).abs());
        let q = random_rotation(&mut rng);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&q).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        round = round.max((back.matrix() - q.matrix()).amax());
    }
    within(start.elapsed(), 5.0, "rotation conversions")?;
    ensure(
        ortho < 1e-9 && det < 1e-9 && round < 1e-9,
        format!("1e5 samples: orthonormality {ortho:.1e}, |det-1| {det:.1e}, roundtrip {round:.1e}"),
    )
}

fn rigidly_rotated(m: &MotionSeq, r: &RotMat) -> MotionSeq {
    let mut out = m.clone();
    for f in 0..m.frames() {
        let rots: Vec<RotMat> = m.rotations(f).unwrap().iter().map(|g| r.compose(g)).collect();
        out.set_frame(f, &rots, &r.apply(&m.root(f))).unwrap();
    }
    out
}

fn loss_correctness() -> Outcome {
    let cfg = SynthConfig { n_clips: 4, seed: 4, ..SynthConfig::default() };
    let ds = gen_dataset(&cfg).map_err(|e| e.to_string())?;
    let skel = ds.skeleton.clone();
    let gt = &ds.train[0].motion;
    let spatial = SpatialLoss::new(skel.clone(), AnchorSet::for_skeleton(&skel).map_err(|e| e.to_string())?);
    let targets = FrameTargets::from_motion(gt, &skel).map_err(|e| e.to_string())?;
    let at_gt = spatial.evaluate(gt, &targets).map_err(|e| e.to_string())?;
    let mut enc = TemporalEncoder::new(EncoderConfig::new(gt.channels()), 4);
    enc.freeze();
    let lm = motion_loss(&enc, gt, gt).map_err(|e| e.to_string())?.value;
    let zero = [at_gt.position.value, at_gt.joint.value, at_gt.skeleton.value, lm];

    let flip = matrix_to_rot6d(&RotMat::about_z(PI)).map_err(|e| e.to_string())?;
    let anchors = default_anchors(1.0).map_err(|e| e.to_string())?;
    let worked = joint_loss(&flip.0, &[RotMat::identity()], &anchors).map_err(|e| e.to_string())?.value;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pred = gt.clone();
    pred.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    let base = spatial.evaluate(&pred, &targets).map_err(|e| e.to_string())?.skeleton.value;
    let mut invariance: f64 = 0.0;
    for _ in 0..5 {
        let moved = rigidly_rotated(&pred, &random_rotation(&mut rng));
        let v = spatial.evaluate(&moved, &targets).map_err(|e| e.to_string())?.skeleton.value;
        invariance = invariance.max((v - base).abs());
    }
    ensure(
        zero.iter().all(|v| *v == 0.0) && (worked - 8.0 / 3.0).abs() < 1e-12 && invariance < 1e-10 && base > 0.0,
        format!("at gt {zero:?}; worked L_j {worked:.15}; L_s rotation drift {invariance:.1e}"),
    )
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let rows = run_checks(1, false).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fault = Command::new(env!("CARGO_BIN_EXE_gdiff"))
        .args(["gradcheck", "--seed", "1", "--inject-fault"])
        .output()
        .map_err(|e| e.to_string())?;
    within(elapsed, 60.0, "gradcheck")?;
    let geometric = ["rot6d", "L_pos", "L_j", "L_s"];
    let ok = rows.iter().all(|r| {
        let tol = if geometric.contains(&r.term) { GEOMETRIC_TOL } else { NETWORK_TOL };
        r.tolerance == tol && r.passed()
    });
    let summary: Vec<String> = rows.iter().map(|r| format!("{} {:.1e}", r.term, r.max_rel_error)).collect();
    ensure(
        ok && rows.len() == 7 && fault.status.code() == Some(3),
        format!(
            "{} in {:.1} s; injected fault exit {:?}",
            summary.join(", "),
            elapsed.as_secs_f64(),
            fault.status.code()
        ),
    )
}

/// Plain gradient descent on the 6D parameters, started from a random rotation.
const RECOVERY_LR: f64 = 0.05;
const RECOVERY_STEPS: usize = 2000;

fn rotation_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let anchors = default_anchors(1.0).map_err(|e| e.to_string())?;
    let (mut worst, mut max_steps): (f64, usize) = (0.0, 0);
    for _ in 0..50 {
        let target = random_rotation(&mut rng);
        let mut r = matrix_to_rot6d(&random_rotation(&mut rng)).map_err(|e| e.to_string())?.0.to_vec();
        let mut dist = f64::INFINITY;
        let mut steps = 0;
        while steps < RECOVERY_STEPS {
            dist = geodesic_distance(&rot6d_to_matrix(&Rot6D::from_slice(&r)).map_err(|e| e.to_string())?, &target);
            if dist < 1e-3 {
                break;
            }
            let lg = joint_loss(&r, &[target], &anchors).map_err(|e| e.to_string())?;
            r.iter_mut().zip(&lg.grad).for_each(|(x, g)| *x -= RECOVERY_LR * g);
            steps += 1;
        }
        worst = worst.max(dist);
        max_steps = max_steps.max(steps);
    }
    ensure(
        worst < 1e-3,
        format!("50 inits, worst geodesic {worst:.3e} rad, most steps {max_steps} (limit {RECOVERY_STEPS})"),
    )
}

const LADDER_HIDDEN: usize = 32;
const LADDER_BLOCKS: usize = 4;
const LADDER_STEPS: u64 = 1000;
const LADDER_LR: f64 = 2e-3;
const LADDER_SEED: u64 = 3;
const ENCODER_STEPS: usize = 300;
const PROBE_BATCH: usize = 64;
const SAMPLE_STEPS: usize = 20;

struct Ladder {
    data: SynthDataset,
    encoder: TemporalEncoder,
    eval_items: Vec<(ClipCondition, MotionSeq)>,
    eval_gt: Vec<(MotionSeq, Option<ClipCondition>)>,
    untrained: Vec<MotionSeq>,
    full: Option<FlowModel>,
    report: Outcome,
}

fn metric(rows: &[(String, f64)], k: &str) -> f64 {
    rows.iter().find(|r| r.0 == k).map_or(f64::NAN, |r| r.1)
}

fn ladder() -> Ladder {
    let start = Instant::now();
    let sc =
        SynthConfig { template: Template::Humanoid13, frames: 64, n_clips: 256, seed: 7, ..SynthConfig::default() };
    let data = gen_dataset(&sc).expect("synthetic dataset");
    let pairs: Vec<(MotionSeq, ClipCondition)> =
        data.train.iter().map(|c| (c.motion.clone(), c.cond.clone())).collect();
    let clips: Vec<MotionSeq> = pairs.iter().map(|p| p.0.clone()).collect();
    let encoder = pretrain_encoder(&clips, EncoderConfig::new(clips[0].channels()), ENCODER_STEPS, 1e-3, 1e-3, 8, 1)
        .expect("encoder pre-training");
    let all: Vec<_> = data.train.iter().chain(&data.val).collect();
    let eval_items: Vec<(ClipCondition, MotionSeq)> =
        all.iter().map(|c| (c.cond.clone(), c.motion.window(0, SEED_FRAMES).unwrap())).collect();
    let eval_gt: Vec<(MotionSeq, Option<ClipCondition>)> =
        all.iter().map(|c| (c.motion.clone(), Some(c.cond.clone()))).collect();
    let net = NetConfig {
        hidden: LADDER_HIDDEN,
        blocks: LADDER_BLOCKS,
        ..NetConfig::new(data.skeleton.len(), hand_joints(Template::Humanoid13), sc.n_styles)
    };
    let configs =
        [("global", 0.0, 0.0, 0.0), ("+L_j", 1.0, 0.0, 0.0), ("+L_j+L_s", 1.0, 1.0, 0.0), ("all", 1.0, 1.0, 0.1)];
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut untrained = Vec::new();
    let mut fgd = Vec::new();
    let mut full = None;
    let mut untrained_ba = f64::NAN;
    let mut trained_ba = f64::NAN;
    for (name, lj, ls, lm) in configs {
        let fc = FlowConfig {
            lambda_j: lj,
            lambda_s: ls,
            lambda_m: lm,
            lr: LADDER_LR,
            seed: LADDER_SEED,
            ..FlowConfig::default()
        };
        let mut tr =
            Trainer::new(fc, net.clone(), data.skeleton.clone(), &pairs, Some(encoder.clone())).expect("trainer");
        let model = tr.model();
        if untrained.is_empty() {
            untrained = sample_many(&model.gen, &model.norm, &eval_items, SAMPLE_STEPS, 99).expect("untrained samples");
            let gen: Vec<_> = untrained.iter().zip(&eval_gt).map(|(m, g)| (m.clone(), g.1.clone())).collect();
            let rows = evaluate(&encoder, &data.skeleton, &EvalInput { gen: &gen, gt: &eval_gt }, 3.0).expect("eval");
            untrained_ba = metric(&rows, "beat_align");
        }
        let before = probe_loss(&tr, PROBE_BATCH, 17).expect("probe").total;
        train_until(&mut tr, LADDER_STEPS, LADDER_STEPS, |_, _| Ok(())).expect("training");
        let after = probe_loss(&tr, PROBE_BATCH, 17).expect("probe").total;
        let model = tr.model();
        let samples = sample_many(&model.gen, &model.norm, &eval_items, SAMPLE_STEPS, 99).expect("samples");
        let gen: Vec<_> = samples.into_iter().zip(&eval_gt).map(|(m, g)| (m, g.1.clone())).collect();
        let rows = evaluate(&encoder, &data.skeleton, &EvalInput { gen: &gen, gt: &eval_gt }, 3.0).expect("eval");
        let (f, ba) = (metric(&rows, "fgd"), metric(&rows, "beat_align"));
        lines.push(format!("{name}: loss {before:.3}->{after:.3}, FGD {f:.4}, BeatAlign {ba:.3}"));
        if after >= 0.5 * before {
            failures.push(format!("{name} loss ratio {:.2}", after / before));
        }
        fgd.push(f);
        if name == "all" {
            trained_ba = ba;
            full = Some(model);
        }
    }
    if fgd[3] > fgd[0] {
        failures.push(format!("full FGD {:.4} > global-only {:.4}", fgd[3], fgd[0]));
    }
    if trained_ba < untrained_ba + 0.1 {
        failures.push(format!("BeatAlign gain {:.3} < 0.1", trained_ba - untrained_ba));
    }
    let elapsed = start.elapsed();
    if elapsed.as_secs_f64() > 1800.0 {
        failures.push(format!("took {:.0} s", elapsed.as_secs_f64()));
    }
    let summary =
        format!("{}; untrained BeatAlign {untrained_ba:.3}; {:.0} s", lines.join("; "), elapsed.as_secs_f64());
    let report = if failures.is_empty() { Ok(summary) } else { Err(format!("{} | {summary}", failures.join(", "))) };
    Ladder { data, encoder, eval_items, eval_gt, untrained, full, report }
}

fn metrics_sanity(l: &Ladder) -> Outcome {
    let gt: Vec<MotionSeq> = l.data.train.iter().chain(&l.data.val).map(|c| c.motion.clone()).collect();
    let stats = |clips: &[MotionSeq]| {
        FeatureStats::from_embeddings(&extract_features(&l.encoder, clips).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())
    };
    // Alternate within each style so both halves share the style mix.
    let mut seen = std::collections::HashMap::new();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for c in l.data.train.iter().chain(&l.data.val) {
        let k = seen.entry(c.cond.style).or_insert(0usize);
        if *k % 2 == 0 {
            a.push(c.motion.clone());
        } else {
            b.push(c.motion.clone());
        }
        *k += 1;
    }
    let split = frechet_distance(&stats(&a)?, &stats(&b)?).map_err(|e| e.to_string())?;
    let eval_gt: Vec<MotionSeq> = l.eval_gt.iter().map(|p| p.0.clone()).collect();
    let untrained = frechet_distance(&stats(&eval_gt)?, &stats(&l.untrained)?).map_err(|e| e.to_string())?;

    let sigma = 3.0;
    let identical = beat_align(&[4, 20, 37], &[4, 20, 37], sigma).map_err(|e| e.to_string())?;
    let delta = 2.0;
    let offset = beat_align(&[12], &[10], sigma).map_err(|e| e.to_string())?;
    let expected = (-delta * delta / (2.0 * sigma * sigma)).exp();
    let dup = diversity(&[gt[0].clone(), gt[0].clone(), gt[0].clone()]).map_err(|e| e.to_string())?;
    ensure(
        split < untrained && (identical - 1.0).abs() < 1e-12 && (offset - expected).abs() < 1e-12 && dup == 0.0,
        format!("FGD split A/B {split:.4} < GT vs untrained {untrained:.4}; BeatAlign identical {identical}, offset {offset:.12}; duplicate diversity {dup}"),
    )
}

fn positions(m: &MotionSeq, skel: &Skeleton) -> Vec<Vec<Vec3>> {
    (0..m.frames()).map(|f| fk_global_raw(skel, &m.rotations(f).unwrap(), &m.root(f))).collect()
}

fn streaming_continuity(l: &Ladder) -> Outcome {
    let model = l.full.as_ref().ok_or("no trained model")?;
    let conds: Vec<ClipCondition> = l.eval_items.iter().rev().take(5).map(|p| p.0.clone()).collect();
    let first_seed = &l.eval_items[l.eval_items.len() - 1].1;
    let m = stream(&model.gen, &model.norm, first_seed, &conds, SAMPLE_STEPS, 5).map_err(|e| e.to_string())?;
    let t = conds[0].beat_track.len();
    if m.frames() != 5 * (t - SEED_FRAMES) + SEED_FRAMES {
        return Err(format!("stream has {} frames", m.frames()));
    }
    let pos = positions(&m, &l.data.skeleton);
    let deltas: Vec<f64> =
        pos.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)).collect();
    // Transition k joins frames k and k + 1; clip i > 0 starts at frame t + (i-1)(t-8).
    let seams: Vec<usize> = (1..5).map(|i| t + (i - 1) * (t - SEED_FRAMES) - 1).collect();
    let mut within: Vec<f64> = deltas.iter().enumerate().filter(|(k, _)| !seams.contains(k)).map(|p| *p.1).collect();
    within.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = within[((within.len() as f64 * 0.95).ceil() as usize).min(within.len()) - 1];
    let worst = seams.iter().map(|k| deltas[*k]).fold(0.0, f64::max);
    ensure(
        worst <= 3.0 * p95,
        format!("worst seam delta {worst:.4} vs 3 x p95 {:.4} ({} frames)", 3.0 * p95, m.frames()),
    )
}

const TWO_JOINT: &str = "HIERARCHY
ROOT hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT chest
  {
    OFFSET 1 2 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 1 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
0 0 0 0 0 0 0 0 0
0.5 0 0 90 0 0 0 0 0
";

fn bvh_ingestion() -> Outcome {
    let b = parse_bvh(TWO_JOINT).map_err(|e| e.to_string())?;
    let rest = fk_global_raw(&b.skeleton, &b.motion.rotations(0).unwrap(), &b.motion.root(0));
    let bone = (rest[1] - rest[0]).norm();
    let turned = fk_global_raw(&b.skeleton, &b.motion.rotations(1).unwrap(), &b.motion.root(1));
    // Rz(90°)·(1, 2, 0) = (−2, 1, 0), plus the root at (0.5, 0, 0).
    let expected = Vec3::new(-1.5, 1.0, 0.0);
    let rz_err = (turned[1] - expected).amax();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bad = dir.path().join("bad.bvh");
    std::fs::write(&bad, TWO_JOINT.replace("0.5 0 0 90", "0.5 0 x 90")).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_gdiff"))
        .arg("bvh-import")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
    ensure(
        b.skeleton.len() == 2
            && rest[1] == Vec3::new(1.0, 2.0, 0.0)
            && bone == 5f64.sqrt()
            && rz_err < 1e-12
            && out.status.code() == Some(EXIT_DATA)
            && stderr.contains("line 20"),
        format!(
            "rest bone {bone}, Rz(90) error {rz_err:.1e}; malformed file: exit {:?}, `{stderr}`",
            out.status.code()
        ),
    )
}

fn report(id: usize, name: &str, outcome: &Outcome, elapsed: Duration) -> bool {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id:>2} {name} [{:.1} s]: {detail}", elapsed.as_secs_f64());
    outcome.is_ok()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let fast: [Criterion; 6] = [
        ("fk-equivalence", fk_equivalence),
        ("error-accumulation", error_accumulation),
        ("rotation-representation", rotation_representation),
        ("loss-correctness", loss_correctness),
        ("gradient-fidelity", gradient_fidelity),
        ("rotation-recovery", rotation_recovery),
    ];
    let mut all_ok = true;
    for (i, (name, f)) in fast.iter().enumerate() {
        let (outcome, t) = timed(f);
        all_ok &= report(i + 1, name, &outcome, t);
    }
    let (l, t) = timed(ladder);
    all_ok &= report(7, "ablation-ladder", &l.report, t);
    let (outcome, t) = timed(|| metrics_sanity(&l));
    all_ok &= report(8, "metrics-sanity", &outcome, t);
    let (outcome, t) = timed(|| streaming_continuity(&l));
    all_ok &= report(9, "streaming-continuity", &outcome, t);
    let (outcome, t) = timed(bvh_ingestion);
    all_ok &= report(10, "bvh-ingestion", &outcome, t);
    if !all_ok {
        std::process::exit(1);
    }
}
