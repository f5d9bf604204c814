//! Spatial structure losses on predicted global 6D rotations.
//!
//! * position loss: mean squared joint-position error after path-sum FK;
//! * joint loss: rotated virtual anchors compared against their ground-truth images;
//! * skeleton loss: squared difference of the bone-direction cosine matrices.
//!
//! Every loss returns its gradient with respect to the raw 6D channels (and
//! root translation) of the prediction, chained through Gram–Schmidt and FK.

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::motion::MotionSeq;
use crate::rotation::{apply, rot6d_to_matrix, rot6d_to_matrix_vjp, Rot6D, RotMat, Vec3};
use crate::skeleton::{fk_global_raw, fk_global_vjp, JointPositions, Skeleton, MIN_BONE_LENGTH};

/// Scalar loss with its gradient laid out like the differentiated input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    pub fn zeros(len: usize) -> Self {
        LossGrad { value: 0.0, grad: vec![0.0; len] }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.value *= s;
        self.grad.iter_mut().for_each(|g| *g *= s);
        self
    }

    pub fn accumulate(&mut self, other: &LossGrad, weight: f64) {
        self.value += weight * other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += weight * b;
        }
    }
}

/// Non-coplanar points in a joint's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    points: Vec<Vec3>,
}

impl AnchorSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidAnchors(format!("need N >= 3 points, got {}", points.len())));
        }
        let scatter: Matrix3<f64> = points.iter().map(|p| p * p.transpose()).sum();
        let eig = SymmetricEigen::new(scatter);
        let max = eig.eigenvalues.amax();
        let min = eig.eigenvalues.min();
        if max.is_nan() || max <= 0.0 || min <= 1e-12 * max {
            return Err(Error::InvalidAnchors("points do not span 3D".into()));
        }
        Ok(AnchorSet { points })
    }

    /// Anchors scaled to half the mean bone length of `skel`.
    pub fn for_skeleton(skel: &Skeleton) -> Result<Self> {
        default_anchors(0.5 * skel.mean_bone_length())
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `±scale` along each coordinate axis.
pub fn default_anchors(scale: f64) -> Result<AnchorSet> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::NonPositiveScale(scale));
    }
    let pts = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    AnchorSet::new(pts.iter().map(|p| p * scale).collect())
}

fn decode(pred: &[f64], joints: usize) -> Result<Vec<RotMat>> {
    (0..joints).map(|j| rot6d_to_matrix(&Rot6D::from_slice(&pred[j * 6..]))).collect()
}

/// Chains per-joint `dL/dR` through Gram–Schmidt into `out[j*6..j*6+6]`.
fn rotation_grads_to_6d(pred: &[f64], grad_rot: &[Matrix3<f64>], out: &mut [f64]) -> Result<()> {
    for (j, g) in grad_rot.iter().enumerate() {
        let g6 = rot6d_to_matrix_vjp(&Rot6D::from_slice(&pred[j * 6..]), g)?;
        for (o, v) in out[j * 6..j * 6 + 6].iter_mut().zip(g6) {
            *o += v;
        }
    }
    Ok(())
}

fn joint_loss_rot(pred: &[RotMat], gt: &[RotMat], anchors: &AnchorSet) -> (f64, Vec<Matrix3<f64>>) {
    let norm = 1.0 / (pred.len() * anchors.len()) as f64;
    let mut value = 0.0;
    let grads = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let mut dr = Matrix3::zeros();
            for v in anchors.points() {
                let d = apply(p, v) - apply(g, v);
                value += d.norm_squared();
                dr += d * v.transpose() * (2.0 * norm);
            }
            dr
        })
        .collect();
    (value * norm, grads)
}

/// Joint structure loss for one frame. `pred` holds `J` raw 6D rotations; the
/// gradient has the same layout.
pub fn joint_loss(pred: &[f64], gt: &[RotMat], anchors: &AnchorSet) -> Result<LossGrad> {
    if pred.len() != gt.len() * 6 || gt.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} 6D values for {} ground-truth joints", pred.len(), gt.len())));
    }
    let rots = decode(pred, gt.len())?;
    let (value, grad_rot) = joint_loss_rot(&rots, gt, anchors);
    let mut grad = vec![0.0; pred.len()];
    rotation_grads_to_6d(pred, &grad_rot, &mut grad)?;
    Ok(LossGrad { value, grad })
}

/// Unit direction of every valid bone of `skel`, in [`Skeleton::bones`] order.
pub fn bone_directions(skel: &Skeleton, pos: &[Vec3]) -> Result<Vec<Vec3>> {
    bone_directions_for(&skel.bones(), pos)
}

fn bone_directions_for(bones: &[(usize, usize)], pos: &[Vec3]) -> Result<Vec<Vec3>> {
    bones
        .iter()
        .map(|&(p, c)| {
            let d = pos[c] - pos[p];
            let n = d.norm();
            if n < MIN_BONE_LENGTH {
                Err(Error::DegenerateBone { parent: p, child: c })
            } else {
                Ok(d / n)
            }
        })
        .collect()
}

/// Pairwise cosine matrix over bone directions.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularMatrix {
    pub size: usize,
    pub a: Vec<f64>,
}

impl AngularMatrix {
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.a[p * self.size + q]
    }
}

pub fn angular_matrix(dirs: &[Vec3]) -> AngularMatrix {
    let n = dirs.len();
    let mut a = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            a[p * n + q] = dirs[p].dot(&dirs[q]);
        }
    }
    AngularMatrix { size: n, a }
}

fn skeleton_loss_pos(bones: &[(usize, usize)], pred_pos: &[Vec3], gt_pos: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    let mut grad_pos = vec![Vec3::zeros(); pred_pos.len()];
    if bones.is_empty() {
        return Ok((0.0, grad_pos));
    }
    let dirs = bone_directions_for(bones, pred_pos)?;
    let gt_dirs = bone_directions_for(bones, gt_pos)?;
    let a = angular_matrix(&dirs);
    let at = angular_matrix(&gt_dirs);
    let n = bones.len();
    let norm = 1.0 / (n * n) as f64;
    let value = a.a.iter().zip(&at.a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * norm;

    // dL/dA is symmetric, so dL/db_p = 2 * sum_q dL/dA_pq b_q.
    for (p, &(parent, child)) in bones.iter().enumerate() {
        let mut g_dir = Vec3::zeros();
        for (q, dq) in dirs.iter().enumerate() {
            let dl_da = 2.0 * norm * (a.a[p * n + q] - at.a[p * n + q]);
            g_dir += dq * (2.0 * dl_da);
        }
        let d = pred_pos[child] - pred_pos[parent];
        let len = d.norm();
        let b = dirs[p];
        let g_d = (g_dir - b * b.dot(&g_dir)) / len;
        grad_pos[child] += g_d;
        grad_pos[parent] -= g_d;
    }
    Ok((value, grad_pos))
}

/// Skeleton structure loss on explicit positions; gradient is `dL/d(pred_pos)`.
pub fn skeleton_loss_positions(pred_pos: &[Vec3], gt_pos: &[Vec3], skel: &Skeleton) -> Result<(f64, Vec<Vec3>)> {
    check_positions(pred_pos, gt_pos, skel.len())?;
    skeleton_loss_pos(&skel.bones(), pred_pos, gt_pos)
}

fn position_loss_pos(pred: &[Vec3], gt: &[Vec3]) -> (f64, Vec<Vec3>) {
    let norm = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            value += d.norm_squared();
            d * (2.0 * norm)
        })
        .collect();
    (value * norm, grad)
}

/// Mean over joints of the squared position error; gradient is `dL/d(pred)`.
pub fn position_loss_positions(pred: &[Vec3], gt: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_positions(pred, gt, pred.len())?;
    Ok(position_loss_pos(pred, gt))
}

fn check_positions(pred: &[Vec3], gt: &[Vec3], joints: usize) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != joints || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted vs {} ground-truth positions ({} joints)",
            pred.len(),
            gt.len(),
            joints
        )));
    }
    Ok(())
}

fn check_frame(frame: &[f64], skel: &Skeleton) -> Result<()> {
    if frame.len() != skel.len() * 6 + 3 {
        return Err(Error::ShapeMismatch(format!(
            "frame has {} channels, skeleton needs {}",
            frame.len(),
            skel.len() * 6 + 3
        )));
    }
    Ok(())
}

fn frame_positions(frame: &[f64], skel: &Skeleton) -> Result<(Vec<RotMat>, JointPositions)> {
    let j = skel.len();
    let rots = decode(frame, j)?;
    let root = Vec3::new(frame[j * 6], frame[j * 6 + 1], frame[j * 6 + 2]);
    let pos = fk_global_raw(skel, &rots, &root);
    Ok((rots, pos))
}

fn position_grads_to_frame(frame: &[f64], skel: &Skeleton, grad_pos: &[Vec3], out: &mut [f64]) -> Result<()> {
    let (grad_rot, grad_root) = fk_global_vjp(skel, grad_pos);
    rotation_grads_to_6d(frame, &grad_rot, out)?;
    let j = skel.len();
    for (o, g) in out[j * 6..j * 6 + 3].iter_mut().zip(grad_root.iter()) {
        *o += g;
    }
    Ok(())
}

/// Skeleton structure loss of one predicted frame (`J·6 + 3` channels)
/// against ground-truth positions, differentiated through path-sum FK.
pub fn skeleton_loss(frame: &[f64], gt_pos: &[Vec3], skel: &Skeleton) -> Result<LossGrad> {
    check_frame(frame, skel)?;
    let (_, pos) = frame_positions(frame, skel)?;
    let (value, gp) = skeleton_loss_positions(&pos, gt_pos, skel)?;
    let mut grad = vec![0.0; frame.len()];
    position_grads_to_frame(frame, skel, &gp, &mut grad)?;
    Ok(LossGrad { value, grad })
}

/// Position loss of one predicted frame, differentiated through path-sum FK.
pub fn position_loss(frame: &[f64], gt_pos: &[Vec3], skel: &Skeleton) -> Result<LossGrad> {
    check_frame(frame, skel)?;
    let (_, pos) = frame_positions(frame, skel)?;
    let (value, gp) = position_loss_positions(&pos, gt_pos)?;
    let mut grad = vec![0.0; frame.len()];
    position_grads_to_frame(frame, skel, &gp, &mut grad)?;
    Ok(LossGrad { value, grad })
}

/// Precomputed ground truth for one clip.
#[derive(Clone, Debug)]
pub struct FrameTargets {
    pub rotations: Vec<Vec<RotMat>>,
    pub positions: Vec<JointPositions>,
}

impl FrameTargets {
    pub fn from_motion(motion: &MotionSeq, skel: &Skeleton) -> Result<Self> {
        if motion.joints() != skel.len() {
            return Err(Error::ShapeMismatch(format!(
                "motion has {} joints, skeleton {}",
                motion.joints(),
                skel.len()
            )));
        }
        let mut rotations = Vec::with_capacity(motion.frames());
        let mut positions = Vec::with_capacity(motion.frames());
        for f in 0..motion.frames() {
            let rots = motion.rotations(f)?;
            positions.push(fk_global_raw(skel, &rots, &motion.root(f)));
            rotations.push(rots);
        }
        Ok(FrameTargets { rotations, positions })
    }
}

/// Per-term values and sequence gradients of the three spatial losses.
#[derive(Clone, Debug)]
pub struct SpatialTerms {
    pub position: LossGrad,
    pub joint: LossGrad,
    pub skeleton: LossGrad,
}

/// Evaluates the spatial losses over whole sequences, averaging per-frame
/// values over frames.
#[derive(Clone, Debug)]
pub struct SpatialLoss {
    skel: Skeleton,
    anchors: AnchorSet,
    bones: Vec<(usize, usize)>,
}

impl SpatialLoss {
    pub fn new(skel: Skeleton, anchors: AnchorSet) -> Self {
        let bones = skel.bones();
        let edges = skel.len() - 1;
        if bones.len() < edges {
            warn!("dropping {} zero-length bone(s) from the angular matrix", edges - bones.len());
        }
        SpatialLoss { skel, anchors, bones }
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skel
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn evaluate(&self, pred: &MotionSeq, target: &FrameTargets) -> Result<SpatialTerms> {
        let j = self.skel.len();
        if pred.joints() != j || target.rotations.len() != pred.frames() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs target {} frames, {} joints",
                pred.frames(),
                pred.joints(),
                target.rotations.len(),
                j
            )));
        }
        let n = pred.data().len();
        let c = pred.channels();
        let mut terms =
            SpatialTerms { position: LossGrad::zeros(n), joint: LossGrad::zeros(n), skeleton: LossGrad::zeros(n) };
        let inv_t = 1.0 / pred.frames() as f64;
        for f in 0..pred.frames() {
            let frame = pred.frame(f);
            let (rots, pos) = frame_positions(frame, &self.skel)?;
            let gt_rot = &target.rotations[f];
            let gt_pos = &target.positions[f];
            let range = f * c..(f + 1) * c;

            let (v, g) = position_loss_pos(&pos, gt_pos);
            terms.position.value += v * inv_t;
            position_grads_to_frame(frame, &self.skel, &scale3(&g, inv_t), &mut terms.position.grad[range.clone()])?;

            let (v, g) = skeleton_loss_pos(&self.bones, &pos, gt_pos)?;
            terms.skeleton.value += v * inv_t;
            position_grads_to_frame(frame, &self.skel, &scale3(&g, inv_t), &mut terms.skeleton.grad[range.clone()])?;

            let (v, g) = joint_loss_rot(&rots, gt_rot, &self.anchors);
            terms.joint.value += v * inv_t;
            let g: Vec<Matrix3<f64>> = g.into_iter().map(|m| m * inv_t).collect();
            rotation_grads_to_6d(frame, &g, &mut terms.joint.grad[range])?;
        }
        Ok(terms)
    }
}

fn scale3(v: &[Vec3], s: f64) -> Vec<Vec3> {
    v.iter().map(|x| x * s).collect()
}
