//! Skeleton model and forward kinematics in the local and global formulations.
//!
//! Joints are stored in topological order (every parent precedes its
//! children). With global rotations the position of a joint is the root
//! translation plus the sum of parent-rotated rest offsets along its path,
//! so each rotation touches exactly one bone term.

use std::fmt::Write as _;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::rotation::{compose, RotMat, Vec3};

/// Rest length below which a bone has no direction.
pub const MIN_BONE_LENGTH: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose offset from the parent joint (the rest position for the root).
    pub offset: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    rest: Vec<Vec3>,
    children: Vec<Vec<usize>>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.len() < 2 {
            return Err(Error::InvalidSkeleton(format!("need at least 2 joints, got {}", joints.len())));
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::InvalidSkeleton("exactly one root is required and it must come first".into()));
        }
        let mut rest: Vec<Vec3> = Vec::with_capacity(joints.len());
        let mut children = vec![Vec::new(); joints.len()];
        for (k, j) in joints.iter().enumerate() {
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidSkeleton(format!("joint {k} has a non-finite offset")));
            }
            match j.parent {
                None => rest.push(j.offset),
                Some(p) if p < k => {
                    rest.push(rest[p] + j.offset);
                    children[p].push(k);
                }
                Some(p) => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {k} has parent {p}; parents must precede children"
                    )))
                }
            }
        }
        Ok(Skeleton { joints, rest, children })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.joints[k].parent
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn offset(&self, k: usize) -> Vec3 {
        self.joints[k].offset
    }

    /// World-space rest position of every joint.
    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Parent-child edges whose rest length exceeds [`MIN_BONE_LENGTH`].
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(k, j)| {
                let p = j.parent?;
                (j.offset.norm() > MIN_BONE_LENGTH).then_some((p, k))
            })
            .collect()
    }

    pub fn mean_bone_length(&self) -> f64 {
        let bones = self.bones();
        if bones.is_empty() {
            return 0.0;
        }
        bones.iter().map(|&(_, c)| self.offset(c).norm()).sum::<f64>() / bones.len() as f64
    }

    pub fn depth(&self, k: usize) -> usize {
        let mut d = 0;
        let mut cur = k;
        while let Some(p) = self.parent(cur) {
            d += 1;
            cur = p;
        }
        d
    }

    /// Parses the line format `name parent_index ox oy oz` (`#` starts a comment,
    /// the root has parent index -1).
    pub fn parse(text: &str) -> Result<Self> {
        let mut joints = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let parent: i64 = fields[1].parse().map_err(|_| err(format!("bad parent index `{}`", fields[1])))?;
            let mut off = [0.0; 3];
            for (o, s) in off.iter_mut().zip(&fields[2..]) {
                *o = s.parse().map_err(|_| err(format!("bad offset `{s}`")))?;
            }
            let parent = match parent {
                -1 => None,
                p if p >= 0 => Some(p as usize),
                p => return Err(err(format!("bad parent index {p}"))),
            };
            joints.push(Joint { name: fields[0].to_string(), parent, offset: Vec3::new(off[0], off[1], off[2]) });
        }
        Skeleton::new(joints)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# name parent_index ox oy oz\n");
        for j in &self.joints {
            let p = j.parent.map_or(-1, |p| p as i64);
            writeln!(out, "{} {} {:?} {:?} {:?}", j.name, p, j.offset.x, j.offset.y, j.offset.z).unwrap();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Local,
    Global,
}

impl Frame {
    fn name(self) -> &'static str {
        match self {
            Frame::Local => "LOCAL",
            Frame::Global => "GLOBAL",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub frame: Frame,
    pub rotations: Vec<RotMat>,
    pub root_translation: Vec3,
}

impl Pose {
    pub fn local(rotations: Vec<RotMat>, root_translation: Vec3) -> Self {
        Pose { frame: Frame::Local, rotations, root_translation }
    }

    pub fn global(rotations: Vec<RotMat>, root_translation: Vec3) -> Self {
        Pose { frame: Frame::Global, rotations, root_translation }
    }

    pub fn identity(frame: Frame, joints: usize) -> Self {
        Pose { frame, rotations: vec![RotMat::identity(); joints], root_translation: Vec3::zeros() }
    }

    fn expect(&self, frame: Frame, skel: &Skeleton) -> Result<()> {
        if self.frame != frame {
            return Err(Error::InterpretationMismatch { expected: frame.name(), got: self.frame.name() });
        }
        if self.rotations.len() != skel.len() {
            return Err(Error::ShapeMismatch(format!(
                "pose has {} rotations, skeleton has {} joints",
                self.rotations.len(),
                skel.len()
            )));
        }
        Ok(())
    }
}

pub type JointPositions = Vec<Vec3>;

/// Composes local rotations down the tree and places joints recursively.
pub fn fk_local(skel: &Skeleton, pose: &Pose) -> Result<(Vec<RotMat>, JointPositions)> {
    pose.expect(Frame::Local, skel)?;
    let mut globals = Vec::with_capacity(skel.len());
    let mut pos = Vec::with_capacity(skel.len());
    for k in 0..skel.len() {
        match skel.parent(k) {
            None => {
                globals.push(pose.rotations[k]);
                pos.push(pose.root_translation);
            }
            Some(p) => {
                let gp: RotMat = globals[p];
                pos.push(pos[p] + gp.apply(&skel.offset(k)));
                globals.push(compose(&gp, &pose.rotations[k]));
            }
        }
    }
    Ok((globals, pos))
}

/// Path-sum positions from global rotations.
pub fn fk_global(skel: &Skeleton, pose: &Pose) -> Result<JointPositions> {
    pose.expect(Frame::Global, skel)?;
    Ok(fk_global_raw(skel, &pose.rotations, &pose.root_translation))
}

/// [`fk_global`] without the pose wrapper. `globals` must have one entry per joint.
pub fn fk_global_raw(skel: &Skeleton, globals: &[RotMat], root: &Vec3) -> JointPositions {
    let mut pos: Vec<Vec3> = Vec::with_capacity(skel.len());
    for k in 0..skel.len() {
        match skel.parent(k) {
            None => pos.push(*root),
            Some(p) => {
                let q = pos[p] + globals[p].apply(&skel.offset(k));
                pos.push(q);
            }
        }
    }
    pos
}

/// Backward pass of [`fk_global_raw`]: from `dL/dq` to `dL/dR` per joint and
/// `dL/d(root translation)`.
pub fn fk_global_vjp(skel: &Skeleton, grad_pos: &[Vec3]) -> (Vec<Matrix3<f64>>, Vec3) {
    let n = skel.len();
    // Total gradient reaching each joint position, including its descendants.
    let mut acc: Vec<Vec3> = grad_pos.to_vec();
    let mut grad_rot = vec![Matrix3::zeros(); n];
    for k in (1..n).rev() {
        let p = skel.parent(k).expect("non-root joint has a parent");
        grad_rot[p] += acc[k] * skel.offset(k).transpose();
        let a = acc[k];
        acc[p] += a;
    }
    (grad_rot, acc[0])
}

pub fn locals_to_globals(skel: &Skeleton, pose: &Pose) -> Result<Pose> {
    pose.expect(Frame::Local, skel)?;
    let mut globals: Vec<RotMat> = Vec::with_capacity(skel.len());
    for k in 0..skel.len() {
        let g = match skel.parent(k) {
            None => pose.rotations[k],
            Some(p) => compose(&globals[p], &pose.rotations[k]),
        };
        globals.push(g);
    }
    Ok(Pose::global(globals, pose.root_translation))
}

pub fn globals_to_locals(skel: &Skeleton, pose: &Pose) -> Result<Pose> {
    pose.expect(Frame::Global, skel)?;
    let locals = (0..skel.len())
        .map(|k| match skel.parent(k) {
            None => pose.rotations[k],
            Some(p) => compose(&pose.rotations[p].transpose(), &pose.rotations[k]),
        })
        .collect();
    Ok(Pose::local(locals, pose.root_translation))
}

/// One row of the error-accumulation table: displacement of the joint at
/// `depth` bones from the root when the root rotation is perturbed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccumulationRow {
    pub depth: usize,
    pub local: f64,
    pub global: f64,
}

/// Straight chain of `bones` unit bones along +Y.
pub fn straight_chain(bones: usize) -> Result<Skeleton> {
    let joints = (0..=bones)
        .map(|k| Joint {
            name: format!("j{k}"),
            parent: k.checked_sub(1),
            offset: if k == 0 { Vec3::zeros() } else { Vec3::y() },
        })
        .collect();
    Skeleton::new(joints)
}

/// Perturbs the root rotation of a `depth`-bone chain by `epsilon` about Z,
/// once as a local rotation and once as a global rotation, and reports the
/// displacement of every joint relative to the unperturbed rest pose.
pub fn error_accumulation_experiment(depth: usize, epsilon: f64) -> Result<Vec<AccumulationRow>> {
    if depth < 2 {
        return Err(Error::BadConfig(format!("chain depth must be at least 2, got {depth}")));
    }
    if !(0.0..std::f64::consts::PI).contains(&epsilon) {
        return Err(Error::BadConfig(format!("epsilon must lie in [0, pi), got {epsilon}")));
    }
    let skel = straight_chain(depth)?;
    let n = skel.len();
    let (_, base) = fk_local(&skel, &Pose::identity(Frame::Local, n))?;

    let mut local = Pose::identity(Frame::Local, n);
    local.rotations[0] = RotMat::about_z(epsilon);
    let (_, local_pos) = fk_local(&skel, &local)?;

    let mut global = Pose::identity(Frame::Global, n);
    global.rotations[0] = RotMat::about_z(epsilon);
    let global_pos = fk_global(&skel, &global)?;

    Ok((1..n)
        .map(|k| AccumulationRow {
            depth: k,
            local: (local_pos[k] - base[k]).norm(),
            global: (global_pos[k] - base[k]).norm(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_chain() -> Skeleton {
        Skeleton::new(vec![
            Joint { name: "a".into(), parent: None, offset: Vec3::zeros() },
            Joint { name: "b".into(), parent: Some(0), offset: Vec3::y() },
        ])
        .unwrap()
    }

    #[test]
    fn rest_pose_positions() {
        let s = two_chain();
        let (_, pos) = fk_local(&s, &Pose::identity(Frame::Local, 2)).unwrap();
        assert_eq!(pos, vec![Vec3::zeros(), Vec3::y()]);
        let pos = fk_global(&s, &Pose::identity(Frame::Global, 2)).unwrap();
        assert_eq!(pos, vec![Vec3::zeros(), Vec3::y()]);
    }

    #[test]
    fn rotated_root_moves_child() {
        let s = two_chain();
        let mut p = Pose::identity(Frame::Local, 2);
        p.rotations[0] = RotMat::about_z(FRAC_PI_2);
        let (_, pos) = fk_local(&s, &p).unwrap();
        assert!((pos[1] - Vec3::new(-1.0, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn root_position_is_root_translation() {
        let s = two_chain();
        let t = Vec3::new(0.5, -2.0, 3.0);
        let mut p = Pose::identity(Frame::Global, 2);
        p.root_translation = t;
        p.rotations[0] = RotMat::about_x(1.0);
        assert_eq!(fk_global(&s, &p).unwrap()[0], t);
    }

    #[test]
    fn interpretation_mismatch() {
        let s = two_chain();
        assert!(matches!(fk_local(&s, &Pose::identity(Frame::Global, 2)), Err(Error::InterpretationMismatch { .. })));
        assert!(fk_global(&s, &Pose::identity(Frame::Local, 2)).is_err());
        assert!(locals_to_globals(&s, &Pose::identity(Frame::Global, 2)).is_err());
        assert!(globals_to_locals(&s, &Pose::identity(Frame::Local, 2)).is_err());
    }

    #[test]
    fn chain_of_quarter_turns() {
        let s = two_chain();
        let q = RotMat::about_z(FRAC_PI_2);
        let g = locals_to_globals(&s, &Pose::local(vec![q, q], Vec3::zeros())).unwrap();
        assert_eq!(g.rotations[0], q);
        assert!((g.rotations[1].matrix() - RotMat::about_z(std::f64::consts::PI).matrix()).amax() < 1e-15);
        let id = locals_to_globals(&s, &Pose::identity(Frame::Local, 2)).unwrap();
        assert!(id.rotations.iter().all(|r| *r == RotMat::identity()));
        let back = globals_to_locals(&s, &Pose::identity(Frame::Global, 2)).unwrap();
        assert!(back.rotations.iter().all(|r| *r == RotMat::identity()));
    }

    #[test]
    fn invalid_skeletons() {
        let j = |parent, name: &str| Joint { name: name.into(), parent, offset: Vec3::y() };
        assert!(Skeleton::new(vec![j(None, "r")]).is_err());
        assert!(Skeleton::new(vec![j(None, "r"), j(None, "s")]).is_err());
        assert!(Skeleton::new(vec![j(None, "r"), j(Some(1), "s")]).is_err());
        assert!(Skeleton::new(vec![j(Some(1), "r"), j(None, "s")]).is_err());
        let mut bad = j(Some(0), "s");
        bad.offset.x = f64::NAN;
        assert!(Skeleton::new(vec![j(None, "r"), bad]).is_err());
    }

    #[test]
    fn text_format() {
        let text = "# demo\nroot -1 0 0 0\nspine 0 0 0.5 0  # trailing\n\nhead 1 0 0.25 0.1\n";
        let s = Skeleton::parse(text).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.parent(2), Some(1));
        assert_eq!(s.rest_positions()[2], Vec3::new(0.0, 0.75, 0.1));
        assert_eq!(Skeleton::parse(&s.to_text()).unwrap(), s);
        match Skeleton::parse("root -1 0 0 0\nx 0 1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn accumulation_table() {
        let rows = error_accumulation_experiment(10, 0.01).unwrap();
        assert_eq!(rows.len(), 10);
        let tip = rows.last().unwrap();
        assert!((tip.local - 20.0 * 0.005f64.sin()).abs() < 1e-12);
        assert!((tip.global - 2.0 * 0.005f64.sin()).abs() < 1e-12);
        for r in error_accumulation_experiment(5, 0.0).unwrap() {
            assert_eq!((r.local, r.global), (0.0, 0.0));
        }
        assert!(error_accumulation_experiment(1, 0.01).is_err());
    }
}
