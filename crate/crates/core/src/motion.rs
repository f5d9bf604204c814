//! Frame-major motion arrays in the global 6D layout.
//!
//! Each frame holds `J` six-dimensional joint rotations followed by the
//! three-component root translation, i.e. `J·6 + 3` channels.

use crate::error::{Error, Result};
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix, Rot6D, RotMat, Vec3};

pub fn channels_for(joints: usize) -> usize {
    joints * 6 + 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSeq {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl MotionSeq {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        MotionSeq { frames, joints, data: vec![0.0; frames * channels_for(joints)] }
    }

    pub fn from_data(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        let expected = frames * channels_for(joints);
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!("motion data has {} values, expected {expected}", data.len())));
        }
        Ok(MotionSeq { frames, joints, data })
    }

    /// Builds a sequence from per-frame global rotations and root translations.
    pub fn from_rotations(rotations: &[Vec<RotMat>], roots: &[Vec3]) -> Result<Self> {
        if rotations.len() != roots.len() || rotations.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} rotation frames vs {} root frames",
                rotations.len(),
                roots.len()
            )));
        }
        let joints = rotations[0].len();
        let mut seq = MotionSeq::zeros(rotations.len(), joints);
        for (f, (rots, root)) in rotations.iter().zip(roots).enumerate() {
            if rots.len() != joints {
                return Err(Error::ShapeMismatch("ragged rotation frames".into()));
            }
            seq.set_frame(f, rots, root)?;
        }
        Ok(seq)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn channels(&self) -> usize {
        channels_for(self.joints)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let c = self.channels();
        &self.data[f * c..(f + 1) * c]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let c = self.channels();
        &mut self.data[f * c..(f + 1) * c]
    }

    pub fn rot6d(&self, f: usize, joint: usize) -> Rot6D {
        Rot6D::from_slice(&self.frame(f)[joint * 6..joint * 6 + 6])
    }

    pub fn root(&self, f: usize) -> Vec3 {
        let fr = self.frame(f);
        let o = self.joints * 6;
        Vec3::new(fr[o], fr[o + 1], fr[o + 2])
    }

    /// Orthonormalized rotations of every joint at frame `f`.
    pub fn rotations(&self, f: usize) -> Result<Vec<RotMat>> {
        (0..self.joints).map(|j| rot6d_to_matrix(&self.rot6d(f, j))).collect()
    }

    pub fn set_frame(&mut self, f: usize, rotations: &[RotMat], root: &Vec3) -> Result<()> {
        let joints = self.joints;
        let fr = self.frame_mut(f);
        for (j, r) in rotations.iter().enumerate() {
            fr[j * 6..j * 6 + 6].copy_from_slice(&matrix_to_rot6d(r)?.0);
        }
        fr[joints * 6..joints * 6 + 3].copy_from_slice(root.as_slice());
        Ok(())
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<MotionSeq> {
        if start + len > self.frames {
            return Err(Error::ShapeMismatch(format!(
                "window {start}..{} exceeds {} frames",
                start + len,
                self.frames
            )));
        }
        let c = self.channels();
        MotionSeq::from_data(len, self.joints, self.data[start * c..(start + len) * c].to_vec())
    }

    /// Appends the frames of `other` starting at `from`.
    pub fn extend_from(&mut self, other: &MotionSeq, from: usize) -> Result<()> {
        if other.joints != self.joints {
            return Err(Error::ShapeMismatch("joint count differs".into()));
        }
        let c = self.channels();
        self.data.extend_from_slice(&other.data[from * c..]);
        self.frames += other.frames - from;
        Ok(())
    }

    pub fn same_shape(&self, other: &MotionSeq) -> Result<()> {
        if self.frames != other.frames || self.joints != other.joints {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.frames, self.joints, other.frames, other.joints
            )));
        }
        Ok(())
    }
}
