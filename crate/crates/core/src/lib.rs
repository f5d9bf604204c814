//! Skeletal motion in global joint rotations: forward kinematics, structural
//! losses, a small conditional flow-matching generator and gesture metrics.

pub mod bvh;
pub mod constraints;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod net;
pub mod optim;
pub mod params;
pub mod rotation;
pub mod skeleton;
pub mod synth;
pub mod tape;
pub mod temporal;

pub use error::{Error, Result};
pub use motion::MotionSeq;
pub use rotation::{Rot6D, RotMat, Vec3};
pub use skeleton::Skeleton;
