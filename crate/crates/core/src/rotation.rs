//! SO(3) representations: rotation matrices, the continuous 6D encoding and
//! the Euler-angle triples used by BVH channel lists.
//!
//! The 6D encoding stores the first two *columns* of a rotation matrix. The
//! inverse map orthonormalizes them with Gram–Schmidt and completes the frame
//! with a cross product.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Norm threshold below which a 6D column is treated as vanishing.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Tolerance used when accepting externally supplied matrices as rotations.
pub const ACCEPT_TOL: f64 = 1e-6;

pub type Vec3 = Vector3<f64>;

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotMat(Matrix3<f64>);

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with unit determinant within [`ACCEPT_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = orthonormality_error(&m);
        let det = m.determinant();
        if !m.iter().all(|v| v.is_finite()) || err > ACCEPT_TOL || (det - 1.0).abs() > ACCEPT_TOL {
            return Err(Error::InvalidRotation(format!("orthonormality error {err:e}, determinant {det}")));
        }
        Ok(RotMat(m))
    }

    /// Wraps `m` without checking. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMat(m)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` about the (not necessarily unit) `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let k = axis / n;
        let kx = k.cross_matrix();
        RotMat(Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotMat(self.0.transpose())
    }

    pub fn compose(&self, other: &RotMat) -> RotMat {
        compose(self, other)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        apply(self, v)
    }

    /// Largest elementwise deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

impl Default for RotMat {
    fn default() -> Self {
        Self::identity()
    }
}

fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Raw 6D rotation parameters: two 3-vectors, unconstrained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn from_slice(s: &[f64]) -> Self {
        let mut r = [0.0; 6];
        r.copy_from_slice(&s[..6]);
        Rot6D(r)
    }

    pub fn first(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }
}

/// Intermediate quantities of the Gram–Schmidt construction, kept for the
/// backward pass.
struct GramSchmidt {
    b1: Vec3,
    b2: Vec3,
    b3: Vec3,
    a2: Vec3,
    n1: f64,
    n2: f64,
}

fn gram_schmidt(r: &Rot6D) -> Result<GramSchmidt> {
    let a1 = r.first();
    let a2 = r.second();
    if !r.0.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite component".into()));
    }
    let n1 = a1.norm();
    let na2 = a2.norm();
    if n1 < DEGENERACY_EPS || na2 < DEGENERACY_EPS {
        return Err(Error::DegenerateInput(format!("vanishing column (norms {n1:e}, {na2:e})")));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < DEGENERACY_EPS * na2.max(1.0) {
        return Err(Error::DegenerateInput("columns are parallel".into()));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(GramSchmidt { b1, b2, b3, a2, n1, n2 })
}

/// Orthonormalizes the two raw columns into a rotation matrix.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotMat> {
    let gs = gram_schmidt(r)?;
    Ok(RotMat(Matrix3::from_columns(&[gs.b1, gs.b2, gs.b3])))
}

/// Vector-Jacobian product of [`rot6d_to_matrix`]: maps `dL/dR` to `dL/dr`.
pub fn rot6d_to_matrix_vjp(r: &Rot6D, grad_r: &Matrix3<f64>) -> Result<[f64; 6]> {
    let GramSchmidt { b1, b2, b3: _, a2, n1, n2 } = gram_schmidt(r)?;
    let g3: Vec3 = grad_r.column(2).into();
    let mut g_b1: Vec3 = grad_r.column(0).into();
    let mut g_b2: Vec3 = grad_r.column(1).into();

    // b3 = b1 x b2
    g_b1 += b2.cross(&g3);
    g_b2 += g3.cross(&b1);

    // b2 = u2 / |u2|
    let g_u2 = (g_b2 - b2 * b2.dot(&g_b2)) / n2;

    // u2 = a2 - (b1 . a2) b1
    let g_a2 = g_u2 - b1 * b1.dot(&g_u2);
    g_b1 -= g_u2 * b1.dot(&a2) + a2 * g_u2.dot(&b1);

    // b1 = a1 / |a1|
    let g_a1 = (g_b1 - b1 * b1.dot(&g_b1)) / n1;

    Ok([g_a1.x, g_a1.y, g_a1.z, g_a2.x, g_a2.y, g_a2.z])
}

/// Takes the first two columns of `rot`.
pub fn matrix_to_rot6d(rot: &RotMat) -> Result<Rot6D> {
    let m = rot.matrix();
    let err = orthonormality_error(m);
    let det = m.determinant();
    if err > ACCEPT_TOL || (det - 1.0).abs() > ACCEPT_TOL {
        return Err(Error::InvalidRotation(format!("orthonormality error {err:e}, determinant {det}")));
    }
    Ok(Rot6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]))
}

pub fn compose(a: &RotMat, b: &RotMat) -> RotMat {
    RotMat(a.0 * b.0)
}

pub fn apply(r: &RotMat, v: &Vec3) -> Vec3 {
    r.0 * v
}

/// Angle of the relative rotation `aᵀb`, in `[0, π]`.
pub fn geodesic_distance(a: &RotMat, b: &RotMat) -> f64 {
    let rel = a.0.transpose() * b.0;
    let cos = (rel.trace() - 1.0) * 0.5;
    let sin = 0.5 * Vec3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]).norm();
    sin.atan2(cos)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn rotation(self, angle: f64) -> RotMat {
        match self {
            Axis::X => RotMat::about_x(angle),
            Axis::Y => RotMat::about_y(angle),
            Axis::Z => RotMat::about_z(angle),
        }
    }

    fn from_char(c: char) -> Option<Axis> {
        match c.to_ascii_uppercase() {
            'X' => Some(Axis::X),
            'Y' => Some(Axis::Y),
            'Z' => Some(Axis::Z),
            _ => None,
        }
    }
}

/// The six Tait–Bryan orderings that BVH channel lists can express.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl AxisOrder {
    pub const ALL: [AxisOrder; 6] =
        [AxisOrder::Xyz, AxisOrder::Xzy, AxisOrder::Yxz, AxisOrder::Yzx, AxisOrder::Zxy, AxisOrder::Zyx];

    pub fn axes(self) -> [Axis; 3] {
        use Axis::*;
        match self {
            AxisOrder::Xyz => [X, Y, Z],
            AxisOrder::Xzy => [X, Z, Y],
            AxisOrder::Yxz => [Y, X, Z],
            AxisOrder::Yzx => [Y, Z, X],
            AxisOrder::Zxy => [Z, X, Y],
            AxisOrder::Zyx => [Z, Y, X],
        }
    }

    pub fn from_axes(axes: [Axis; 3]) -> Result<Self> {
        AxisOrder::ALL
            .into_iter()
            .find(|o| o.axes() == axes)
            .ok_or_else(|| Error::UnsupportedOrder(format!("{axes:?}")))
    }
}

impl FromStr for AxisOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<Option<Axis>> = s.chars().map(Axis::from_char).collect();
        match chars.as_slice() {
            [Some(a), Some(b), Some(c)] => AxisOrder::from_axes([*a, *b, *c]),
            _ => Err(Error::UnsupportedOrder(s.to_string())),
        }
    }
}

impl fmt::Display for AxisOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self
            .axes()
            .iter()
            .map(|a| match a {
                Axis::X => 'X',
                Axis::Y => 'Y',
                Axis::Z => 'Z',
            })
            .collect();
        f.write_str(&s)
    }
}

/// Intrinsic Euler angles: `angles[i]` is the rotation about `order.axes()[i]`,
/// and the matrix is the product in listed order (BVH convention).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub angles: [f64; 3],
    pub order: AxisOrder,
}

impl EulerAngles {
    pub fn new(angles: [f64; 3], order: AxisOrder) -> Self {
        EulerAngles { angles, order }
    }
}

pub fn euler_to_matrix(e: &EulerAngles) -> Result<RotMat> {
    if !e.angles.iter().all(|a| a.is_finite()) {
        return Err(Error::InvalidRotation("non-finite Euler angle".into()));
    }
    let [a0, a1, a2] = e.order.axes();
    let m = a0.rotation(e.angles[0]).0 * a1.rotation(e.angles[1]).0 * a2.rotation(e.angles[2]).0;
    Ok(RotMat(m))
}
