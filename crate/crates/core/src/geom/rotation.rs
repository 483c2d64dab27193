//! Rotation parameterizations and their decoding into rotation matrices.
//!
//! Euler angles follow `R = Rz(γ) · Ry(β) · Rx(α)` acting on column vectors,
//! with `Ω = (α, β, γ)` in radians.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RotationMode {
    Euler,
    Quaternion,
    SixD,
    Matrix,
}

impl RotationMode {
    pub const ALL: [RotationMode; 4] = [
        RotationMode::Euler,
        RotationMode::Quaternion,
        RotationMode::SixD,
        RotationMode::Matrix,
    ];

    /// Number of regressed values.
    pub fn dim(self) -> usize {
        match self {
            RotationMode::Euler => 3,
            RotationMode::Quaternion => 4,
            RotationMode::SixD => 6,
            RotationMode::Matrix => 9,
        }
    }

    /// Parameters that decode to the identity rotation.
    pub fn identity_offset(self) -> &'static [f64] {
        match self {
            RotationMode::Euler => &[0.0; 3],
            RotationMode::Quaternion => &[1.0, 0.0, 0.0, 0.0],
            RotationMode::SixD => &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            RotationMode::Matrix => &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RotationMode::Euler => 0,
            RotationMode::Quaternion => 1,
            RotationMode::SixD => 2,
            RotationMode::Matrix => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.code() == code)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rotation mode code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            RotationMode::Euler => "euler",
            RotationMode::Quaternion => "quaternion",
            RotationMode::SixD => "sixd",
            RotationMode::Matrix => "matrix",
        }
    }
}

impl fmt::Display for RotationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RotationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rotation mode `{s}`")))
    }
}

/// Regressed rotation values tagged with their parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationParam {
    mode: RotationMode,
    values: Vec<f64>,
}

impl RotationParam {
    pub fn new(mode: RotationMode, values: Vec<f64>) -> Result<Self> {
        if values.len() != mode.dim() {
            return Err(Error::InvalidArgument(format!(
                "{mode} rotation takes {} values, got {}",
                mode.dim(),
                values.len()
            )));
        }
        Ok(RotationParam { mode, values })
    }

    pub fn euler(alpha: f64, beta: f64, gamma: f64) -> Self {
        RotationParam {
            mode: RotationMode::Euler,
            values: vec![alpha, beta, gamma],
        }
    }

    pub fn mode(&self) -> RotationMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn decode_rotation(param: &RotationParam) -> Result<Matrix3<f64>> {
    decode_raw(param.mode, &param.values)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `Rz(γ)·Ry(β)·Rx(α)` in closed form.
pub fn euler_to_matrix(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    Matrix3::new(
        cg * cb,
        cg * sb * sa - sg * ca,
        cg * sb * ca + sg * sa,
        sg * cb,
        sg * sb * sa + cg * ca,
        sg * sb * ca - cg * sa,
        -sb,
        cb * sa,
        cb * ca,
    )
}

/// Inverse of [`euler_to_matrix`] with `β ∈ [-π/2, π/2]`.
pub fn matrix_to_euler(r: &Matrix3<f64>) -> [f64; 3] {
    let sb = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    if sb.abs() < 1.0 - 1e-12 {
        let alpha = r[(2, 1)].atan2(r[(2, 2)]);
        let gamma = r[(1, 0)].atan2(r[(0, 0)]);
        [alpha, beta, gamma]
    } else {
        // gimbal lock: only α ∓ γ is observable, put it all in γ
        let gamma = (-r[(0, 1)]).atan2(r[(1, 1)]);
        [0.0, beta, gamma]
    }
}

/// Geodesic angle of a rotation matrix, radians in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 keeps full precision near 0 and π, unlike acos of the trace
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    s.atan2((r.trace() - 1.0) / 2.0)
}

/// Rotation of `angle` radians about a unit `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).matrix()
}

pub(crate) fn decode_raw(mode: RotationMode, v: &[f64]) -> Result<Matrix3<f64>> {
    if v.len() != mode.dim() {
        return Err(Error::InvalidArgument(format!(
            "{mode} rotation takes {} values, got {}",
            mode.dim(),
            v.len()
        )));
    }
    match mode {
        RotationMode::Euler => Ok(euler_to_matrix(v[0], v[1], v[2])),
        RotationMode::Quaternion => {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
            if n < 1e-12 {
                return Err(Error::Degenerate("quaternion of zero norm".into()));
            }
            Ok(quat_unit_to_matrix(v[0] / n, v[1] / n, v[2] / n, v[3] / n))
        }
        RotationMode::SixD => {
            let (b1, b2, _, _, _) = sixd_frame(v)?;
            let b3 = b1.cross(&b2);
            Ok(Matrix3::from_columns(&[b1, b2, b3]))
        }
        RotationMode::Matrix => Ok(project_matrix(v)?.0),
    }
}

fn quat_unit_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gram–Schmidt frame of the two 3-vectors: `(b1, b2, |a1|, u2, |u2|)`.
fn sixd_frame(v: &[f64]) -> Result<(Vector3<f64>, Vector3<f64>, f64, Vector3<f64>, f64)> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < 1e-12 || a1.cross(&a2).norm() <= 1e-9 * n1 * a2.norm() {
        return Err(Error::Degenerate("6D rotation columns are parallel or zero".into()));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    Ok((b1, u2 / n2, n1, u2, n2))
}

struct Polar {
    v: Matrix3<f64>,
    signed: Vector3<f64>,
}

/// Nearest rotation to a (row-major) 3×3 matrix via SVD with a determinant guard.
fn project_matrix(v: &[f64]) -> Result<(Matrix3<f64>, Polar)> {
    let m = Matrix3::from_row_slice(v);
    let svd = m.svd(true, true);
    let (u, vt) = (
        svd.u.expect("requested U"),
        svd.v_t.expect("requested Vᵀ"),
    );
    let s = svd.singular_values;
    let d = (u * vt).determinant().signum();
    let signed = Vector3::new(s[0], s[1], d * s[2]);
    let min_pair = (signed[0] + signed[1])
        .min(signed[0] + signed[2])
        .min(signed[1] + signed[2]);
    if min_pair <= 1e-12 * s[0].max(1.0) {
        return Err(Error::Degenerate("matrix rotation input is rank deficient".into()));
    }
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    Ok((
        r,
        Polar {
            v: vt.transpose(),
            signed,
        },
    ))
}

/// Vector-Jacobian product of [`decode_raw`]: given `dL/dR`, returns `dL/dv`.
pub(crate) fn decode_vjp(mode: RotationMode, v: &[f64], g: &Matrix3<f64>) -> Result<Vec<f64>> {
    let inner = |a: &Matrix3<f64>, b: &Matrix3<f64>| a.component_mul(b).sum();
    match mode {
        RotationMode::Euler => {
            let (rx, ry, rz) = (rot_x(v[0]), rot_y(v[1]), rot_z(v[2]));
            Ok(vec![
                inner(g, &(rz * ry * d_rot_x(v[0]))),
                inner(g, &(rz * d_rot_y(v[1]) * rx)),
                inner(g, &(d_rot_z(v[2]) * ry * rx)),
            ])
        }
        RotationMode::Quaternion => {
            let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
            if n < 1e-12 {
                return Err(Error::Degenerate("quaternion of zero norm".into()));
            }
            let (w, x, y, z) = (v[0] / n, v[1] / n, v[2] / n, v[3] / n);
            let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
            let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
            let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
            let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
            let gu = [inner(g, &dw), inner(g, &dx), inner(g, &dy), inner(g, &dz)];
            let u = [w, x, y, z];
            let proj: f64 = gu.iter().zip(&u).map(|(a, b)| a * b).sum();
            Ok(gu.iter().zip(&u).map(|(gi, ui)| (gi - ui * proj) / n).collect())
        }
        RotationMode::SixD => {
            let (b1, b2, n1, _, n2) = sixd_frame(v)?;
            let a2 = Vector3::new(v[3], v[4], v[5]);
            let (g1, g2, g3) = (
                g.column(0).into_owned(),
                g.column(1).into_owned(),
                g.column(2).into_owned(),
            );
            // b3 = b1 × b2
            let mut gb1 = g1 + b2.cross(&g3);
            let gb2 = g2 + g3.cross(&b1);
            let gu2 = (gb2 - b2 * b2.dot(&gb2)) / n2;
            let ga2 = gu2 - b1 * b1.dot(&gu2);
            gb1 -= gu2 * b1.dot(&a2) + a2 * b1.dot(&gu2);
            let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
            Ok(vec![ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
        }
        RotationMode::Matrix => {
            let (r, polar) = project_matrix(v)?;
            let b = polar.v.transpose() * r.transpose() * g * polar.v;
            let s = polar.signed;
            let k = Matrix3::from_fn(|i, j| b[(i, j)] / (s[i] + s[j]));
            let p = polar.v * k * polar.v.transpose();
            let dm = r * (p - p.transpose());
            Ok((0..9).map(|i| dm[(i / 3, i % 3)]).collect())
        }
    }
}

/// Checks `RᵀR = I` and `det R = +1` within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    orth <= tol && (r.determinant() - 1.0).abs() <= tol
}
