//! Moment-tensor algebra: double-couple parameterization, label conversion,
//! uniform mechanism sampling, far-field radiation and the Kagan angle.
//!
//! Coordinates are north-east-down (x = north, y = east, z = down). Tensor
//! components are stored as `[Mxx, Myy, Mzz, Mxy, Mxz, Myz]` in N·m.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Offset of the moment–magnitude relation `Mw = 2/3 (log10 M0 - 9.1)`.
pub const MW_OFFSET: f64 = 9.1;

/// Relative tolerance used to decide whether principal axes are separable.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MtError {
    #[error("moment tensor (or its deviatoric part) is zero")]
    ZeroTensor,
    #[error("principal axes are not separable (eigenvalue gap below tolerance)")]
    DegenerateTensor,
}

/// Symmetric 3×3 moment tensor, `[Mxx, Myy, Mzz, Mxy, Mxz, Myz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTensor {
    pub m: [f64; 6],
}

/// Strike/dip/rake in degrees plus scalar moment in N·m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleCouple {
    pub strike: f64,
    pub dip: f64,
    pub rake: f64,
    pub m0: f64,
}

/// Regression target: unit-norm deviatoric components plus moment magnitude.
///
/// `dev` holds `[Mxx, Myy, Mxy, Mxz, Myz]`; `Mzz` is implied by zero trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceLabel {
    pub dev: [f64; 5],
    pub mw: f64,
}

impl MomentTensor {
    pub fn new(m: [f64; 6]) -> Self {
        Self { m }
    }

    pub fn from_matrix(a: &Matrix3<f64>) -> Self {
        Self {
            m: [
                a[(0, 0)],
                a[(1, 1)],
                a[(2, 2)],
                0.5 * (a[(0, 1)] + a[(1, 0)]),
                0.5 * (a[(0, 2)] + a[(2, 0)]),
                0.5 * (a[(1, 2)] + a[(2, 1)]),
            ],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [xx, yy, zz, xy, xz, yz] = self.m;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[1] + self.m[2]
    }

    /// Frobenius norm of the full 3×3 tensor (off-diagonals counted twice).
    pub fn frobenius(&self) -> f64 {
        let [xx, yy, zz, xy, xz, yz] = self.m;
        (xx * xx + yy * yy + zz * zz + 2.0 * (xy * xy + xz * xz + yz * yz)).sqrt()
    }

    pub fn deviatoric(&self) -> MomentTensor {
        let iso = self.trace() / 3.0;
        let mut m = self.m;
        m[0] -= iso;
        m[1] -= iso;
        m[2] -= iso;
        MomentTensor { m }
    }

    /// Scalar moment `‖M_dev‖_F / √2`.
    pub fn scalar_moment(&self) -> f64 {
        self.deviatoric().frobenius() / std::f64::consts::SQRT_2
    }

    pub fn scaled(&self, s: f64) -> MomentTensor {
        MomentTensor {
            m: self.m.map(|v| v * s),
        }
    }

    /// Applies a rotation: `R M Rᵀ`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> MomentTensor {
        MomentTensor::from_matrix(&(r * self.matrix() * r.transpose()))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }
}

impl DoubleCouple {
    pub fn new(strike: f64, dip: f64, rake: f64, m0: f64) -> Self {
        Self { strike, dip, rake, m0 }
    }
}

impl SourceLabel {
    /// Label as the 6-vector regression target `[dev.., mw]`.
    pub fn as_array(&self) -> [f64; 6] {
        let d = self.dev;
        [d[0], d[1], d[2], d[3], d[4], self.mw]
    }

    pub fn from_array(y: &[f64]) -> Self {
        Self {
            dev: [y[0], y[1], y[2], y[3], y[4]],
            mw: y[5],
        }
    }

    /// Frobenius norm of the reconstructed zero-trace tensor.
    pub fn dev_norm(&self) -> f64 {
        let [xx, yy, xy, xz, yz] = self.dev;
        let zz = -(xx + yy);
        (xx * xx + yy * yy + zz * zz + 2.0 * (xy * xy + xz * xz + yz * yz)).sqrt()
    }
}

pub fn mw_to_m0(mw: f64) -> f64 {
    10f64.powf(1.5 * mw + MW_OFFSET)
}

pub fn m0_to_mw(m0: f64) -> f64 {
    (2.0 / 3.0) * (m0.log10() - MW_OFFSET)
}

/// Aki–Richards strike/dip/rake to moment tensor (NED).
pub fn sdr_to_mt(dc: &DoubleCouple) -> MomentTensor {
    let (phi, delta, lambda) = (dc.strike.to_radians(), dc.dip.to_radians(), dc.rake.to_radians());
    let (sd, cd) = delta.sin_cos();
    let (s2d, c2d) = (2.0 * delta).sin_cos();
    let (sl, cl) = lambda.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (s2p, c2p) = (2.0 * phi).sin_cos();
    let m0 = dc.m0;

    let mxx = -m0 * (sd * cl * s2p + s2d * sl * sp * sp);
    let myy = m0 * (sd * cl * s2p - s2d * sl * cp * cp);
    let mxy = m0 * (sd * cl * c2p + 0.5 * s2d * sl * s2p);
    let mxz = -m0 * (cd * cl * cp + c2d * sl * sp);
    let myz = -m0 * (cd * cl * sp - c2d * sl * cp);
    // Mzz = -(Mxx + Myy) analytically; computing it this way keeps the trace
    // exactly zero in floating point.
    let mzz = -(mxx + myy);
    MomentTensor::new([mxx, myy, mzz, mxy, mxz, myz])
}

/// Deviatoric part scaled to unit Frobenius norm, plus Mw from `‖M_dev‖/√2`.
pub fn mt_to_label(mt: &MomentTensor) -> Result<SourceLabel, MtError> {
    if !(mt.frobenius() > 0.0) {
        return Err(MtError::ZeroTensor);
    }
    let dev = mt.deviatoric();
    let norm = dev.frobenius();
    if !(norm > 0.0) {
        return Err(MtError::ZeroTensor);
    }
    let d = dev.m;
    let m0 = norm / std::f64::consts::SQRT_2;
    Ok(SourceLabel {
        dev: [d[0] / norm, d[1] / norm, d[3] / norm, d[4] / norm, d[5] / norm],
        mw: m0_to_mw(m0),
    })
}

/// Inverse of [`mt_to_label`]. The deviatoric components are renormalized so
/// slightly off-norm labels (e.g. network predictions) map to a valid tensor.
pub fn label_to_mt(label: &SourceLabel) -> Result<MomentTensor, MtError> {
    let norm = label.dev_norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(MtError::ZeroTensor);
    }
    let scale = std::f64::consts::SQRT_2 * mw_to_m0(label.mw) / norm;
    let [xx, yy, xy, xz, yz] = label.dev;
    let mxx = xx * scale;
    let myy = yy * scale;
    Ok(MomentTensor::new([
        mxx,
        myy,
        -(mxx + myy),
        xy * scale,
        xz * scale,
        yz * scale,
    ]))
}

/// Haar-uniform random rotation from a uniform unit quaternion (Shoemake).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = [
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    ];
    quat_to_matrix(q)
}

/// Rotation matrix of the unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
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

/// Double couple with uniformly random orientation and Mw uniform on
/// `[mw_lo, mw_hi]`.
pub fn sample_uniform_dc<R: Rng + ?Sized>(rng: &mut R, mw_range: (f64, f64)) -> MomentTensor {
    let rot = random_rotation(rng);
    let u: f64 = rng.random();
    let mw = mw_range.0 + u * (mw_range.1 - mw_range.0);
    let reference = MomentTensor::new([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut mt = reference.rotated(&rot).scaled(mw_to_m0(mw));
    // Rotation preserves the trace only up to rounding; pin it back to zero.
    mt.m[2] = -(mt.m[0] + mt.m[1]);
    mt
}

/// Principal-axis frame with columns (T, B, P): tension, null and pressure
/// axes ordered by descending eigenvalue, right-handed.
pub fn principal_frame(mt: &MomentTensor) -> Result<Matrix3<f64>, MtError> {
    let scale = mt.frobenius();
    if !(scale > 0.0) {
        return Err(MtError::ZeroTensor);
    }
    let eig = SymmetricEigen::new(mt.matrix());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.map(|i| eig.eigenvalues[i]);
    let tol = DEGENERACY_TOL * scale;
    if vals[0] - vals[1] <= tol || vals[1] - vals[2] <= tol {
        return Err(MtError::DegenerateTensor);
    }
    let t: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    let p: Vector3<f64> = eig.eigenvectors.column(order[2]).normalize();
    let b = p.cross(&t).normalize();
    Ok(Matrix3::from_columns(&[t, b, p]))
}

/// Unit quaternion `[w, x, y, z]` of a proper rotation matrix.
pub fn matrix_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Minimum rotation angle (degrees, in `[0, 120]`) between the double-couple
/// orientations of two tensors.
///
/// The relative rotation between principal frames is expressed as a quaternion;
/// composing with the three 180° axis flips of the double-couple symmetry group
/// permutes its components, so the minimal angle is `2·acos(max |q_i|)`.
pub fn kagan_angle(a: &MomentTensor, b: &MomentTensor) -> Result<f64, MtError> {
    let fa = principal_frame(a)?;
    let fb = principal_frame(b)?;
    let rel = fa.transpose() * fb;
    let q = matrix_to_quat(&rel);
    let best = q.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).min(1.0);
    Ok((2.0 * best.acos()).to_degrees())
}

/// Far-field P amplitude `γᵀMγ` and transverse S vector `Mγ − (γᵀMγ)γ`.
pub fn radiation(mt: &MomentTensor, ray: &[f64; 3]) -> (f64, [f64; 3]) {
    let m = mt.matrix();
    let g = Vector3::new(ray[0], ray[1], ray[2]);
    let mg = m * g;
    let p = g.dot(&mg);
    let s = mg - g * p;
    (p, [s[0], s[1], s[2]])
}
