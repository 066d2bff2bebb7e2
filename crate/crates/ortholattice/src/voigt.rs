//! Plane-stress constitutive tensors in Voigt notation.
//!
//! Components are ordered (11, 22, 12) with engineering shear strain,
//! so `sigma = E * [e11, e22, gamma12]`.

use serde::{Deserialize, Serialize};

/// Symmetric 3x3 plane-stress stiffness matrix in Voigt notation.
///
/// Entries are dimensionless (units of the coating modulus `E0`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoigtTensor {
    pub c11: f64,
    pub c12: f64,
    pub c22: f64,
    pub c16: f64,
    pub c26: f64,
    pub c66: f64,
}

impl VoigtTensor {
    pub const ZERO: VoigtTensor = VoigtTensor {
        c11: 0.0,
        c12: 0.0,
        c22: 0.0,
        c16: 0.0,
        c26: 0.0,
        c66: 0.0,
    };

    /// Isotropic plane-stress stiffness for Young's modulus `e` and Poisson ratio `nu`.
    pub fn isotropic(e: f64, nu: f64) -> Self {
        let f = e / (1.0 - nu * nu);
        VoigtTensor {
            c11: f,
            c12: f * nu,
            c22: f,
            c16: 0.0,
            c26: 0.0,
            c66: f * (1.0 - nu) / 2.0,
        }
    }

    /// Orthotropic tensor in its material frame (no normal-shear coupling).
    pub fn orthotropic(c11: f64, c12: f64, c22: f64, c66: f64) -> Self {
        VoigtTensor {
            c11,
            c12,
            c22,
            c16: 0.0,
            c26: 0.0,
            c66,
        }
    }

    /// Dense 3x3 matrix, row-major.
    pub fn as_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.c11, self.c12, self.c16],
            [self.c12, self.c22, self.c26],
            [self.c16, self.c26, self.c66],
        ]
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        VoigtTensor {
            c11: m[0][0],
            c12: 0.5 * (m[0][1] + m[1][0]),
            c22: m[1][1],
            c16: 0.5 * (m[0][2] + m[2][0]),
            c26: 0.5 * (m[1][2] + m[2][1]),
            c66: m[2][2],
        }
    }

    /// `sigma = E * eps` with engineering shear strain in `eps[2]`.
    pub fn apply(&self, eps: [f64; 3]) -> [f64; 3] {
        [
            self.c11 * eps[0] + self.c12 * eps[1] + self.c16 * eps[2],
            self.c12 * eps[0] + self.c22 * eps[1] + self.c26 * eps[2],
            self.c16 * eps[0] + self.c26 * eps[1] + self.c66 * eps[2],
        ]
    }

    pub fn scale(&self, s: f64) -> Self {
        VoigtTensor {
            c11: self.c11 * s,
            c12: self.c12 * s,
            c22: self.c22 * s,
            c16: self.c16 * s,
            c26: self.c26 * s,
            c66: self.c66 * s,
        }
    }

    pub fn add(&self, o: &VoigtTensor) -> Self {
        VoigtTensor {
            c11: self.c11 + o.c11,
            c12: self.c12 + o.c12,
            c22: self.c22 + o.c22,
            c16: self.c16 + o.c16,
            c26: self.c26 + o.c26,
            c66: self.c66 + o.c66,
        }
    }

    pub fn sub(&self, o: &VoigtTensor) -> Self {
        self.add(&o.scale(-1.0))
    }

    /// Smallest eigenvalue of the symmetric 3x3 matrix (Jacobi iteration).
    pub fn min_eigenvalue(&self) -> f64 {
        let mut a = self.as_matrix();
        // Cyclic Jacobi, plenty for a 3x3.
        for _ in 0..50 {
            let mut off = 0.0;
            for p in 0..2 {
                for q in (p + 1)..3 {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..2 {
                for q in (p + 1)..3 {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..3 {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..3 {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        a[0][0].min(a[1][1]).min(a[2][2])
    }

    /// Positive semi-definiteness check with a small tolerance.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn isotropic_entries() {
        let e = VoigtTensor::isotropic(1.0, 0.3);
        assert_relative_eq!(e.c11, 1.0 / 0.91, epsilon = 1e-12);
        assert_relative_eq!(e.c12, 0.3 / 0.91, epsilon = 1e-12);
        assert_relative_eq!(e.c66, 0.35 / 0.91, epsilon = 1e-12);
        assert!(e.is_psd(1e-12));
    }

    #[test]
    fn min_eig_of_diag() {
        let e = VoigtTensor::orthotropic(2.0, 0.0, 3.0, 0.5);
        assert_relative_eq!(e.min_eigenvalue(), 0.5, epsilon = 1e-10);
    }
}
