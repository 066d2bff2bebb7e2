//! Pointwise material model: frame rotation, density and stiffness
//! interpolation in `(phi, tau, a1, a2, theta)`, and the partial derivatives
//! consumed by the optimizer.
//!
//! The stiffness blend is
//! `E = 1e-9 E0 + q (E_I - 1e-9 E0) phi^p1 + q (E0 - E_I phi^p1) tau^p2`,
//! with `E_I` the (rotated) infill stiffness. `q < 1` only inside the padded
//! filter region.

use crate::homogenize::{HomogDB, HomogError, E0, NU0, VOID_FLOOR};
use crate::voigt::VoigtTensor;

/// Penalization exponent on the base indicator.
pub const P1: f64 = 3.0;
/// Penalization exponent on the coating indicator.
pub const P2: f64 = 1.0;
/// Stiffness knockdown applied in the padded filter region.
pub const PAD_Q: f64 = 0.2;

/// Coating material tensor.
pub fn e_base() -> VoigtTensor {
    VoigtTensor::isotropic(E0, NU0)
}

/// Stiffness of a material whose local 1-axis is rotated by `theta` (radians,
/// counter-clockwise) from the global x-axis.
pub fn rotate(e: &VoigtTensor, theta: f64) -> VoigtTensor {
    let c = theta.cos();
    let s = theta.sin();
    // stress transformation (material frame -> global), engineering shear
    let t = [
        [c * c, s * s, -2.0 * c * s],
        [s * s, c * c, 2.0 * c * s],
        [c * s, -c * s, c * c - s * s],
    ];
    let m = e.as_matrix();
    let mut tm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                tm[i][j] += t[i][k] * m[k][j];
            }
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += tm[i][k] * t[j][k];
            }
        }
    }
    VoigtTensor::from_matrix(out)
}

/// Mass fraction of the infill cell.
pub fn infill_mass(a1: f64, a2: f64) -> f64 {
    1.0 - a1 * a2
}

/// Isotropic surrogate modulus at mass fraction `m` (upper-bound fit).
pub fn hs_isotropic(m: f64) -> f64 {
    assert!(m > 0.0 && m <= 1.0, "mass fraction out of range: {m}");
    m / (3.0 - 2.0 * m)
}

/// Physical density of the composite point.
pub fn density(phi: f64, tau: f64, a1: f64, a2: f64) -> f64 {
    let m = infill_mass(a1, a2);
    m * phi + (1.0 - m * phi) * tau
}

/// Partial derivatives of [`density`] w.r.t. `(phi, tau, a1, a2)`.
pub fn ddensity(phi: f64, tau: f64, a1: f64, a2: f64) -> [f64; 4] {
    let m = infill_mass(a1, a2);
    [
        m * (1.0 - tau),
        1.0 - m * phi,
        -a2 * phi * (1.0 - tau),
        -a1 * phi * (1.0 - tau),
    ]
}

/// Local-frame infill stiffness and its derivatives w.r.t. the hole dims.
#[derive(Debug, Clone, Copy)]
pub struct Infill {
    pub e: VoigtTensor,
    pub de_da1: VoigtTensor,
    pub de_da2: VoigtTensor,
}

impl Infill {
    /// Orthotropic infill from the homogenization database.
    pub fn orthotropic(db: &HomogDB, a1: f64, a2: f64) -> Result<Infill, HomogError> {
        let (e, de_da1, de_da2) = db.interp(a1, a2)?;
        Ok(Infill { e, de_da1, de_da2 })
    }

    /// Isotropic surrogate at fixed mass fraction (hole dims have no effect).
    pub fn isotropic(m: f64) -> Infill {
        Infill {
            e: VoigtTensor::isotropic(hs_isotropic(m), NU0),
            de_da1: VoigtTensor::ZERO,
            de_da2: VoigtTensor::ZERO,
        }
    }
}

/// Composite stiffness at one point.
pub fn stiffness_from_infill(phi: f64, tau: f64, theta: f64, q: f64, infill: &Infill) -> VoigtTensor {
    let e0 = e_base();
    let ei = rotate(&infill.e, theta);
    let floor = e0.scale(VOID_FLOOR);
    let p_phi = phi.powf(P1);
    let p_tau = tau.powf(P2);
    floor
        .add(&ei.sub(&floor).scale(q * p_phi))
        .add(&e0.sub(&ei.scale(p_phi)).scale(q * p_tau))
}

/// Derivatives of the composite stiffness.
#[derive(Debug, Clone, Copy)]
pub struct StiffnessDerivs {
    pub de_dphi: VoigtTensor,
    pub de_dtau: VoigtTensor,
    pub de_da1: VoigtTensor,
    pub de_da2: VoigtTensor,
}

pub fn dstiffness_from_infill(phi: f64, tau: f64, theta: f64, q: f64, infill: &Infill) -> StiffnessDerivs {
    let e0 = e_base();
    let ei = rotate(&infill.e, theta);
    let floor = e0.scale(VOID_FLOOR);
    let p_tau = tau.powf(P2);
    let dp_phi = P1 * phi.powf(P1 - 1.0);
    let dp_tau = if P2 == 1.0 { 1.0 } else { P2 * tau.powf(P2 - 1.0) };
    let p_phi = phi.powf(P1);
    let de_dphi = ei.sub(&floor).scale(q * dp_phi).sub(&ei.scale(q * dp_phi * p_tau));
    let de_dtau = e0.sub(&ei.scale(p_phi)).scale(q * dp_tau);
    let da = |d: &VoigtTensor| rotate(d, theta).scale(q * p_phi * (1.0 - p_tau));
    StiffnessDerivs {
        de_dphi,
        de_dtau,
        de_da1: da(&infill.de_da1),
        de_da2: da(&infill.de_da2),
    }
}

/// Database-backed stiffness (orthotropic infill).
pub fn stiffness(
    phi: f64,
    tau: f64,
    a1: f64,
    a2: f64,
    theta: f64,
    q: f64,
    db: &HomogDB,
) -> Result<VoigtTensor, HomogError> {
    Ok(stiffness_from_infill(phi, tau, theta, q, &Infill::orthotropic(db, a1, a2)?))
}

pub fn dstiffness(
    phi: f64,
    tau: f64,
    a1: f64,
    a2: f64,
    theta: f64,
    q: f64,
    db: &HomogDB,
) -> Result<StiffnessDerivs, HomogError> {
    Ok(dstiffness_from_infill(phi, tau, theta, q, &Infill::orthotropic(db, a1, a2)?))
}

/// Chain term for the single-variable hole parametrization
/// `a2 = (1 - m) / a1`: the reduced derivative w.r.t. `a1`.
pub fn reduced_da1(d: &StiffnessDerivs, m: f64, a1: f64) -> VoigtTensor {
    let da2_da1 = -(1.0 - m) / (a1 * a1);
    d.de_da1.add(&d.de_da2.scale(da2_da1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::small_db;
    use approx::assert_relative_eq;

    fn assert_tensor_eq(a: &VoigtTensor, b: &VoigtTensor, tol: f64) {
        for (x, y) in [
            (a.c11, b.c11),
            (a.c12, b.c12),
            (a.c22, b.c22),
            (a.c16, b.c16),
            (a.c26, b.c26),
            (a.c66, b.c66),
        ] {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn rotate_identity_and_roundtrip() {
        let e = VoigtTensor::orthotropic(2.0, 0.4, 1.1, 0.3);
        assert_tensor_eq(&rotate(&e, 0.0), &e, 1e-14);
        for &th in &[0.3, 1.1, -0.7, 2.9] {
            let back = rotate(&rotate(&e, th), -th);
            assert_tensor_eq(&back, &e, 1e-12);
        }
    }

    #[test]
    fn rotate_isotropic_invariant() {
        let e = VoigtTensor::isotropic(1.0, 0.3);
        for &th in &[0.2, 0.9, 1.7, -1.3] {
            assert_tensor_eq(&rotate(&e, th), &e, 1e-12);
        }
    }

    #[test]
    fn rotate_quarter_turn_swaps() {
        let e = VoigtTensor::orthotropic(2.0, 0.4, 1.1, 0.3);
        let r = rotate(&e, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(r.c11, e.c22, epsilon = 1e-12);
        assert_relative_eq!(r.c22, e.c11, epsilon = 1e-12);
        assert_relative_eq!(r.c12, e.c12, epsilon = 1e-12);
        assert_relative_eq!(r.c66, e.c66, epsilon = 1e-12);
    }

    #[test]
    fn rotate_preserves_invariants() {
        let e = VoigtTensor::orthotropic(2.0, 0.4, 1.1, 0.3);
        let tr0 = e.c11 + e.c22 + 2.0 * e.c12;
        let det0 = {
            let m = e.as_matrix();
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        for &th in &[0.37, 1.21, -2.3] {
            let r = rotate(&e, th);
            assert_relative_eq!(r.c11 + r.c22 + 2.0 * r.c12, tr0, epsilon = 1e-12);
            let m = r.as_matrix();
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert_relative_eq!(det, det0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotate_energy_consistent() {
        // strain energy must be frame independent
        let e = VoigtTensor::orthotropic(2.0, 0.4, 1.1, 0.3);
        let th: f64 = 0.62;
        let (c, s) = (th.cos(), th.sin());
        let eps_g = [0.7, -0.2, 0.4];
        // tensor rotation of the strain into the material frame
        let (exx, eyy, gxy) = (eps_g[0], eps_g[1], eps_g[2]);
        let e_loc = [
            c * c * exx + s * s * eyy + c * s * gxy,
            s * s * exx + c * c * eyy - c * s * gxy,
            2.0 * c * s * (eyy - exx) + (c * c - s * s) * gxy,
        ];
        let sg = rotate(&e, th).apply(eps_g);
        let sl = e.apply(e_loc);
        let wg: f64 = sg.iter().zip(&eps_g).map(|(a, b)| a * b).sum();
        let wl: f64 = sl.iter().zip(&e_loc).map(|(a, b)| a * b).sum();
        assert_relative_eq!(wg, wl, epsilon = 1e-12);
    }

    #[test]
    fn density_values() {
        assert_relative_eq!(density(1.0, 0.0, 0.5, 0.5), 0.75, epsilon = 1e-14);
        assert_relative_eq!(density(0.3, 1.0, 0.7, 0.2), 1.0, epsilon = 1e-14);
        assert_relative_eq!(density(0.0, 0.0, 0.5, 0.5), 0.0, epsilon = 1e-14);
        let d = ddensity(0.4, 0.3, 0.5, 0.6);
        let e = 1e-7;
        let fd = [
            (density(0.4 + e, 0.3, 0.5, 0.6) - density(0.4 - e, 0.3, 0.5, 0.6)) / (2.0 * e),
            (density(0.4, 0.3 + e, 0.5, 0.6) - density(0.4, 0.3 - e, 0.5, 0.6)) / (2.0 * e),
            (density(0.4, 0.3, 0.5 + e, 0.6) - density(0.4, 0.3, 0.5 - e, 0.6)) / (2.0 * e),
            (density(0.4, 0.3, 0.5, 0.6 + e) - density(0.4, 0.3, 0.5, 0.6 - e)) / (2.0 * e),
        ];
        for k in 0..4 {
            assert_relative_eq!(d[k], fd[k], epsilon = 1e-7);
        }
    }

    #[test]
    fn hs_values() {
        assert_relative_eq!(hs_isotropic(1.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(hs_isotropic(0.5), 0.25, epsilon = 1e-14);
        assert_relative_eq!(hs_isotropic(0.9), 0.75, epsilon = 1e-14);
    }

    #[test]
    fn stiffness_endpoints() {
        let db = small_db();
        let e = stiffness(0.0, 0.0, 0.3, 0.3, 0.0, 1.0, db).unwrap();
        assert_tensor_eq(&e, &e_base().scale(VOID_FLOOR), 1e-15);
        let e = stiffness(1.0, 1.0, 0.3, 0.3, 0.4, 1.0, db).unwrap();
        assert_tensor_eq(&e, &e_base(), 1e-12);
    }

    #[test]
    fn pure_infill_matches_database() {
        let db = small_db();
        // at a grid node the interpolant returns the table entry exactly
        let a = db.a_grid[2];
        let e = stiffness(1.0, 0.0, a, a, 0.0, 1.0, db).unwrap();
        let (t, _, _) = db.interp(a, a).unwrap();
        // E = floor + (E_H - floor) at phi=1, tau=0: the floor cancels
        assert_tensor_eq(&e, &t, 1e-9);
    }

    #[test]
    fn dstiffness_matches_fd() {
        let db = small_db();
        let mut state = 0xFEEDu64;
        let mut rand = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let step = 1e-6;
        let comps = |t: &VoigtTensor| [t.c11, t.c12, t.c22, t.c16, t.c26, t.c66];
        for _ in 0..50 {
            let phi = 0.1 + 0.8 * rand();
            let tau = 0.1 + 0.8 * rand();
            let a1 = 0.25 + 0.3 * rand();
            let a2 = 0.25 + 0.3 * rand();
            let th = 3.0 * (rand() - 0.5);
            let q = if rand() < 0.5 { 1.0 } else { PAD_Q };
            let d = dstiffness(phi, tau, a1, a2, th, q, db).unwrap();
            let pairs = [
                (d.de_dphi, stiffness(phi + step, tau, a1, a2, th, q, db).unwrap(), stiffness(phi - step, tau, a1, a2, th, q, db).unwrap()),
                (d.de_dtau, stiffness(phi, tau + step, a1, a2, th, q, db).unwrap(), stiffness(phi, tau - step, a1, a2, th, q, db).unwrap()),
                (d.de_da1, stiffness(phi, tau, a1 + step, a2, th, q, db).unwrap(), stiffness(phi, tau, a1 - step, a2, th, q, db).unwrap()),
                (d.de_da2, stiffness(phi, tau, a1, a2 + step, th, q, db).unwrap(), stiffness(phi, tau, a1, a2 - step, th, q, db).unwrap()),
            ];
            for (an, p, m) in pairs {
                let an = comps(&an);
                let p = comps(&p);
                let m = comps(&m);
                for k in 0..6 {
                    let fd = (p[k] - m[k]) / (2.0 * step);
                    assert!(
                        (an[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-3),
                        "component {k}: {} vs {fd} at phi={phi} tau={tau} a=({a1},{a2})",
                        an[k]
                    );
                }
            }
        }
    }

    #[test]
    fn reduced_derivative_chain() {
        let db = small_db();
        let m = 0.82;
        let a1 = 0.45;
        let a2 = (1.0 - m) / a1; // = 0.4
        let d = dstiffness(0.7, 0.2, a1, a2, 0.3, 1.0, db).unwrap();
        let red = reduced_da1(&d, m, a1);
        let step = 1e-6;
        let at = |a1q: f64| stiffness(0.7, 0.2, a1q, (1.0 - m) / a1q, 0.3, 1.0, db).unwrap();
        let (p, mm) = (at(a1 + step), at(a1 - step));
        let fd = [
            (p.c11 - mm.c11) / (2.0 * step),
            (p.c22 - mm.c22) / (2.0 * step),
            (p.c66 - mm.c66) / (2.0 * step),
        ];
        for (a, f) in [red.c11, red.c22, red.c66].iter().zip(&fd) {
            assert!((a - f).abs() <= 1e-5 * f.abs().max(1e-3), "{a} vs {f}");
        }
    }

    #[test]
    fn isotropic_infill_has_no_hole_sensitivity() {
        let inf = Infill::isotropic(0.6);
        let d = dstiffness_from_infill(0.5, 0.3, 0.9, 1.0, &inf);
        assert_tensor_eq(&d.de_da1, &VoigtTensor::ZERO, 1e-15);
        assert_tensor_eq(&d.de_da2, &VoigtTensor::ZERO, 1e-15);
    }
}
