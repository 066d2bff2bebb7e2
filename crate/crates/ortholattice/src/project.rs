//! De-homogenization of an optimized coated design onto a fine solid/void
//! lattice.
//!
//! The steps are: align the angle field (remove the pi ambiguity of principal
//! directions), solve for two mapping functions whose gradients follow the
//! layer normals, scale their periodicity to a target spacing, synthesize the
//! two layer densities on a fine mesh (optionally with adaptive periodicity
//! and transition zones that split members), union them with the coating, and
//! re-evaluate compliance on the fine mesh.

use std::f64::consts::PI;
use std::sync::OnceLock;

use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use thiserror::Error;

use crate::fem::{compliance, Analysis, BoundaryCondition, FemError};
use crate::filters::heaviside;
use crate::grid::Grid;
use crate::material::e_base;
use crate::optimize::{DesignState, Evaluation};
use crate::voigt::VoigtTensor;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("finite element solve failed: {0}")]
    Fem(#[from] FemError),
    #[error("mapping domain is empty")]
    EmptyDomain,
    #[error("mapping system factorization failed")]
    SingularMapping,
    #[error("transition threshold bisection failed at w={w}, psi={psi}")]
    BisectionFailure { w: f64, psi: f64 },
}

/// Ratio of intermediate to coarse resolution for the mapping solve.
pub const INTERMEDIATE_REFINE: usize = 2;
/// Default ratio of fine to coarse resolution for the synthesis.
pub const DEFAULT_FINE_REFINE: usize = 10;

/// Coarse element fields feeding the projection (physical domain only,
/// row-major from the bottom-left).
#[derive(Debug, Clone)]
pub struct ProjectionInput {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// solid-domain indicator
    pub phi: Vec<f64>,
    /// normalized interface gradient norm (coating indicator before projection)
    pub grad_norm: Vec<f64>,
    /// lamination angle, radians
    pub theta: Vec<f64>,
    /// hole width along the local 1-axis
    pub a1: Vec<f64>,
    /// hole width along the local 2-axis
    pub a2: Vec<f64>,
    /// Heaviside sharpness used when re-projecting the coating
    pub beta: f64,
}

impl ProjectionInput {
    /// Extract the physical-domain fields from an optimizer evaluation.
    /// Passive solid elements get a unit coating indicator so they stay fully
    /// solid after projection.
    pub fn from_evaluation(state: &DesignState, eval: &Evaluation, passive: &[bool]) -> Self {
        let g = &state.grid;
        let n = g.nx * g.ny;
        let mut out = ProjectionInput {
            nx: g.nx,
            ny: g.ny,
            h: g.h,
            phi: Vec::with_capacity(n),
            grad_norm: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            a1: Vec::with_capacity(n),
            a2: Vec::with_capacity(n),
            beta: state.beta,
        };
        for py in 0..g.ny {
            for px in 0..g.nx {
                let (ix, iy) = g.phys_to_ext(px, py);
                let e = g.eidx(ix, iy);
                out.phi.push(eval.phi[e]);
                let gn = if passive[e] { 1.0 } else { eval.fields.grad_norm[e] };
                out.grad_norm.push(gn);
                out.theta.push(state.theta[e]);
                out.a1.push(eval.a1_eff[e]);
                out.a2.push(eval.a2_eff[e]);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ProjectOptions {
    /// target layer spacing (absolute length)
    pub epsilon: f64,
    /// angle-constraint penalty
    pub gamma: f64,
    /// transition-smoothing kernel radius (absolute length)
    pub r_star: f64,
    /// adaptive periodicity refinement on/off
    pub adaptive: bool,
    /// fine elements per coarse element
    pub refine: usize,
}

impl ProjectOptions {
    pub fn new(epsilon: f64) -> Self {
        ProjectOptions {
            epsilon,
            gamma: 1e3,
            r_star: 1.6 * epsilon,
            adaptive: true,
            refine: DEFAULT_FINE_REFINE,
        }
    }
}

/// One solved mapping function on the intermediate grid.
#[derive(Debug, Clone)]
pub struct MappingField {
    /// intermediate elements in x / y and element size
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// nodal mapping function, (nx+1)*(ny+1) row-major; zero outside the
    /// solved region
    pub phi: Vec<f64>,
    /// element-center gradient
    pub grad: Vec<[f64; 2]>,
    /// element-center gradient norm
    pub norm: Vec<f64>,
    pub gamma: f64,
    /// integral of (grad phi . t)^2 over the mask
    pub constraint_residual: f64,
    /// gamma-weighted constraint residual
    pub penalty_residual: f64,
}

/// Fine-grid synthesis result.
pub struct Projection {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// combined binary density
    pub rho: Vec<f64>,
    /// per-layer binary densities (masked to the solid domain)
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    /// binary coating
    pub tau: Vec<f64>,
    /// smoothed periodicity level per layer (empty when non-adaptive)
    pub lambda: [Vec<f64>; 2],
    /// fractional transition parameter per layer (empty when non-adaptive)
    pub psi: [Vec<f64>; 2],
    /// aligned angle field interpolated to the fine grid
    pub theta: Vec<f64>,
    /// material region (solid or coating band) on the fine grid
    pub mask: Vec<bool>,
    /// solid domain (infill plus inner coating) where layers are drawn
    pub structure: Vec<bool>,
    pub mapping: [MappingField; 2],
    /// periodicity scales (used by the non-adaptive path)
    pub p_scale: [f64; 2],
    /// irreconcilable angle seams found during alignment
    pub seams: usize,
}

// ---------------------------------------------------------------------------
// waves

/// Triangle wave with period 2*pi, range [-1, 1] and maxima at odd multiples
/// of pi.
pub fn triangle_wave(x: f64) -> f64 {
    let u = x.rem_euclid(2.0 * PI);
    1.0 - 2.0 * (u - PI).abs() / PI
}

/// Unthresholded layer profile in [0, 1].
pub fn rho_tilde(arg: f64) -> f64 {
    0.5 + 0.5 * triangle_wave(arg)
}

/// Unthresholded profile at a discrete periodicity level.
pub fn adaptive_profile(phi: f64, lambda: i32) -> f64 {
    let l = lambda as f64;
    rho_tilde((l + 1.0).exp2() * PI * phi + l * PI)
}

/// Discrete periodicity level for a local gradient norm and target spacing.
pub fn lambda_of(norm: f64, epsilon: f64) -> i32 {
    (1.0 / (epsilon * norm.max(1e-12))).log2().round() as i32
}

/// Transition wave as a function of the low-periodicity phase `t` (radians in
/// [0, 2*pi)). `parity` is lambda mod 2; the high wave keeps the phase offset
/// of the next periodicity level so the psi -> 1 limit matches it exactly.
fn transition_from_phase(t: f64, parity: usize, psi: f64) -> f64 {
    // doubled low-periodicity triangle, range [0, 2]
    let a = 1.0 - (t - PI).abs() / PI;
    // next-level wave: phase -(lambda - 1) pi = pi (even lambda) or 0 (odd)
    let off = if parity == 0 { PI } else { 0.0 };
    let b = 0.5 + 0.5 * triangle_wave(2.0 * t + off);
    // centered notch, width psi/2 of the low period
    let half = 0.5 * psi * PI;
    let d = (t - PI).abs();
    let notch = if d < half && half > 0.0 {
        2.0 * (1.0 - psi) * (1.0 - d / half)
    } else {
        0.0
    };
    2.0 * (1.0 - psi) * a - notch + 2.0 * psi * b
}

/// Transition wave in [0, 2] at a point with mapping value `phi`.
pub fn transition_value(phi: f64, lambda: i32, psi: f64) -> f64 {
    let l = lambda as f64;
    let t = ((l + 1.0).exp2() * PI * phi + l * PI).rem_euclid(2.0 * PI);
    transition_from_phase(t, lambda.rem_euclid(2) as usize, psi)
}

// ---------------------------------------------------------------------------
// transition threshold lookup

const LUT_N: usize = 64;
const LUT_SAMPLES: usize = 4096;
const LUT_TOL: f64 = 1e-3;

/// Cached thresholds for the transition wave: for each (width, psi, parity)
/// the level whose superlevel set has solid fraction equal to the width.
pub struct TransitionLut {
    // [parity][k * LUT_N + j], w_k = k/(LUT_N-1), psi_j = j/(LUT_N-1)
    thr: [Vec<f64>; 2],
}

fn transition_fraction(parity: usize, psi: f64, thr: f64) -> f64 {
    let mut cnt = 0usize;
    for s in 0..LUT_SAMPLES {
        let t = (s as f64 + 0.5) * 2.0 * PI / LUT_SAMPLES as f64;
        if transition_from_phase(t, parity, psi) >= thr {
            cnt += 1;
        }
    }
    cnt as f64 / LUT_SAMPLES as f64
}

fn build_lut() -> Result<TransitionLut, (f64, f64)> {
    let mut thr = [vec![0.0; LUT_N * LUT_N], vec![0.0; LUT_N * LUT_N]];
    let step = 1.0 / (LUT_N - 1) as f64;
    for parity in 0..2 {
        for k in 0..LUT_N {
            let w = k as f64 * step;
            for j in 0..LUT_N {
                let psi = j as f64 * step;
                // At isolated psi the wave slopes cancel and the profile has
                // flat plateaus; the fraction then jumps over the threshold.
                // A tiny psi perturbation restores a monotone continuous
                // fraction without moving the table node noticeably.
                let mut t = 0.0;
                let mut ok = false;
                for attempt in 0..4 {
                    let pe = (psi + attempt as f64 * 1e-4).min(1.0);
                    let (mut lo, mut hi) = (0.0_f64, 2.0_f64);
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        if transition_fraction(parity, pe, mid) > w {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    t = 0.5 * (lo + hi);
                    if (transition_fraction(parity, pe, t) - w).abs() <= 5.0 * LUT_TOL {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err((w, psi));
                }
                thr[parity][k * LUT_N + j] = t;
            }
        }
    }
    Ok(TransitionLut { thr })
}

static LUT: OnceLock<Result<TransitionLut, (f64, f64)>> = OnceLock::new();

impl TransitionLut {
    pub fn get() -> Result<&'static TransitionLut, ProjectError> {
        match LUT.get_or_init(build_lut) {
            Ok(l) => Ok(l),
            Err(e) => Err(ProjectError::BisectionFailure { w: e.0, psi: e.1 }),
        }
    }

    /// Bilinear threshold lookup.
    pub fn threshold(&self, w: f64, psi: f64, parity: usize) -> f64 {
        let n = LUT_N - 1;
        let fw = (w.clamp(0.0, 1.0) * n as f64).clamp(0.0, n as f64);
        let fp = (psi.clamp(0.0, 1.0) * n as f64).clamp(0.0, n as f64);
        let k = (fw as usize).min(n - 1);
        let j = (fp as usize).min(n - 1);
        let (sw, sp) = (fw - k as f64, fp - j as f64);
        let t = &self.thr[parity];
        let v00 = t[k * LUT_N + j];
        let v01 = t[k * LUT_N + j + 1];
        let v10 = t[(k + 1) * LUT_N + j];
        let v11 = t[(k + 1) * LUT_N + j + 1];
        v00 * (1.0 - sw) * (1.0 - sp) + v01 * (1.0 - sw) * sp + v10 * sw * (1.0 - sp) + v11 * sw * sp
    }

    /// Thresholded layer density at one point under adaptive periodicity.
    pub fn density(&self, phi: f64, lambda_tilde: f64, w: f64) -> f64 {
        let lf = lambda_tilde.floor();
        let psi = lambda_tilde - lf;
        let l = lf as i32;
        let solid = if psi < 1e-9 {
            adaptive_profile(phi, l) >= 1.0 - w
        } else {
            let parity = l.rem_euclid(2) as usize;
            transition_value(phi, l, psi) >= self.threshold(w, psi, parity)
        };
        if solid {
            1.0
        } else {
            0.0
        }
    }
}

// ---------------------------------------------------------------------------
// angle alignment

/// Unwrap the pi-ambiguity of the angle field over the masked region so that
/// neighboring elements differ by less than pi/2. Returns the number of
/// irreconcilable adjacent pairs (angle-field singularities leave at least
/// one seam).
pub fn align_angles_global(theta: &mut [f64], mask: &[bool], nx: usize, ny: usize) -> usize {
    let mut visited = vec![false; nx * ny];
    let mut seams = 0usize;
    let mut queue = std::collections::VecDeque::new();
    for seed in 0..nx * ny {
        if !mask[seed] || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(e) = queue.pop_front() {
            let (ix, iy) = (e % nx, e / nx);
            let mut push = |jx: usize, jy: usize, seams: &mut usize| {
                let v = jy * nx + jx;
                if !mask[v] {
                    return;
                }
                if visited[v] {
                    if (theta[e] - theta[v]).abs() > PI / 2.0 + 1e-9 {
                        *seams += 1;
                    }
                    return;
                }
                let k = ((theta[e] - theta[v]) / PI).round();
                theta[v] += k * PI;
                visited[v] = true;
                queue.push_back(v);
            };
            if ix > 0 {
                push(ix - 1, iy, &mut seams);
            }
            if ix + 1 < nx {
                push(ix + 1, iy, &mut seams);
            }
            if iy > 0 {
                push(ix, iy - 1, &mut seams);
            }
            if iy + 1 < ny {
                push(ix, iy + 1, &mut seams);
            }
        }
    }
    seams
}

// ---------------------------------------------------------------------------
// mapping solve

/// Layer normal and tangent for a lamination angle.
fn layer_dirs(theta: f64, layer: usize) -> ([f64; 2], [f64; 2]) {
    let (s, c) = theta.sin_cos();
    if layer == 1 {
        ([-s, c], [c, s])
    } else {
        ([c, s], [-s, c])
    }
}

fn label_components(mask: &[bool], nx: usize, ny: usize) -> (Vec<usize>, usize) {
    let mut label = vec![usize::MAX; nx * ny];
    let mut count = 0usize;
    let mut queue = std::collections::VecDeque::new();
    for seed in 0..nx * ny {
        if !mask[seed] || label[seed] != usize::MAX {
            continue;
        }
        label[seed] = count;
        queue.push_back(seed);
        while let Some(e) = queue.pop_front() {
            let (ix, iy) = (e % nx, e / nx);
            let mut push = |v: usize| {
                if mask[v] && label[v] == usize::MAX {
                    label[v] = count;
                    queue.push_back(v);
                }
            };
            if ix > 0 {
                push(e - 1);
            }
            if ix + 1 < nx {
                push(e + 1);
            }
            if iy > 0 {
                push(e - nx);
            }
            if iy + 1 < ny {
                push(e + nx);
            }
        }
        count += 1;
    }
    (label, count)
}

/// Solve for one mapping function by minimizing
/// `1/2 int |grad phi - n|^2 + gamma/2 int (grad phi . t)^2`
/// with bilinear elements over the masked region. One node per connected
/// component is pinned to zero (the functional only sees gradients).
pub fn solve_mapping(
    theta: &[f64],
    mask: &[bool],
    nx: usize,
    ny: usize,
    h: f64,
    gamma: f64,
    layer: usize,
) -> Result<MappingField, ProjectError> {
    assert!(layer == 1 || layer == 2);
    let n_el = nx * ny;
    assert!(theta.len() == n_el && mask.len() == n_el);
    if !mask.iter().any(|&m| m) {
        return Err(ProjectError::EmptyDomain);
    }
    let (label, n_comp) = label_components(mask, nx, ny);
    let nxn = nx + 1;
    let n_nodes = nxn * (ny + 1);

    // pin the bottom-left node of the first element of each component
    let mut pinned = vec![false; n_nodes];
    let mut seen = vec![false; n_comp];
    for e in 0..n_el {
        if mask[e] && !seen[label[e]] {
            seen[label[e]] = true;
            let (ix, iy) = (e % nx, e / nx);
            pinned[iy * nxn + ix] = true;
        }
    }
    // reduced numbering over active (touched, unpinned) nodes
    let mut red = vec![usize::MAX; n_nodes];
    let mut n_red = 0usize;
    for iy in 0..ny {
        for ix in 0..nx {
            if !mask[iy * nx + ix] {
                continue;
            }
            for n in element_node_ids(ix, iy, nxn) {
                if !pinned[n] && red[n] == usize::MAX {
                    red[n] = n_red;
                    n_red += 1;
                }
            }
        }
    }

    // element integration: 2x2 Gauss
    let g = 1.0 / 3.0_f64.sqrt();
    let gauss = [(-g, -g), (g, -g), (g, g), (-g, g)];
    let detw = h * h / 4.0;
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0; n_red];
    for iy in 0..ny {
        for ix in 0..nx {
            let e = iy * nx + ix;
            if !mask[e] {
                continue;
            }
            let (nv, tv) = layer_dirs(theta[e], layer);
            let mut ke = [[0.0; 4]; 4];
            let mut fe = [0.0; 4];
            for &(xi, eta) in &gauss {
                let grads = shape_gradients(xi, eta, h);
                for a in 0..4 {
                    let ga = grads[a];
                    fe[a] += (ga[0] * nv[0] + ga[1] * nv[1]) * detw;
                    for b in 0..4 {
                        let gb = grads[b];
                        let tg = tv[0] * gb[0] + tv[1] * gb[1];
                        let mg = [gb[0] + gamma * tg * tv[0], gb[1] + gamma * tg * tv[1]];
                        ke[a][b] += (ga[0] * mg[0] + ga[1] * mg[1]) * detw;
                    }
                }
            }
            let nodes = element_node_ids(ix, iy, nxn);
            for a in 0..4 {
                let ra = red[nodes[a]];
                if ra == usize::MAX {
                    continue;
                }
                rhs[ra] += fe[a];
                for b in 0..4 {
                    let rb = red[nodes[b]];
                    if rb != usize::MAX {
                        trip.push((ra, rb, ke[a][b]));
                    }
                }
            }
        }
    }

    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n_red, n_red, &trip)
        .map_err(|_| ProjectError::SingularMapping)?;
    let llt = a.sp_cholesky(faer::Side::Lower).map_err(|_| ProjectError::SingularMapping)?;
    let mut b = faer::Mat::<f64>::zeros(n_red, 1);
    for i in 0..n_red {
        b[(i, 0)] = rhs[i];
    }
    let x = llt.solve(&b);

    let mut phi = vec![0.0; n_nodes];
    for n in 0..n_nodes {
        if red[n] != usize::MAX {
            phi[n] = x[(red[n], 0)];
        }
    }

    // element-center gradients and constraint residual
    let mut grad = vec![[0.0; 2]; n_el];
    let mut norm = vec![0.0; n_el];
    let mut residual = 0.0;
    let cgrads = shape_gradients(0.0, 0.0, h);
    for iy in 0..ny {
        for ix in 0..nx {
            let e = iy * nx + ix;
            if !mask[e] {
                continue;
            }
            let nodes = element_node_ids(ix, iy, nxn);
            let mut gv = [0.0; 2];
            for a in 0..4 {
                gv[0] += cgrads[a][0] * phi[nodes[a]];
                gv[1] += cgrads[a][1] * phi[nodes[a]];
            }
            grad[e] = gv;
            norm[e] = (gv[0] * gv[0] + gv[1] * gv[1]).sqrt();
            let (_, tv) = layer_dirs(theta[e], layer);
            let tg = tv[0] * gv[0] + tv[1] * gv[1];
            residual += tg * tg * h * h;
        }
    }
    Ok(MappingField {
        nx,
        ny,
        h,
        phi,
        grad,
        norm,
        gamma,
        constraint_residual: residual,
        penalty_residual: gamma * residual,
    })
}

fn element_node_ids(ix: usize, iy: usize, nxn: usize) -> [usize; 4] {
    let bl = iy * nxn + ix;
    [bl, bl + 1, bl + nxn + 1, bl + nxn]
}

/// Bilinear shape-function gradients (d/dx, d/dy) at a parent point for a
/// square element of size `h`, node order (bl, br, tr, tl).
fn shape_gradients(xi: f64, eta: f64, h: f64) -> [[f64; 2]; 4] {
    let xa = [-1.0, 1.0, 1.0, -1.0];
    let ea = [-1.0, -1.0, 1.0, 1.0];
    let mut out = [[0.0; 2]; 4];
    for a in 0..4 {
        out[a][0] = xa[a] * (1.0 + eta * ea[a]) / (2.0 * h);
        out[a][1] = ea[a] * (1.0 + xi * xa[a]) / (2.0 * h);
    }
    out
}

/// Periodicity scale imposing an average contour spacing `epsilon`
/// (element-midpoint quadrature over the masked region).
pub fn periodicity_scale(m: &MappingField, mask: &[bool], epsilon: f64) -> f64 {
    let mut cnt = 0usize;
    let mut sum = 0.0;
    for e in 0..mask.len() {
        if mask[e] {
            cnt += 1;
            sum += m.norm[e];
        }
    }
    if sum <= 0.0 {
        return 0.0;
    }
    2.0 * PI * cnt as f64 / (epsilon * sum)
}

// ---------------------------------------------------------------------------
// field sampling and smoothing

/// Bilinear sample of a cell-centered field, clamped at the boundary.
fn sample_cc(f: &[f64], nx: usize, ny: usize, h: f64, x: f64, y: f64) -> f64 {
    let gx = (x / h - 0.5).clamp(0.0, (nx - 1) as f64);
    let gy = (y / h - 0.5).clamp(0.0, (ny - 1) as f64);
    let ix = (gx as usize).min(nx.saturating_sub(2));
    let iy = (gy as usize).min(ny.saturating_sub(2));
    let (sx, sy) = if nx == 1 || ny == 1 {
        (0.0, 0.0)
    } else {
        (gx - ix as f64, gy - iy as f64)
    };
    let ix1 = (ix + 1).min(nx - 1);
    let iy1 = (iy + 1).min(ny - 1);
    let v00 = f[iy * nx + ix];
    let v10 = f[iy * nx + ix1];
    let v01 = f[iy1 * nx + ix];
    let v11 = f[iy1 * nx + ix1];
    v00 * (1.0 - sx) * (1.0 - sy) + v10 * sx * (1.0 - sy) + v01 * (1.0 - sx) * sy + v11 * sx * sy
}

/// Bilinear sample of a cell-centered field restricted to a mask: weights of
/// unmasked cells are dropped and the rest renormalized. Returns 0 when no
/// masked cell is in the stencil.
fn sample_cc_masked(f: &[f64], mask: &[bool], nx: usize, ny: usize, h: f64, x: f64, y: f64) -> f64 {
    let gx = (x / h - 0.5).clamp(0.0, (nx - 1) as f64);
    let gy = (y / h - 0.5).clamp(0.0, (ny - 1) as f64);
    let ix = (gx as usize).min(nx.saturating_sub(2));
    let iy = (gy as usize).min(ny.saturating_sub(2));
    let (sx, sy) = if nx == 1 || ny == 1 {
        (0.0, 0.0)
    } else {
        (gx - ix as f64, gy - iy as f64)
    };
    let ix1 = (ix + 1).min(nx - 1);
    let iy1 = (iy + 1).min(ny - 1);
    let cells = [
        (iy * nx + ix, (1.0 - sx) * (1.0 - sy)),
        (iy * nx + ix1, sx * (1.0 - sy)),
        (iy1 * nx + ix, (1.0 - sx) * sy),
        (iy1 * nx + ix1, sx * sy),
    ];
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, w) in cells {
        if mask[e] {
            num += w * f[e];
            den += w;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Bilinear sample of a nodal field with nodes at (i*h, j*h).
fn sample_nodal(f: &[f64], nx: usize, ny: usize, h: f64, x: f64, y: f64) -> f64 {
    let gx = (x / h).clamp(0.0, nx as f64);
    let gy = (y / h).clamp(0.0, ny as f64);
    let ix = (gx as usize).min(nx - 1);
    let iy = (gy as usize).min(ny - 1);
    let (sx, sy) = (gx - ix as f64, gy - iy as f64);
    let nxn = nx + 1;
    let v00 = f[iy * nxn + ix];
    let v10 = f[iy * nxn + ix + 1];
    let v01 = f[(iy + 1) * nxn + ix];
    let v11 = f[(iy + 1) * nxn + ix + 1];
    v00 * (1.0 - sx) * (1.0 - sy) + v10 * sx * (1.0 - sy) + v01 * (1.0 - sx) * sy + v11 * sx * sy
}

/// Convolution with a linearly decaying (cone) kernel of the given radius (in
/// element units), restricted to the mask and renormalized by the in-mask
/// weight sum. Unmasked entries pass through unchanged.
pub fn smooth_field(f: &[f64], mask: &[bool], nx: usize, ny: usize, radius: f64) -> Vec<f64> {
    let r = radius.max(0.0);
    let ri = r.ceil() as i64;
    let mut offsets: Vec<(i64, i64, f64)> = Vec::new();
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if d < r {
                offsets.push((dx, dy, 1.0 - d / r));
            }
        }
    }
    if offsets.is_empty() {
        return f.to_vec();
    }
    let mut out = f.to_vec();
    for iy in 0..ny as i64 {
        for ix in 0..nx as i64 {
            let e = (iy * nx as i64 + ix) as usize;
            if !mask[e] {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for &(dx, dy, w) in &offsets {
                let (jx, jy) = (ix + dx, iy + dy);
                if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                    continue;
                }
                let v = (jy * nx as i64 + jx) as usize;
                if mask[v] {
                    num += w * f[v];
                    den += w;
                }
            }
            out[e] = num / den;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// synthesis

/// De-homogenize a coarse design onto the fine grid.
pub fn project(input: &ProjectionInput, opts: &ProjectOptions) -> Result<Projection, ProjectError> {
    let (nx, ny, h) = (input.nx, input.ny, input.h);
    let n_c = nx * ny;
    let mask_c: Vec<bool> = (0..n_c)
        .map(|e| input.phi[e] >= 0.5 || input.grad_norm[e] >= 0.5)
        .collect();

    let mut theta = input.theta.clone();
    let seams = align_angles_global(&mut theta, &mask_c, nx, ny);

    // intermediate grid for the mapping solve
    let (nxi, nyi) = (INTERMEDIATE_REFINE * nx, INTERMEDIATE_REFINE * ny);
    let hi = h / INTERMEDIATE_REFINE as f64;
    let mut theta_i = vec![0.0; nxi * nyi];
    let mut mask_i = vec![false; nxi * nyi];
    for iy in 0..nyi {
        for ix in 0..nxi {
            let (x, y) = ((ix as f64 + 0.5) * hi, (iy as f64 + 0.5) * hi);
            let e = iy * nxi + ix;
            theta_i[e] = sample_cc(&theta, nx, ny, h, x, y);
            let p = sample_cc(&input.phi, nx, ny, h, x, y);
            let gn = sample_cc(&input.grad_norm, nx, ny, h, x, y);
            mask_i[e] = p >= 0.5 || gn >= 0.5;
        }
    }
    let m1 = solve_mapping(&theta_i, &mask_i, nxi, nyi, hi, opts.gamma, 1)?;
    let m2 = solve_mapping(&theta_i, &mask_i, nxi, nyi, hi, opts.gamma, 2)?;
    let p1 = periodicity_scale(&m1, &mask_i, opts.epsilon);
    let p2 = periodicity_scale(&m2, &mask_i, opts.epsilon);

    // fine grid sampling
    let refine = opts.refine.max(1);
    let (nxf, nyf) = (refine * nx, refine * ny);
    let hf = h / refine as f64;
    let n_f = nxf * nyf;
    let mut phi_f = vec![0.0; n_f];
    let mut gn_f = vec![0.0; n_f];
    let mut theta_f = vec![0.0; n_f];
    let mut w = [vec![0.0; n_f], vec![0.0; n_f]];
    let mut map_f = [vec![0.0; n_f], vec![0.0; n_f]];
    let mut norm_f = [vec![0.0; n_f], vec![0.0; n_f]];
    let mut structure = vec![false; n_f];
    let mut mask_f = vec![false; n_f];
    for iy in 0..nyf {
        for ix in 0..nxf {
            let e = iy * nxf + ix;
            let (x, y) = ((ix as f64 + 0.5) * hf, (iy as f64 + 0.5) * hf);
            phi_f[e] = sample_cc(&input.phi, nx, ny, h, x, y);
            gn_f[e] = sample_cc(&input.grad_norm, nx, ny, h, x, y);
            theta_f[e] = sample_cc(&theta, nx, ny, h, x, y);
            // layer 1 walls run along the stiff axis: thickness 1 - a2
            w[0][e] = (1.0 - sample_cc(&input.a2, nx, ny, h, x, y)).clamp(0.0, 1.0);
            w[1][e] = (1.0 - sample_cc(&input.a1, nx, ny, h, x, y)).clamp(0.0, 1.0);
            map_f[0][e] = sample_nodal(&m1.phi, nxi, nyi, hi, x, y);
            map_f[1][e] = sample_nodal(&m2.phi, nxi, nyi, hi, x, y);
            norm_f[0][e] = sample_cc_masked(&m1.norm, &mask_i, nxi, nyi, hi, x, y);
            norm_f[1][e] = sample_cc_masked(&m2.norm, &mask_i, nxi, nyi, hi, x, y);
            structure[e] = phi_f[e] >= 0.5;
            mask_f[e] = structure[e] || gn_f[e] >= 0.5;
        }
    }

    let tau: Vec<f64> = gn_f
        .iter()
        .map(|&v| if heaviside(v, input.beta, 0.5) >= 0.5 { 1.0 } else { 0.0 })
        .collect();

    let mut rho_layers = [vec![0.0; n_f], vec![0.0; n_f]];
    let mut lambda_out = [Vec::new(), Vec::new()];
    let mut psi_out = [Vec::new(), Vec::new()];
    if opts.adaptive {
        let lut = TransitionLut::get()?;
        let radius_px = opts.r_star / hf;
        for layer in 0..2 {
            // only pixels with a trustworthy mapping norm enter the smoothing
            let lam_mask: Vec<bool> = (0..n_f)
                .map(|e| mask_f[e] && norm_f[layer][e] > 0.05)
                .collect();
            let lam: Vec<f64> = (0..n_f)
                .map(|e| {
                    if lam_mask[e] {
                        lambda_of(norm_f[layer][e], opts.epsilon) as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            let lam_s = smooth_field(&lam, &lam_mask, nxf, nyf, radius_px);
            let psi: Vec<f64> = lam_s.iter().map(|&v| v - v.floor()).collect();
            for e in 0..n_f {
                if structure[e] {
                    rho_layers[layer][e] = lut.density(map_f[layer][e], lam_s[e], w[layer][e]);
                }
            }
            lambda_out[layer] = lam_s;
            psi_out[layer] = psi;
        }
    } else {
        let p = [p1, p2];
        for layer in 0..2 {
            for e in 0..n_f {
                if structure[e] {
                    let solid = rho_tilde(p[layer] * map_f[layer][e]) >= 1.0 - w[layer][e];
                    rho_layers[layer][e] = if solid { 1.0 } else { 0.0 };
                }
            }
        }
    }

    let [rho1, rho2] = rho_layers;
    let rho: Vec<f64> = (0..n_f)
        .map(|e| (rho1[e] + rho2[e] + tau[e]).min(1.0))
        .collect();
    Ok(Projection {
        nx: nxf,
        ny: nyf,
        h: hf,
        rho,
        rho1,
        rho2,
        tau,
        lambda: lambda_out,
        psi: psi_out,
        theta: theta_f,
        mask: mask_f,
        structure,
        mapping: [m1, m2],
        p_scale: [p1, p2],
        seams,
    })
}

// ---------------------------------------------------------------------------
// fine evaluation and measurement

/// Compliance and volume fraction of a (binary) fine density field.
pub fn fine_eval(
    grid: &Grid,
    rho: &[f64],
    bc: &BoundaryCondition,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64), ProjectError> {
    assert_eq!(rho.len(), grid.num_elements());
    let base = e_base();
    let e_field: Vec<VoigtTensor> = rho
        .iter()
        .map(|&r| base.scale(1e-9 + r * (1.0 - 1e-9)))
        .collect();
    let analysis = Analysis::new(grid, &e_field, bc);
    let u = analysis.solve_pcg(tol, max_iter, None)?;
    let j = compliance(&u, bc);
    let mut vol = 0.0;
    for e in grid.physical_elements() {
        vol += rho[e];
    }
    let v = vol * grid.element_area() / grid.physical_area();
    Ok((j, v))
}

/// True when every seed pixel lies in one connected solid component
/// (4-connectivity, rho >= 0.5 counts as solid).
pub fn solid_connected(rho: &[f64], nx: usize, ny: usize, seeds: &[(usize, usize)]) -> bool {
    let solid = |e: usize| rho[e] >= 0.5;
    let start = match seeds.first() {
        Some(&(sx, sy)) => sy * nx + sx,
        None => return true,
    };
    if !solid(start) {
        return false;
    }
    let mut visited = vec![false; nx * ny];
    let mut queue = std::collections::VecDeque::new();
    visited[start] = true;
    queue.push_back(start);
    while let Some(e) = queue.pop_front() {
        let (ix, iy) = (e % nx, e / nx);
        let push = |v: usize, visited: &mut Vec<bool>, queue: &mut std::collections::VecDeque<usize>| {
            if !visited[v] && solid(v) {
                visited[v] = true;
                queue.push_back(v);
            }
        };
        if ix > 0 {
            push(e - 1, &mut visited, &mut queue);
        }
        if ix + 1 < nx {
            push(e + 1, &mut visited, &mut queue);
        }
        if iy > 0 {
            push(e - nx, &mut visited, &mut queue);
        }
        if iy + 1 < ny {
            push(e + nx, &mut visited, &mut queue);
        }
    }
    seeds.iter().all(|&(sx, sy)| visited[sy * nx + sx])
}

/// Centerline distances (in pixels) between consecutive solid stripes of one
/// layer, measured along grid rows and columns nearly parallel to the layer
/// normal and corrected by the direction cosine. Samples are kept only where
/// the gap stays inside the mask and, when `psi` is given, outside transition
/// zones (psi < 0.05 at both stripe centers).
pub fn stripe_spacings(
    layer_rho: &[f64],
    mask: &[bool],
    theta: &[f64],
    psi: Option<&[f64]>,
    nx: usize,
    ny: usize,
    layer: usize,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut scan = |line: &dyn Fn(usize) -> usize, len: usize, along_x: bool| {
        // solid runs along the line
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut start = None;
        for i in 0..len {
            let solid = layer_rho[line(i)] >= 0.5;
            match (start, solid) {
                (None, true) => start = Some(i),
                (Some(s), false) => {
                    runs.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, len - 1));
        }
        for pair in runs.windows(2) {
            let (s0, e0) = pair[0];
            let (s1, e1) = pair[1];
            // the gap and both run boundaries must stay in the masked region,
            // so stripes truncated by the domain edge do not skew the centers
            if s0 == 0 || e1 + 1 >= len {
                continue;
            }
            if !mask[line(s0 - 1)] || !mask[line(e1 + 1)] {
                continue;
            }
            if (e0 + 1..s1).any(|i| !mask[line(i)]) {
                continue;
            }
            let c0 = 0.5 * (s0 + e0) as f64;
            let c1 = 0.5 * (s1 + e1) as f64;
            let mid = line(((c0 + c1) * 0.5) as usize);
            let (n, _) = layer_dirs(theta[mid], layer);
            let cosine = if along_x { n[0].abs() } else { n[1].abs() };
            if cosine < 0.98 {
                continue;
            }
            if let Some(p) = psi {
                let i0 = line(c0 as usize);
                let i1 = line(c1 as usize);
                if p[i0] >= 0.05 || p[i1] >= 0.05 {
                    continue;
                }
            }
            out.push((c1 - c0) * cosine);
        }
    };
    for iy in 0..ny {
        scan(&|i| iy * nx + i, nx, true);
    }
    for ix in 0..nx {
        scan(&|i| i * nx + ix, ny, false);
    }
    out
}
