//! Plane-stress FEM on structured grids of bilinear quadrilaterals.
//!
//! Element-wise constant material, 2x2 Gauss quadrature, square elements.
//! Kinematic constraints are eliminated before the solve: fixed dofs are
//! dropped and each averaged-displacement group has one representative dof
//! expressed through the others, so the reduced system stays symmetric
//! positive definite.

use crate::grid::Grid;
use crate::linalg::{pcg, CsrMatrix, SolveError};
use crate::voigt::VoigtTensor;
use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("boundary condition invalid: {0}")]
    InvalidBc(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("sparse factorization failed; system is likely under-constrained")]
    SingularSystem,
}

/// Loads and kinematic constraints, in global dof ids (`2*node + comp`).
#[derive(Debug, Clone, Default)]
pub struct BoundaryCondition {
    /// Dofs with prescribed zero displacement.
    pub fixed: Vec<usize>,
    /// Groups whose average displacement is constrained to zero.
    pub averaged: Vec<Vec<usize>>,
    /// Point loads `(dof, force)`; units of `E0 * h`.
    pub loads: Vec<(usize, f64)>,
}

impl BoundaryCondition {
    pub fn validate(&self, ndof: usize) -> Result<(), FemError> {
        let mut fixed_mask = vec![false; ndof];
        for &d in &self.fixed {
            if d >= ndof {
                return Err(FemError::InvalidBc(format!("fixed dof {d} out of range")));
            }
            fixed_mask[d] = true;
        }
        let mut in_group = vec![false; ndof];
        for g in &self.averaged {
            if g.len() < 2 {
                return Err(FemError::InvalidBc("averaged group needs >= 2 dofs".into()));
            }
            for &d in g {
                if d >= ndof {
                    return Err(FemError::InvalidBc(format!("group dof {d} out of range")));
                }
                if fixed_mask[d] {
                    return Err(FemError::InvalidBc(format!("dof {d} both fixed and averaged")));
                }
                if in_group[d] {
                    return Err(FemError::InvalidBc(format!("dof {d} in two averaged groups")));
                }
                in_group[d] = true;
            }
        }
        for &(d, _) in &self.loads {
            if d >= ndof {
                return Err(FemError::InvalidBc(format!("loaded dof {d} out of range")));
            }
            if fixed_mask[d] {
                return Err(FemError::InvalidBc(format!("dof {d} both loaded and fixed")));
            }
        }
        Ok(())
    }

    /// Assemble the global load vector.
    pub fn load_vector(&self, ndof: usize) -> Vec<f64> {
        let mut f = vec![0.0; ndof];
        for &(d, v) in &self.loads {
            f[d] += v;
        }
        f
    }
}

/// Element stiffness matrix for a square bilinear element of edge `h`.
pub fn element_stiffness(e: &VoigtTensor, h: f64) -> [[f64; 8]; 8] {
    let mut ke = [[0.0; 8]; 8];
    let g = 1.0 / 3.0_f64.sqrt();
    let det_w = h * h / 4.0; // jacobian determinant times unit gauss weight
    for &xi in &[-g, g] {
        for &eta in &[-g, g] {
            let b = b_matrix(xi, eta, h);
            let em = e.as_matrix();
            // Bt * E * B accumulation
            let mut eb = [[0.0; 8]; 3];
            for r in 0..3 {
                for c in 0..8 {
                    eb[r][c] = em[r][0] * b[0][c] + em[r][1] * b[1][c] + em[r][2] * b[2][c];
                }
            }
            for r in 0..8 {
                for c in 0..8 {
                    ke[r][c] += det_w * (b[0][r] * eb[0][c] + b[1][r] * eb[1][c] + b[2][r] * eb[2][c]);
                }
            }
        }
    }
    ke
}

/// Strain-displacement matrix at natural coordinates (xi, eta), square element.
///
/// Dof order is `(u1x, u1y, ..., u4x, u4y)` with nodes counter-clockwise from
/// bottom-left; row 3 produces engineering shear strain.
pub fn b_matrix(xi: f64, eta: f64, h: f64) -> [[f64; 8]; 3] {
    let xs = [-1.0, 1.0, 1.0, -1.0];
    let es = [-1.0, -1.0, 1.0, 1.0];
    let mut b = [[0.0; 8]; 3];
    for i in 0..4 {
        let dndx = 0.25 * xs[i] * (1.0 + es[i] * eta) * 2.0 / h;
        let dndy = 0.25 * es[i] * (1.0 + xs[i] * xi) * 2.0 / h;
        b[0][2 * i] = dndx;
        b[1][2 * i + 1] = dndy;
        b[2][2 * i] = dndy;
        b[2][2 * i + 1] = dndx;
    }
    b
}

enum DofKind {
    Free(usize),
    Fixed,
    /// Representative of averaged group `g`: expands to minus the sum of the
    /// other group members.
    Rep(usize),
}

/// Constraint elimination map from full dofs to the reduced SPD system.
pub struct DofMap {
    kind: Vec<DofKind>,
    /// Reduced indices of the non-representative members per group.
    group_rest: Vec<Vec<usize>>,
    pub n_reduced: usize,
}

impl DofMap {
    pub fn build(ndof: usize, bc: &BoundaryCondition) -> Result<DofMap, FemError> {
        bc.validate(ndof)?;
        let mut kind: Vec<DofKind> = Vec::with_capacity(ndof);
        let mut special = vec![0u8; ndof]; // 1 fixed, 2 rep
        let mut group_of = vec![usize::MAX; ndof];
        for &d in &bc.fixed {
            special[d] = 1;
        }
        for (gi, g) in bc.averaged.iter().enumerate() {
            special[g[0]] = 2;
            group_of[g[0]] = gi;
        }
        let mut n_reduced = 0;
        for d in 0..ndof {
            match special[d] {
                1 => kind.push(DofKind::Fixed),
                2 => kind.push(DofKind::Rep(group_of[d])),
                _ => {
                    kind.push(DofKind::Free(n_reduced));
                    n_reduced += 1;
                }
            }
        }
        let mut group_rest = Vec::with_capacity(bc.averaged.len());
        for g in &bc.averaged {
            let rest: Vec<usize> = g[1..]
                .iter()
                .map(|&d| match kind[d] {
                    DofKind::Free(r) => r,
                    _ => unreachable!("validated group member must be free"),
                })
                .collect();
            group_rest.push(rest);
        }
        Ok(DofMap {
            kind,
            group_rest,
            n_reduced,
        })
    }

    /// Expansion of a full dof into reduced (index, coefficient) pairs.
    fn expand(&self, d: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        match self.kind[d] {
            DofKind::Free(r) => out.push((r, 1.0)),
            DofKind::Fixed => {}
            DofKind::Rep(g) => {
                for &r in &self.group_rest[g] {
                    out.push((r, -1.0));
                }
            }
        }
    }

    pub fn reduce_vector(&self, full: &[f64]) -> Vec<f64> {
        let mut red = vec![0.0; self.n_reduced];
        let mut exp = Vec::new();
        for d in 0..full.len() {
            if full[d] != 0.0 {
                self.expand(d, &mut exp);
                for &(r, c) in &exp {
                    red[r] += c * full[d];
                }
            }
        }
        red
    }

    pub fn expand_solution(&self, red: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.kind.len()];
        for d in 0..self.kind.len() {
            match self.kind[d] {
                DofKind::Free(r) => full[d] = red[r],
                DofKind::Fixed => {}
                DofKind::Rep(g) => {
                    full[d] = -self.group_rest[g].iter().map(|&r| red[r]).sum::<f64>();
                }
            }
        }
        full
    }
}

/// One plane-stress analysis: a grid, a per-element constitutive field and a
/// boundary condition. Immutable during the solve.
pub struct Analysis<'a> {
    pub grid: &'a Grid,
    pub e_field: &'a [VoigtTensor],
    pub bc: &'a BoundaryCondition,
}

impl<'a> Analysis<'a> {
    pub fn new(grid: &'a Grid, e_field: &'a [VoigtTensor], bc: &'a BoundaryCondition) -> Self {
        assert_eq!(e_field.len(), grid.num_elements());
        Analysis { grid, e_field, bc }
    }

    /// Reduced stiffness triplets (row, col, value) after constraint elimination.
    fn reduced_triplets(&self, map: &DofMap) -> Vec<(usize, usize, f64)> {
        let grid = self.grid;
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(grid.num_elements() * 40);
        let mut expansions: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 8];
        let mut exp = Vec::new();
        for iy in 0..grid.ny_ext() {
            for ix in 0..grid.nx_ext() {
                let e = grid.eidx(ix, iy);
                let ke = element_stiffness(&self.e_field[e], grid.h);
                let nodes = grid.element_nodes(ix, iy);
                for (ln, &n) in nodes.iter().enumerate() {
                    for c in 0..2 {
                        map.expand(2 * n + c, &mut exp);
                        expansions[2 * ln + c] = exp.clone();
                    }
                }
                for p in 0..8 {
                    for q in 0..8 {
                        let v = ke[p][q];
                        if v == 0.0 {
                            continue;
                        }
                        for &(rp, cp) in &expansions[p] {
                            for &(rq, cq) in &expansions[q] {
                                trip.push((rp, rq, cp * cq * v));
                            }
                        }
                    }
                }
            }
        }
        trip
    }

    /// Direct sparse Cholesky solve; returns the full nodal displacement field.
    pub fn solve_direct(&self) -> Result<Vec<f64>, FemError> {
        let ndof = self.grid.num_dofs();
        let map = DofMap::build(ndof, self.bc)?;
        let trip = self.reduced_triplets(&map);
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(map.n_reduced, map.n_reduced, &trip)
            .map_err(|_| FemError::SingularSystem)?;
        let llt = a.sp_cholesky(faer::Side::Lower).map_err(|_| FemError::SingularSystem)?;
        let f_full = self.bc.load_vector(ndof);
        let f_red = map.reduce_vector(&f_full);
        let mut rhs = faer::Mat::<f64>::zeros(map.n_reduced, 1);
        for i in 0..map.n_reduced {
            rhs[(i, 0)] = f_red[i];
        }
        let x = llt.solve(&rhs);
        let red: Vec<f64> = (0..map.n_reduced).map(|i| x[(i, 0)]).collect();
        Ok(map.expand_solution(&red))
    }

    /// Jacobi-preconditioned CG solve for large grids. `warm_start` (full dof
    /// vector) seeds the iteration when given.
    pub fn solve_pcg(&self, tol: f64, max_iter: usize, warm_start: Option<&[f64]>) -> Result<Vec<f64>, FemError> {
        let ndof = self.grid.num_dofs();
        let map = DofMap::build(ndof, self.bc)?;
        let trip = self.reduced_triplets(&map);
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); map.n_reduced];
        for (r, c, v) in trip {
            rows[r].push((c as u32, v));
        }
        let a = CsrMatrix::from_rows(rows);
        let f_full = self.bc.load_vector(ndof);
        let f_red = map.reduce_vector(&f_full);
        let mut x = match warm_start {
            Some(u) => map.reduce_vector(u).iter().map(|v| *v).collect(),
            None => vec![0.0; map.n_reduced],
        };
        // Warm start through reduce_vector sums group members; undo the
        // averaging artifact by just clamping to a plain restriction.
        if let Some(u) = warm_start {
            x = restrict_solution(&map, u);
        }
        pcg(&a, &f_red, &mut x, tol, max_iter)?;
        Ok(map.expand_solution(&x))
    }

    /// Coordinate-format dump of the reduced stiffness matrix, one
    /// "row col value" triple per line.
    pub fn dump_stiffness(&self, w: &mut impl std::io::Write) -> Result<(), FemError> {
        let map = DofMap::build(self.grid.num_dofs(), self.bc)?;
        let trip = self.reduced_triplets(&map);
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(map.n_reduced, map.n_reduced, &trip)
            .map_err(|_| FemError::SingularSystem)?;
        for j in 0..map.n_reduced {
            for (i, v) in a
                .row_indices_of_col(j)
                .zip(a.values_of_col(j).iter())
            {
                writeln!(w, "{i} {j} {v:.17e}").map_err(|e| FemError::InvalidBc(e.to_string()))?;
            }
        }
        Ok(())
    }
}

fn restrict_solution(map: &DofMap, full: &[f64]) -> Vec<f64> {
    let mut red = vec![0.0; map.n_reduced];
    for d in 0..full.len() {
        if let DofKind::Free(r) = map.kind[d] {
            red[r] = full[d];
        }
    }
    red
}

/// Compliance `J = F^T U`.
pub fn compliance(u: &[f64], bc: &BoundaryCondition) -> f64 {
    bc.loads.iter().map(|&(d, f)| f * u[d]).sum()
}

/// Element-centroid stress `(s11, s22, s12)` for every element.
pub fn centroid_stress(grid: &Grid, e_field: &[VoigtTensor], u: &[f64]) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; grid.num_elements()];
    let b = b_matrix(0.0, 0.0, grid.h);
    for iy in 0..grid.ny_ext() {
        for ix in 0..grid.nx_ext() {
            let e = grid.eidx(ix, iy);
            let nodes = grid.element_nodes(ix, iy);
            let mut ue = [0.0; 8];
            for (ln, &n) in nodes.iter().enumerate() {
                ue[2 * ln] = u[2 * n];
                ue[2 * ln + 1] = u[2 * n + 1];
            }
            let mut eps = [0.0; 3];
            for r in 0..3 {
                for c in 0..8 {
                    eps[r] += b[r][c] * ue[c];
                }
            }
            out[e] = e_field[e].apply(eps);
        }
    }
    out
}
