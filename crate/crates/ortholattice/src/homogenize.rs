//! Periodic homogenization of the square unit cell with a centered
//! rectangular hole, and the `(a1, a2)` property database with derivatives.
//!
//! The cell is meshed with `n_cell * n_cell` square elements; an element is
//! void (floored at `1e-9 E0`) iff its center lies inside the hole rectangle
//! of extents `a1` (along the local y1 axis) by `a2` (along y2). Effective
//! constants come from mutual energies of three unit test strains with
//! periodic fluctuation fields.

use std::fmt::Write as _;
use std::path::Path;

use faer::prelude::SpSolver;
use faer::sparse::SparseColMat;
use thiserror::Error;

use crate::fem::element_stiffness;
use crate::voigt::VoigtTensor;

#[derive(Debug, Error)]
pub enum HomogError {
    #[error("query ({0}, {1}) outside the database range [{2}, {3}]")]
    OutOfRange(f64, f64, f64, f64),
    #[error("cell stiffness system could not be factorized at a1={0}, a2={1}")]
    SingularCell(f64, f64),
    #[error("database file: {0}")]
    Io(#[from] std::io::Error),
    #[error("database format: {0}")]
    Format(String),
    #[error("database invariant violated: {0}")]
    Invalid(String),
}

/// Base material constants shared by coating and infill.
pub const E0: f64 = 1.0;
pub const NU0: f64 = 0.3;
/// Relative stiffness of void regions.
pub const VOID_FLOOR: f64 = 1e-9;

/// Default database axis: 0.05 to 0.95 in steps of 0.025.
pub fn default_a_grid() -> Vec<f64> {
    (0..=36).map(|i| 0.05 + 0.025 * i as f64).collect()
}

pub const DEFAULT_N_CELL: usize = 100;

/// Effective stiffness of one unit cell in its local frame.
pub fn cell_solve(a1: f64, a2: f64, n_cell: usize) -> Result<VoigtTensor, HomogError> {
    assert!((0.0..=0.96).contains(&a1) && (0.0..=0.96).contains(&a2), "hole dims out of range");
    let n = n_cell;
    let h = 1.0 / n as f64;
    let ke_solid = element_stiffness(&VoigtTensor::isotropic(E0, NU0), h);
    let ke_void = element_stiffness(&VoigtTensor::isotropic(VOID_FLOOR * E0, NU0), h);
    let master = |ix: usize, iy: usize| -> usize { (iy % n) * n + (ix % n) };
    let is_void = |ex: usize, ey: usize| -> bool {
        let cx = (ex as f64 + 0.5) * h - 0.5;
        let cy = (ey as f64 + 0.5) * h - 0.5;
        cx.abs() < 0.5 * a1 && cy.abs() < 0.5 * a2
    };
    // Pin node 0 (both dofs) to remove the translation nullspace.
    let ndof = 2 * n * n;
    let red = |d: usize| -> Option<usize> { (d >= 2).then(|| d - 2) };
    let nred = ndof - 2;

    // Unit test strains: e11, e22, engineering shear.
    let strains: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    // Affine displacement of a test strain at local element corner coordinates.
    let u0_local = |s: &[f64; 3]| -> [f64; 8] {
        let corners = [(0.0, 0.0), (h, 0.0), (h, h), (0.0, h)];
        let mut u = [0.0; 8];
        for (k, (x, y)) in corners.iter().enumerate() {
            u[2 * k] = s[0] * x + 0.5 * s[2] * y;
            u[2 * k + 1] = s[1] * y + 0.5 * s[2] * x;
        }
        u
    };

    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(nred * 18);
    let mut rhs = vec![[0.0; 3]; nred];
    for ey in 0..n {
        for ex in 0..n {
            let ke = if is_void(ex, ey) { &ke_void } else { &ke_solid };
            let nodes = [
                master(ex, ey),
                master(ex + 1, ey),
                master(ex + 1, ey + 1),
                master(ex, ey + 1),
            ];
            let mut dofs = [0usize; 8];
            for k in 0..4 {
                dofs[2 * k] = 2 * nodes[k];
                dofs[2 * k + 1] = 2 * nodes[k] + 1;
            }
            for i in 0..8 {
                let Some(ri) = red(dofs[i]) else { continue };
                for j in 0..8 {
                    if let Some(rj) = red(dofs[j]) {
                        trip.push((ri, rj, ke[i][j]));
                    }
                }
                for (a, s) in strains.iter().enumerate() {
                    let u0 = u0_local(s);
                    let mut f = 0.0;
                    for j in 0..8 {
                        f += ke[i][j] * u0[j];
                    }
                    rhs[ri][a] -= f;
                }
            }
        }
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(nred, nred, &trip)
        .map_err(|_| HomogError::SingularCell(a1, a2))?;
    let llt = a
        .sp_cholesky(faer::Side::Lower)
        .map_err(|_| HomogError::SingularCell(a1, a2))?;
    let mut b = faer::Mat::<f64>::zeros(nred, 3);
    for i in 0..nred {
        for a in 0..3 {
            b[(i, a)] = rhs[i][a];
        }
    }
    let chi = llt.solve(&b);

    // Mutual energies of the total (affine + fluctuation) fields.
    let mut e = [[0.0; 3]; 3];
    for ey in 0..n {
        for ex in 0..n {
            let ke = if is_void(ex, ey) { &ke_void } else { &ke_solid };
            let nodes = [
                master(ex, ey),
                master(ex + 1, ey),
                master(ex + 1, ey + 1),
                master(ex, ey + 1),
            ];
            let mut ut = [[0.0; 8]; 3];
            for (a, s) in strains.iter().enumerate() {
                let u0 = u0_local(s);
                for k in 0..4 {
                    for c in 0..2 {
                        let d = 2 * nodes[k] + c;
                        let fluct = match red(d) {
                            Some(r) => chi[(r, a)],
                            None => 0.0,
                        };
                        ut[a][2 * k + c] = u0[2 * k + c] + fluct;
                    }
                }
            }
            for a in 0..3 {
                let mut kub = [[0.0; 8]; 3];
                for b_ in a..3 {
                    for i in 0..8 {
                        for j in 0..8 {
                            kub[b_][i] += ke[i][j] * ut[b_][j];
                        }
                    }
                    let mut s = 0.0;
                    for i in 0..8 {
                        s += ut[a][i] * kub[b_][i];
                    }
                    e[a][b_] += s;
                    if a != b_ {
                        e[b_][a] += s;
                    }
                }
            }
        }
    }
    // |Y| = 1, so energies are the constants directly.
    Ok(VoigtTensor::from_matrix(e))
}

/// Tabulated effective properties over a shared `(a1, a2)` axis, with the
/// analytic derivative tables of the C1 interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogDB {
    pub a_grid: Vec<f64>,
    pub n_cell: usize,
    /// value tables, row-major `[i1 * n + i2]`, order c11, c12, c22, c66
    pub c: [Vec<f64>; 4],
    /// derivative tables d c / d a1 then d c / d a2, same component order
    pub dc_da1: [Vec<f64>; 4],
    pub dc_da2: [Vec<f64>; 4],
}

const COMPONENTS: [&str; 4] = ["c11", "c12", "c22", "c66"];

impl HomogDB {
    /// Solve all cells on `a_grid x a_grid`. Only the `a1 <= a2` triangle is
    /// solved; the rest follows from the quarter-turn symmetry of the cell.
    pub fn build(a_grid: &[f64], n_cell: usize) -> Result<HomogDB, HomogError> {
        assert!(a_grid.len() >= 2, "need at least a 2x2 grid");
        assert!(a_grid.windows(2).all(|w| w[1] > w[0]), "a_grid must be strictly increasing");
        let n = a_grid.len();
        let mut c: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n * n]);
        let total = n * (n + 1) / 2;
        let mut done = 0usize;
        for i1 in 0..n {
            for i2 in i1..n {
                let t = cell_solve(a_grid[i1], a_grid[i2], n_cell)?;
                let k = i1 * n + i2;
                let kt = i2 * n + i1;
                c[0][k] = t.c11;
                c[1][k] = t.c12;
                c[2][k] = t.c22;
                c[3][k] = t.c66;
                // (a1, a2) -> (a2, a1) swaps c11 and c22.
                c[0][kt] = t.c22;
                c[1][kt] = t.c12;
                c[2][kt] = t.c11;
                c[3][kt] = t.c66;
                done += 1;
                if done % 50 == 0 || done == total {
                    log::info!("homogenization database: {done}/{total} cells");
                }
            }
        }
        let mut db = HomogDB {
            a_grid: a_grid.to_vec(),
            n_cell,
            c,
            dc_da1: std::array::from_fn(|_| vec![0.0; n * n]),
            dc_da2: std::array::from_fn(|_| vec![0.0; n * n]),
        };
        db.fill_derivative_tables();
        db.validate()?;
        Ok(db)
    }

    fn fill_derivative_tables(&mut self) {
        let n = self.a_grid.len();
        for i1 in 0..n {
            for i2 in 0..n {
                let (_, d1, d2) = self
                    .interp(self.a_grid[i1], self.a_grid[i2])
                    .expect("grid node inside hull");
                let k = i1 * n + i2;
                for (comp, (v1, v2)) in [
                    (d1.c11, d2.c11),
                    (d1.c12, d2.c12),
                    (d1.c22, d2.c22),
                    (d1.c66, d2.c66),
                ]
                .into_iter()
                .enumerate()
                {
                    self.dc_da1[comp][k] = v1;
                    self.dc_da2[comp][k] = v2;
                }
            }
        }
    }

    pub fn a_min(&self) -> f64 {
        self.a_grid[0]
    }

    pub fn a_max(&self) -> f64 {
        *self.a_grid.last().unwrap()
    }

    /// C1 interpolation (cubic convolution) of the local-frame stiffness and
    /// its derivatives with respect to a1 and a2.
    pub fn interp(&self, a1: f64, a2: f64) -> Result<(VoigtTensor, VoigtTensor, VoigtTensor), HomogError> {
        let (lo, hi) = (self.a_min(), self.a_max());
        let eps = 1e-12 * (hi - lo);
        if a1 < lo - eps || a1 > hi + eps || a2 < lo - eps || a2 > hi + eps {
            return Err(HomogError::OutOfRange(a1, a2, lo, hi));
        }
        let (i1, s1) = self.locate(a1.clamp(lo, hi));
        let (i2, s2) = self.locate(a2.clamp(lo, hi));
        let step = self.a_grid[1] - self.a_grid[0];
        let (w1, dw1) = cubic_weights(s1);
        let (w2, dw2) = cubic_weights(s2);
        let mut v = [0.0; 4];
        let mut d1 = [0.0; 4];
        let mut d2 = [0.0; 4];
        for comp in 0..4 {
            let g = |m1: isize, m2: isize| self.ghost(comp, i1 as isize + m1, i2 as isize + m2);
            for (p, m1) in (-1..=2).enumerate() {
                for (q, m2) in (-1..=2).enumerate() {
                    let gv = g(m1, m2);
                    v[comp] += w1[p] * w2[q] * gv;
                    d1[comp] += dw1[p] * w2[q] * gv;
                    d2[comp] += w1[p] * dw2[q] * gv;
                }
            }
            d1[comp] /= step;
            d2[comp] /= step;
        }
        let t = |x: [f64; 4]| VoigtTensor::orthotropic(x[0], x[1], x[2], x[3]);
        Ok((t(v), t(d1), t(d2)))
    }

    /// Interval index and normalized coordinate within it.
    fn locate(&self, a: f64) -> (usize, f64) {
        let n = self.a_grid.len();
        let step = self.a_grid[1] - self.a_grid[0];
        let mut i = ((a - self.a_grid[0]) / step).floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        ((i), (a - self.a_grid[i]) / step)
    }

    /// Table lookup with quadratic extrapolation ghosts at the edges.
    fn ghost(&self, comp: usize, i1: isize, i2: isize) -> f64 {
        let n = self.a_grid.len() as isize;
        let fetch = |j1: isize, j2: isize| self.c[comp][(j1 * n + j2) as usize];
        let axis = |j: isize, other: isize, along1: bool| -> f64 {
            let at = |k: isize| if along1 { fetch(k, other) } else { fetch(other, k) };
            if j < 0 {
                3.0 * at(0) - 3.0 * at(1) + at(2)
            } else if j >= n {
                3.0 * at(n - 1) - 3.0 * at(n - 2) + at(n - 3)
            } else {
                at(j)
            }
        };
        match (i1 < 0 || i1 >= n, i2 < 0 || i2 >= n) {
            (false, false) => fetch(i1, i2),
            (true, false) => axis(i1, i2, true),
            (false, true) => axis(i2, i1, false),
            (true, true) => {
                // extrapolate along a1 of already-extrapolated a2 rows
                let row = |k: isize| axis(i2, k, false);
                if i1 < 0 {
                    3.0 * row(0) - 3.0 * row(1) + row(2)
                } else {
                    3.0 * row(n - 1) - 3.0 * row(n - 2) + row(n - 3)
                }
            }
        }
    }

    /// Structural and physical consistency checks.
    pub fn validate(&self) -> Result<(), HomogError> {
        let n = self.a_grid.len();
        if n < 3 {
            return Err(HomogError::Invalid("grid needs at least 3 samples".into()));
        }
        let step = self.a_grid[1] - self.a_grid[0];
        for w in self.a_grid.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step {
                return Err(HomogError::Invalid("a_grid must be uniform".into()));
            }
        }
        for t in self.c.iter().chain(&self.dc_da1).chain(&self.dc_da2) {
            if t.len() != n * n {
                return Err(HomogError::Invalid("table size mismatch".into()));
            }
        }
        for i1 in 0..n {
            for i2 in 0..n {
                let k = i1 * n + i2;
                let kt = i2 * n + i1;
                if (self.c[0][k] - self.c[2][kt]).abs() > 1e-12
                    || (self.c[1][k] - self.c[1][kt]).abs() > 1e-12
                    || (self.c[3][k] - self.c[3][kt]).abs() > 1e-12
                {
                    return Err(HomogError::Invalid(format!("swap symmetry broken at ({i1}, {i2})")));
                }
                let (c11, c12, c66) = (self.c[0][k], self.c[1][k], self.c[3][k]);
                let c22 = self.c[2][k];
                if c11 * c22 - c12 * c12 < -1e-12 || c66 < 0.0 {
                    return Err(HomogError::Invalid(format!("non-PSD entry at ({i1}, {i2})")));
                }
                // bigger hole in a2 thins the y1 load-carrying walls
                if i2 + 1 < n && self.c[0][i1 * n + i2 + 1] > self.c[0][k] + 1e-9 {
                    return Err(HomogError::Invalid(format!("c11 not monotone in a2 at ({i1}, {i2})")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), HomogError> {
        let n = self.a_grid.len();
        let mut s = String::new();
        let _ = writeln!(s, "ortholattice-homogdb v1");
        let _ = writeln!(s, "n_grid {n}");
        let _ = writeln!(s, "n_cell {}", self.n_cell);
        let _ = write!(s, "a_values");
        for a in &self.a_grid {
            let _ = write!(s, " {a:.17e}");
        }
        let _ = writeln!(s);
        let mut dump = |name: String, t: &[f64]| {
            let _ = writeln!(s, "table {name}");
            for i1 in 0..n {
                for i2 in 0..n {
                    if i2 > 0 {
                        s.push(' ');
                    }
                    let _ = write!(s, "{:.17e}", t[i1 * n + i2]);
                }
                s.push('\n');
            }
        };
        for (i, name) in COMPONENTS.iter().enumerate() {
            dump(name.to_string(), &self.c[i]);
        }
        for (i, name) in COMPONENTS.iter().enumerate() {
            dump(format!("d{name}_da1"), &self.dc_da1[i]);
        }
        for (i, name) in COMPONENTS.iter().enumerate() {
            dump(format!("d{name}_da2"), &self.dc_da2[i]);
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<HomogDB, HomogError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let bad = |m: &str| HomogError::Format(m.to_string());
        if lines.next() != Some("ortholattice-homogdb v1") {
            return Err(bad("unknown header"));
        }
        let n: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("n_grid "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing n_grid"))?;
        let n_cell: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("n_cell "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing n_cell"))?;
        let a_grid: Vec<f64> = lines
            .next()
            .and_then(|l| l.strip_prefix("a_values"))
            .map(|v| v.split_whitespace().filter_map(|x| x.parse().ok()).collect())
            .ok_or_else(|| bad("missing a_values"))?;
        if a_grid.len() != n {
            return Err(bad("a_values length mismatch"));
        }
        let mut read_table = |name: &str| -> Result<Vec<f64>, HomogError> {
            let head = lines.next().ok_or_else(|| bad("truncated file"))?;
            if head != format!("table {name}") {
                return Err(bad(&format!("expected table {name}, found '{head}'")));
            }
            let mut t = Vec::with_capacity(n * n);
            for _ in 0..n {
                let row = lines.next().ok_or_else(|| bad("truncated table"))?;
                for v in row.split_whitespace() {
                    t.push(v.parse().map_err(|_| bad("bad number"))?);
                }
            }
            if t.len() != n * n {
                return Err(bad(&format!("table {name} has wrong size")));
            }
            Ok(t)
        };
        let mut c: [Vec<f64>; 4] = Default::default();
        for (i, name) in COMPONENTS.iter().enumerate() {
            c[i] = read_table(name)?;
        }
        let mut dc_da1: [Vec<f64>; 4] = Default::default();
        for (i, name) in COMPONENTS.iter().enumerate() {
            dc_da1[i] = read_table(&format!("d{name}_da1"))?;
        }
        let mut dc_da2: [Vec<f64>; 4] = Default::default();
        for (i, name) in COMPONENTS.iter().enumerate() {
            dc_da2[i] = read_table(&format!("d{name}_da2"))?;
        }
        let db = HomogDB {
            a_grid,
            n_cell,
            c,
            dc_da1,
            dc_da2,
        };
        db.validate()?;
        Ok(db)
    }
}

/// Catmull-Rom weights and their s-derivatives at normalized coordinate s.
fn cubic_weights(s: f64) -> ([f64; 4], [f64; 4]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let w = [
        -0.5 * s + s2 - 0.5 * s3,
        1.0 - 2.5 * s2 + 1.5 * s3,
        0.5 * s + 2.0 * s2 - 1.5 * s3,
        -0.5 * s2 + 0.5 * s3,
    ];
    let dw = [
        -0.5 + 2.0 * s - 1.5 * s2,
        -5.0 * s + 4.5 * s2,
        0.5 + 4.0 * s - 4.5 * s2,
        -s + 1.5 * s2,
    ];
    (w, dw)
}
