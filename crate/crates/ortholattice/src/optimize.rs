//! Nested compliance minimization: FE solve, closed-form angle update,
//! sensitivity analysis through the coating pipeline, and one MMA step per
//! iteration with beta continuation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{b_matrix, centroid_stress, compliance, Analysis, BoundaryCondition, FemError};
use crate::filters::{CoatingFields, CoatingPipeline, FilterOp};
use crate::grid::Grid;
use crate::homogenize::{HomogDB, HomogError};
use crate::material::{ddensity, density, dstiffness_from_infill, stiffness_from_infill, Infill, PAD_Q};
use crate::mma::{Mma, MmaError, MmaOptions};
use crate::voigt::VoigtTensor;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Homog(#[from] HomogError),
    #[error(transparent)]
    Mma(#[from] MmaError),
    #[error("problem form requires a homogenization database")]
    MissingDatabase,
}

/// The four nested relaxations of the infill parametrization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "form")]
pub enum ProblemForm {
    /// form 0: isotropic infill at fixed mass fraction
    Isotropic { m_infill: f64 },
    /// form 1: square hole, a1 = a2 = sqrt(1 - m)
    SquareHole { m_infill: f64 },
    /// form 2: rectangular hole at fixed mass, a2 = (1 - m) / a1
    FixedMass { m_infill: f64, a_low: f64, a_up: f64 },
    /// form 3: free hole dims with filtered a-fields
    FreeHole { a_low: f64, a_up: f64 },
}

impl ProblemForm {
    pub fn index(&self) -> usize {
        match self {
            ProblemForm::Isotropic { .. } => 0,
            ProblemForm::SquareHole { .. } => 1,
            ProblemForm::FixedMass { .. } => 2,
            ProblemForm::FreeHole { .. } => 3,
        }
    }

    /// Number of a-design fields.
    pub fn n_a_fields(&self) -> usize {
        match self {
            ProblemForm::Isotropic { .. } | ProblemForm::SquareHole { .. } => 0,
            ProblemForm::FixedMass { .. } => 1,
            ProblemForm::FreeHole { .. } => 2,
        }
    }

    /// Effective a1 bounds for the MMA box.
    pub fn a_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            ProblemForm::FixedMass { m_infill, a_low, a_up } => {
                // keep the dependent width a2 = (1 - m)/a1 below a_up as well
                Some((a_low.max((1.0 - m_infill) / a_up), a_up))
            }
            ProblemForm::FreeHole { a_low, a_up } => Some((a_low, a_up)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub double_every: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            start: 2.0,
            end: 128.0,
            double_every: 50,
        }
    }
}

/// Everything defining one optimization run besides the design itself.
pub struct OptimizeSetup {
    pub grid: Grid,
    pub bc: BoundaryCondition,
    /// extended elements forced to solid coating (bc blocks)
    pub passive_solid: Vec<bool>,
    pub v_max: f64,
    pub r1: f64,
    pub t_ref: f64,
    pub form: ProblemForm,
    pub beta: BetaSchedule,
    pub max_iters: usize,
    pub change_tol: f64,
}

/// All design fields of one iterate (extended-grid element fields).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignState {
    pub grid: Grid,
    pub mu: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: f64,
    pub iter: usize,
}

/// Cached results of one forward evaluation.
pub struct Evaluation {
    pub j: f64,
    /// volume fraction of the physical domain
    pub volume: f64,
    pub u: Vec<f64>,
    pub fields: CoatingFields,
    /// phi and tau after passive-solid overrides
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
    /// effective hole dims per element (filtered / derived)
    pub a1_eff: Vec<f64>,
    pub a2_eff: Vec<f64>,
    pub e_field: Vec<VoigtTensor>,
}

pub struct Sensitivities {
    pub dj_dmu: Vec<f64>,
    pub dv_dmu: Vec<f64>,
    /// per a-field (element fields on the extended grid)
    pub dj_da: Vec<Vec<f64>>,
    pub dv_da: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub volume: f64,
    pub beta: f64,
    pub change: f64,
}

/// Principal-stress angle update. Elements with (near-)hydrostatic or zero
/// stress keep their previous angle. The local 1-axis (the stiff direction)
/// aligns with the principal direction of largest absolute stress.
pub fn align_angles(stress: &[[f64; 3]], theta: &mut [f64]) {
    assert_eq!(stress.len(), theta.len());
    for (s, th) in stress.iter().zip(theta.iter_mut()) {
        let (sx, sy, sxy) = (s[0], s[1], s[2]);
        let dev = ((sx - sy) * (sx - sy) + 4.0 * sxy * sxy).sqrt();
        let mag = sx.abs() + sy.abs() + sxy.abs();
        if dev <= 1e-9 * mag.max(1e-300) || mag == 0.0 {
            continue; // degenerate: any direction optimal
        }
        let tp = 0.5 * (2.0 * sxy).atan2(sx - sy);
        let mean = 0.5 * (sx + sy);
        let s1 = mean + 0.5 * dev;
        let s2 = mean - 0.5 * dev;
        let mut t = if s1.abs() >= s2.abs() {
            tp
        } else {
            tp + std::f64::consts::FRAC_PI_2
        };
        // fold into (-pi/2, pi/2]
        while t > std::f64::consts::FRAC_PI_2 {
            t -= std::f64::consts::PI;
        }
        while t <= -std::f64::consts::FRAC_PI_2 {
            t += std::f64::consts::PI;
        }
        *th = t;
    }
}

pub struct Optimizer<'a> {
    pub setup: OptimizeSetup,
    db: Option<&'a HomogDB>,
    cp: CoatingPipeline,
    a_filter: Option<FilterOp>,
    phys: Vec<usize>,
}

impl<'a> Optimizer<'a> {
    pub fn new(setup: OptimizeSetup, db: Option<&'a HomogDB>) -> Result<Self, OptimizeError> {
        if db.is_none() && !matches!(setup.form, ProblemForm::Isotropic { .. }) {
            return Err(OptimizeError::MissingDatabase);
        }
        let cp = CoatingPipeline::new(&setup.grid, setup.r1, setup.t_ref);
        let a_filter = matches!(setup.form, ProblemForm::FreeHole { .. })
            .then(|| FilterOp::new(&setup.grid, 1.5 * setup.grid.h));
        let phys: Vec<usize> = setup.grid.physical_elements().collect();
        assert_eq!(setup.passive_solid.len(), setup.grid.num_elements());
        Ok(Optimizer {
            setup,
            db,
            cp,
            a_filter,
            phys,
        })
    }

    pub fn pipeline(&self) -> &CoatingPipeline {
        &self.cp
    }

    /// Uniform initial design at the volume bound.
    pub fn initial_state(&self) -> DesignState {
        let g = &self.setup.grid;
        let n = g.num_elements();
        let mut mu = vec![0.0; n];
        for &e in &self.phys {
            mu[e] = self.setup.v_max;
        }
        for e in 0..n {
            if self.setup.passive_solid[e] {
                mu[e] = 1.0;
            }
        }
        let a_init = match self.setup.form {
            ProblemForm::Isotropic { m_infill } | ProblemForm::SquareHole { m_infill } => (1.0 - m_infill).sqrt(),
            ProblemForm::FixedMass { m_infill, .. } => {
                let (lo, hi) = self.setup.form.a_bounds().unwrap();
                (1.0 - m_infill).sqrt().clamp(lo, hi)
            }
            ProblemForm::FreeHole { a_low, a_up } => 0.5 * (a_low + a_up),
        };
        DesignState {
            grid: g.clone(),
            mu,
            a1: vec![a_init; n],
            a2: vec![a_init; n],
            theta: vec![0.0; n],
            beta: self.setup.beta.start,
            iter: 0,
        }
    }

    /// Effective hole-dimension fields entering the material model.
    fn effective_a(&self, state: &DesignState) -> (Vec<f64>, Vec<f64>) {
        match self.setup.form {
            ProblemForm::Isotropic { .. } | ProblemForm::SquareHole { .. } => (state.a1.clone(), state.a2.clone()),
            ProblemForm::FixedMass { m_infill, .. } => {
                let a2 = state.a1.iter().map(|&a| (1.0 - m_infill) / a).collect();
                (state.a1.clone(), a2)
            }
            ProblemForm::FreeHole { .. } => {
                let f = self.a_filter.as_ref().unwrap();
                (f.apply(&state.a1), f.apply(&state.a2))
            }
        }
    }

    fn infill_at(&self, a1: f64, a2: f64) -> Result<Infill, OptimizeError> {
        match self.setup.form {
            ProblemForm::Isotropic { m_infill } => Ok(Infill::isotropic(m_infill)),
            _ => Ok(Infill::orthotropic(self.db.ok_or(OptimizeError::MissingDatabase)?, a1, a2)?),
        }
    }

    /// Forward pass: filters, material interpolation, FE solve, compliance
    /// and volume.
    pub fn evaluate(&self, state: &DesignState) -> Result<Evaluation, OptimizeError> {
        let g = &self.setup.grid;
        let n = g.num_elements();
        let fields = self.cp.forward(&state.mu, state.beta);
        let mut phi = fields.phi.clone();
        let mut tau = fields.tau.clone();
        for e in 0..n {
            if self.setup.passive_solid[e] {
                phi[e] = 1.0;
                tau[e] = 1.0;
            }
        }
        let (a1_eff, a2_eff) = self.effective_a(state);
        let mut e_field = Vec::with_capacity(n);
        for iy in 0..g.ny_ext() {
            for ix in 0..g.nx_ext() {
                let e = g.eidx(ix, iy);
                let q = if g.in_physical(ix, iy) { 1.0 } else { PAD_Q };
                let infill = self.infill_at(a1_eff[e], a2_eff[e])?;
                e_field.push(stiffness_from_infill(phi[e], tau[e], state.theta[e], q, &infill));
            }
        }
        let analysis = Analysis::new(g, &e_field, &self.setup.bc);
        let u = analysis.solve_direct()?;
        let j = compliance(&u, &self.setup.bc);
        let mut vol = 0.0;
        for &e in &self.phys {
            vol += density(phi[e], tau[e], a1_eff[e], a2_eff[e]);
        }
        let volume = vol * g.element_area() / g.physical_area();
        Ok(Evaluation {
            j,
            volume,
            u,
            fields,
            phi,
            tau,
            a1_eff,
            a2_eff,
            e_field,
        })
    }

    /// Update the angle field in place from the current displacement field.
    pub fn update_angles(&self, state: &mut DesignState, eval: &Evaluation) {
        let stress = centroid_stress(&self.setup.grid, &eval.e_field, &eval.u);
        align_angles(&stress, &mut state.theta);
    }

    /// Element energy form: sum over Gauss points of eps' D eps.
    fn element_energy(&self, ue: &[f64; 8], d: &VoigtTensor) -> f64 {
        let h = self.setup.grid.h;
        let gp = 1.0 / 3.0_f64.sqrt();
        let detw = h * h / 4.0;
        let mut s = 0.0;
        for &xi in &[-gp, gp] {
            for &eta in &[-gp, gp] {
                let b = b_matrix(xi, eta, h);
                let mut eps = [0.0; 3];
                for r in 0..3 {
                    for c in 0..8 {
                        eps[r] += b[r][c] * ue[c];
                    }
                }
                let de = d.apply(eps);
                s += (eps[0] * de[0] + eps[1] * de[1] + eps[2] * de[2]) * detw;
            }
        }
        s
    }

    /// All design sensitivities of compliance and volume at a fixed angle
    /// field (self-adjoint problem).
    pub fn sensitivities(&self, state: &DesignState, eval: &Evaluation) -> Result<Sensitivities, OptimizeError> {
        let g = &self.setup.grid;
        let n = g.num_elements();
        let vol_w = g.element_area() / g.physical_area();
        let mut dj_dphi = vec![0.0; n];
        let mut dj_dtau = vec![0.0; n];
        let mut dv_dphi = vec![0.0; n];
        let mut dv_dtau = vec![0.0; n];
        let n_a = self.setup.form.n_a_fields();
        // both effective-a derivative fields are needed even for the reduced
        // single-variable parametrization
        let mut dj_da_eff = vec![vec![0.0; n]; 2];
        let mut dv_da_eff = vec![vec![0.0; n]; 2];
        for iy in 0..g.ny_ext() {
            for ix in 0..g.nx_ext() {
                let e = g.eidx(ix, iy);
                let q = if g.in_physical(ix, iy) { 1.0 } else { PAD_Q };
                let infill = self.infill_at(eval.a1_eff[e], eval.a2_eff[e])?;
                let d = dstiffness_from_infill(eval.phi[e], eval.tau[e], state.theta[e], q, &infill);
                let mut ue = [0.0; 8];
                for (k, node) in g.element_nodes(ix, iy).into_iter().enumerate() {
                    ue[2 * k] = eval.u[2 * node];
                    ue[2 * k + 1] = eval.u[2 * node + 1];
                }
                if !self.setup.passive_solid[e] {
                    dj_dphi[e] = -self.element_energy(&ue, &d.de_dphi);
                    dj_dtau[e] = -self.element_energy(&ue, &d.de_dtau);
                    if g.in_physical(ix, iy) {
                        let dd = ddensity(eval.phi[e], eval.tau[e], eval.a1_eff[e], eval.a2_eff[e]);
                        dv_dphi[e] = dd[0] * vol_w;
                        dv_dtau[e] = dd[1] * vol_w;
                        if n_a > 0 {
                            dv_da_eff[0][e] = dd[2] * vol_w;
                            dv_da_eff[1][e] = dd[3] * vol_w;
                        }
                    }
                    if n_a > 0 {
                        dj_da_eff[0][e] = -self.element_energy(&ue, &d.de_da1);
                        dj_da_eff[1][e] = -self.element_energy(&ue, &d.de_da2);
                    }
                }
            }
        }
        let dj_dmu = self.cp.backward(&eval.fields, &dj_dphi, &dj_dtau, state.beta);
        let dv_dmu = self.cp.backward(&eval.fields, &dv_dphi, &dv_dtau, state.beta);
        // chain the effective-a derivatives back to the design a-fields
        let (dj_da, dv_da) = match self.setup.form {
            ProblemForm::Isotropic { .. } | ProblemForm::SquareHole { .. } => (Vec::new(), Vec::new()),
            ProblemForm::FixedMass { m_infill, .. } => {
                let reduce = |d: &[Vec<f64>]| -> Vec<Vec<f64>> {
                    let mut out = vec![0.0; n];
                    for e in 0..n {
                        let da2_da1 = -(1.0 - m_infill) / (state.a1[e] * state.a1[e]);
                        out[e] = d[0][e] + d[1][e] * da2_da1;
                    }
                    vec![out]
                };
                (reduce(&dj_da_eff), reduce(&dv_da_eff))
            }
            ProblemForm::FreeHole { .. } => {
                let f = self.a_filter.as_ref().unwrap();
                (
                    dj_da_eff.iter().map(|d| f.apply(d)).collect(),
                    dv_da_eff.iter().map(|d| f.apply(d)).collect(),
                )
            }
        };
        Ok(Sensitivities {
            dj_dmu,
            dv_dmu,
            dj_da,
            dv_da,
        })
    }

    /// Number of MMA design variables.
    fn n_design(&self) -> usize {
        self.phys.len() * (1 + self.setup.form.n_a_fields())
    }

    fn gather_design(&self, state: &DesignState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_design());
        x.extend(self.phys.iter().map(|&e| state.mu[e]));
        let n_a = self.setup.form.n_a_fields();
        if n_a >= 1 {
            x.extend(self.phys.iter().map(|&e| state.a1[e]));
        }
        if n_a == 2 {
            x.extend(self.phys.iter().map(|&e| state.a2[e]));
        }
        x
    }

    fn scatter_design(&self, x: &[f64], state: &mut DesignState) {
        let m = self.phys.len();
        for (k, &e) in self.phys.iter().enumerate() {
            state.mu[e] = x[k];
        }
        let n_a = self.setup.form.n_a_fields();
        if n_a >= 1 {
            for (k, &e) in self.phys.iter().enumerate() {
                state.a1[e] = x[m + k];
            }
        }
        if n_a == 2 {
            for (k, &e) in self.phys.iter().enumerate() {
                state.a2[e] = x[2 * m + k];
            }
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.phys.len();
        let mut lo = Vec::with_capacity(self.n_design());
        let mut hi = Vec::with_capacity(self.n_design());
        for &e in &self.phys {
            if self.setup.passive_solid[e] {
                lo.push(1.0);
                hi.push(1.0);
            } else {
                lo.push(0.0);
                hi.push(1.0);
            }
        }
        if let Some((a_lo, a_hi)) = self.setup.form.a_bounds() {
            for _ in 0..self.setup.form.n_a_fields() {
                for _ in 0..m {
                    lo.push(a_lo);
                    hi.push(a_hi);
                }
            }
        }
        (lo, hi)
    }

    /// One MMA step; returns the max design change.
    fn step(&self, state: &mut DesignState, mma: &mut Mma, eval: &Evaluation, sens: &Sensitivities) -> Result<f64, OptimizeError> {
        let m = self.phys.len();
        let x = self.gather_design(state);
        let (lo, hi) = self.bounds();
        let mut df0 = Vec::with_capacity(x.len());
        let mut dg = Vec::with_capacity(x.len());
        df0.extend(self.phys.iter().map(|&e| sens.dj_dmu[e]));
        dg.extend(self.phys.iter().map(|&e| sens.dv_dmu[e]));
        for f in 0..self.setup.form.n_a_fields() {
            df0.extend(self.phys.iter().map(|&e| sens.dj_da[f][e]));
            dg.extend(self.phys.iter().map(|&e| sens.dv_da[f][e]));
        }
        // scale the objective gradient to O(1); MMA is not scale invariant
        let scale = df0.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        for v in df0.iter_mut() {
            *v /= scale;
        }
        let g_val = eval.volume / self.setup.v_max - 1.0;
        for v in dg.iter_mut() {
            *v /= self.setup.v_max;
        }
        let xnew = mma.update(&x, &lo, &hi, &df0, g_val, &dg)?;
        let change = x.iter().zip(&xnew).take(m).fold(0.0f64, |a, (o, n)| a.max((o - n).abs()));
        self.scatter_design(&xnew, state);
        Ok(change)
    }

    /// Run the full optimization from `state`. Calls `on_iter` after every
    /// iteration with the appended history record.
    pub fn run(
        &self,
        mut state: DesignState,
        mut on_iter: impl FnMut(&IterRecord, &DesignState),
    ) -> Result<(DesignState, Vec<IterRecord>), OptimizeError> {
        let mut mma = Mma::new(self.n_design(), MmaOptions::default());
        let mut history = Vec::new();
        let sched = self.setup.beta;
        while state.iter < self.setup.max_iters {
            state.iter += 1;
            let eval = self.evaluate(&state)?;
            self.update_angles(&mut state, &eval);
            let sens = self.sensitivities(&state, &eval)?;
            let change = self.step(&mut state, &mut mma, &eval, &sens)?;
            let rec = IterRecord {
                iter: state.iter,
                j: eval.j,
                volume: eval.volume,
                beta: state.beta,
                change,
            };
            history.push(rec);
            on_iter(&rec, &state);
            let beta_done = state.beta >= sched.end;
            if beta_done && change < self.setup.change_tol {
                break;
            }
            if !beta_done && state.iter % sched.double_every == 0 {
                state.beta = (state.beta * 2.0).min(sched.end);
            }
        }
        Ok((state, history))
    }
}
