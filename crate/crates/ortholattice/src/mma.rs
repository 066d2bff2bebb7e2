//! Method of Moving Asymptotes for a single inequality constraint.
//!
//! The separable subproblem is solved exactly in the dual: for one constraint
//! the dual is a scalar concave function of the multiplier, maximized by
//! bisection. Asymptote adaptation and move limits follow the standard
//! published scheme.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmaError {
    #[error("inconsistent bounds at variable {0}: min {1} > max {2}")]
    SubproblemInfeasible(usize, f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct MmaOptions {
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_decr: f64,
    pub asy_incr: f64,
    pub albefa: f64,
    pub raa0: f64,
}

impl Default for MmaOptions {
    fn default() -> Self {
        MmaOptions {
            move_limit: 0.2,
            asy_init: 0.5,
            asy_decr: 0.7,
            asy_incr: 1.2,
            albefa: 0.1,
            raa0: 1e-5,
        }
    }
}

/// Persistent MMA state for one design vector.
pub struct Mma {
    opts: MmaOptions,
    iter: usize,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
}

impl Mma {
    pub fn new(n: usize, opts: MmaOptions) -> Self {
        Mma {
            opts,
            iter: 0,
            xold1: vec![0.0; n],
            xold2: vec![0.0; n],
            low: vec![0.0; n],
            upp: vec![0.0; n],
        }
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// One MMA step. `df0` is the objective gradient; the constraint is
    /// `g + dg . (x_new - x) <= 0` linearized at `x` (pass the current
    /// constraint value `g`). Returns the new design.
    pub fn update(
        &mut self,
        x: &[f64],
        xmin: &[f64],
        xmax: &[f64],
        df0: &[f64],
        g: f64,
        dg: &[f64],
    ) -> Result<Vec<f64>, MmaError> {
        let n = x.len();
        assert!(xmin.len() == n && xmax.len() == n && df0.len() == n && dg.len() == n);
        for j in 0..n {
            if xmin[j] > xmax[j] {
                return Err(MmaError::SubproblemInfeasible(j, xmin[j], xmax[j]));
            }
        }
        let o = &self.opts;
        self.iter += 1;
        // asymptotes
        for j in 0..n {
            let range = (xmax[j] - xmin[j]).max(1e-12);
            if self.iter < 3 {
                self.low[j] = x[j] - o.asy_init * range;
                self.upp[j] = x[j] + o.asy_init * range;
            } else {
                let zzz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zzz > 0.0 {
                    o.asy_incr
                } else if zzz < 0.0 {
                    o.asy_decr
                } else {
                    1.0
                };
                self.low[j] = x[j] - factor * (self.xold1[j] - self.low[j]);
                self.upp[j] = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = self.low[j].clamp(x[j] - 10.0 * range, x[j] - 0.01 * range);
                self.upp[j] = self.upp[j].clamp(x[j] + 0.01 * range, x[j] + 10.0 * range);
            }
        }
        // feasible box within the asymptotes
        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            let range = (xmax[j] - xmin[j]).max(1e-12);
            alfa[j] = xmin[j]
                .max(self.low[j] + o.albefa * (x[j] - self.low[j]))
                .max(x[j] - o.move_limit * range);
            beta[j] = xmax[j]
                .min(self.upp[j] - o.albefa * (self.upp[j] - x[j]))
                .min(x[j] + o.move_limit * range);
            if alfa[j] > beta[j] {
                // degenerate but consistent boxes collapse to a point
                let mid = 0.5 * (alfa[j] + beta[j]);
                alfa[j] = mid;
                beta[j] = mid;
            }
        }
        // separable approximation coefficients
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut p1 = vec![0.0; n];
        let mut q1 = vec![0.0; n];
        let mut b = -g;
        for j in 0..n {
            let range = (xmax[j] - xmin[j]).max(1e-12);
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let gp = df0[j].max(0.0);
            let gm = (-df0[j]).max(0.0);
            p0[j] = ux * ux * (1.001 * gp + 0.001 * gm + o.raa0 / range);
            q0[j] = xl * xl * (0.001 * gp + 1.001 * gm + o.raa0 / range);
            let cp = dg[j].max(0.0);
            let cm = (-dg[j]).max(0.0);
            p1[j] = ux * ux * (1.001 * cp + 0.001 * cm + o.raa0 / range);
            q1[j] = xl * xl * (0.001 * cp + 1.001 * cm + o.raa0 / range);
            b += p1[j] / ux + q1[j] / xl;
        }
        // primal minimizer for a given multiplier
        let x_of = |lam: f64, j: usize| -> f64 {
            let p = (p0[j] + lam * p1[j]).sqrt();
            let q = (q0[j] + lam * q1[j]).sqrt();
            let xs = (self.low[j] * p + self.upp[j] * q) / (p + q);
            xs.clamp(alfa[j], beta[j])
        };
        // dual gradient: subproblem constraint value at x(lam)
        let dual_grad = |lam: f64| -> f64 {
            let mut s = -b;
            for j in 0..n {
                let xs = x_of(lam, j);
                s += p1[j] / (self.upp[j] - xs) + q1[j] / (xs - self.low[j]);
            }
            s
        };
        let lam = if dual_grad(0.0) <= 0.0 {
            0.0
        } else {
            let mut hi = 1.0;
            while dual_grad(hi) > 0.0 {
                hi *= 2.0;
                if hi > 1e12 {
                    break;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if dual_grad(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let xnew: Vec<f64> = (0..n).map(|j| x_of(lam, j)).collect();
        self.xold2 = std::mem::take(&mut self.xold1);
        self.xold1 = x.to_vec();
        Ok(xnew)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_keeps_iterate() {
        let n = 7;
        let mut mma = Mma::new(n, MmaOptions::default());
        let x: Vec<f64> = (0..n).map(|j| 0.1 + 0.1 * j as f64).collect();
        let xmin = vec![0.0; n];
        let xmax = vec![1.0; n];
        let zeros = vec![0.0; n];
        let xn = mma.update(&x, &xmin, &xmax, &zeros, -1.0, &zeros).unwrap();
        for j in 0..n {
            assert_relative_eq!(xn[j], x[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_projection() {
        // min sum (x - c)^2  s.t. sum x <= b: optimum is the uniform shift of
        // c by (sum c - b)/n when the bound is active and no box is hit
        let c = [0.6, 0.8, 0.5, 0.7];
        let b = 2.0;
        let n = c.len();
        let shift = (c.iter().sum::<f64>() - b) / n as f64;
        let expected: Vec<f64> = c.iter().map(|v| v - shift).collect();
        let mut mma = Mma::new(n, MmaOptions::default());
        let mut x = vec![0.5; n];
        let xmin = vec![0.0; n];
        let xmax = vec![1.0; n];
        for _ in 0..50 {
            let df0: Vec<f64> = x.iter().zip(&c).map(|(x, c)| 2.0 * (x - c)).collect();
            let g = x.iter().sum::<f64>() - b;
            let dg = vec![1.0; n];
            x = mma.update(&x, &xmin, &xmax, &df0, g, &dg).unwrap();
        }
        for j in 0..n {
            assert!((x[j] - expected[j]).abs() < 1e-6, "{} vs {}", x[j], expected[j]);
        }
        assert!(x.iter().sum::<f64>() <= b + 1e-9);
    }

    #[test]
    fn constraint_never_violated_when_feasible_exists() {
        // box constraints respected exactly
        let n = 5;
        let mut mma = Mma::new(n, MmaOptions::default());
        let mut x = vec![0.9; n];
        let xmin = vec![0.2; n];
        let xmax = vec![0.8; n];
        let df0 = vec![-1.0; n];
        let dg = vec![1.0; n];
        for _ in 0..10 {
            let g = x.iter().sum::<f64>() - 3.0;
            x = mma.update(&x, &xmin, &xmax, &df0, g, &dg).unwrap();
            for &v in &x {
                assert!((0.2..=0.8).contains(&v));
            }
        }
    }

    /// Classic five-variable cantilever weight minimization: minimize
    /// 0.0624 sum(x) subject to 61/x1^3 + 37/x2^3 + 19/x3^3 + 7/x4^3 +
    /// 1/x5^3 <= 1. Known optimum ~ 1.340.
    #[test]
    fn cantilever_toy_problem() {
        let coef = [61.0, 37.0, 19.0, 7.0, 1.0];
        let n = 5;
        let mut mma = Mma::new(n, MmaOptions::default());
        let mut x: Vec<f64> = vec![5.0; n];
        let xmin = vec![1.0; n];
        let xmax = vec![10.0; n];
        for _ in 0..60 {
            let df0 = vec![0.0624; n];
            let g = coef.iter().zip(&x).map(|(c, x)| c / x.powi(3)).sum::<f64>() - 1.0;
            let dg: Vec<f64> = coef.iter().zip(&x).map(|(c, x)| -3.0 * c / x.powi(4)).collect();
            x = mma.update(&x, &xmin, &xmax, &df0, g, &dg).unwrap();
        }
        let weight = 0.0624 * x.iter().sum::<f64>();
        assert!((weight - 1.340).abs() / 1.340 < 0.01, "weight {weight}");
        let g = coef.iter().zip(&x).map(|(c, x)| c / x.powi(3)).sum::<f64>() - 1.0;
        assert!(g < 1e-4, "constraint residual {g}");
    }

    #[test]
    fn bad_bounds_rejected() {
        let mut mma = Mma::new(2, MmaOptions::default());
        let r = mma.update(&[0.5, 0.5], &[0.0, 0.9], &[1.0, 0.1], &[0.0; 2], -1.0, &[0.0; 2]);
        assert!(matches!(r, Err(MmaError::SubproblemInfeasible(1, _, _))));
    }
}
