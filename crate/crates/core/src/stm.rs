//! Stochastic theta method
//!
//! ```text
//! X_{n+1} = X_n + (1 - theta) b(X_n) tau + theta b(X_{n+1}) tau + sigma(X_n) dW_n
//! ```
//!
//! Each step solves `hat_b(y) = rhs` with `hat_b(y) = y - theta tau b(y)`.
//! Under `L1 theta tau < 2`, `hat_b` is uniformly monotone,
//! `<x - y, hat_b(x) - hat_b(y)> >= (1 - L1 theta tau / 2) |x - y|^2`,
//! so the root is unique and Newton from any start lands on the same point.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{mat_vec, norm, solve_in_place};
use crate::problem::SodeProblem;
use crate::rng::IncrementSource;

/// Iteration budget for the damped fixed-point fallback.
const FALLBACK_MAX_ITER: usize = 10_000;
const FALLBACK_DAMPING: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StmConfig {
    pub theta: f64,
    pub tau: f64,
    /// Absolute tolerance on `|hat_b(y) - rhs|`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fixed_point_fallback: bool,
}

impl StmConfig {
    pub fn new(theta: f64, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid(format!("theta must lie in [0, 1] (got {theta})")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1) (got {tau})")));
        }
        Ok(Self {
            theta,
            tau,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            fixed_point_fallback: true,
        })
    }

    pub fn with_newton(mut self, tol: f64, max_iter: usize) -> Self {
        self.newton_tol = tol;
        self.newton_max_iter = max_iter;
        self
    }

    pub fn with_fallback(mut self, enabled: bool) -> Self {
        self.fixed_point_fallback = enabled;
        self
    }
}

/// Scratch buffers for allocation-free stepping. One per worker.
#[derive(Clone, Debug)]
pub struct StepWorkspace {
    rhs: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
    noise_term: Vec<f64>,
    resid: Vec<f64>,
    trial: Vec<f64>,
    trial_resid: Vec<f64>,
    delta: Vec<f64>,
    jac: Vec<f64>,
    dw: Vec<f64>,
}

impl StepWorkspace {
    fn new(d: usize, m: usize) -> Self {
        Self {
            rhs: vec![0.0; d],
            b: vec![0.0; d],
            sigma: vec![0.0; d * m],
            noise_term: vec![0.0; d],
            resid: vec![0.0; d],
            trial: vec![0.0; d],
            trial_resid: vec![0.0; d],
            delta: vec![0.0; d],
            jac: vec![0.0; d * d],
            dw: vec![0.0; m],
        }
    }
}

/// Outcome of a converged implicit solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub used_fallback: bool,
}

#[derive(Clone, Debug)]
pub struct Stepper {
    problem: SodeProblem,
    config: StmConfig,
}

impl Stepper {
    /// Fails unless `L1 theta tau < 2`.
    pub fn new(problem: SodeProblem, config: StmConfig) -> Result<Self> {
        let prod = problem.l1 * config.theta * config.tau;
        if prod >= 2.0 {
            return Err(Error::invalid(format!(
                "L1·θ·τ < 2 violated: {} · {} · {} = {prod}",
                problem.l1, config.theta, config.tau
            )));
        }
        Ok(Self { problem, config })
    }

    pub fn problem(&self) -> &SodeProblem {
        &self.problem
    }

    pub fn config(&self) -> &StmConfig {
        &self.config
    }

    pub fn workspace(&self) -> StepWorkspace {
        StepWorkspace::new(self.problem.dim(), self.problem.noise_dim())
    }

    /// Uniform-monotonicity constant `1 - L1 theta tau / 2` of `hat_b`.
    pub fn monotonicity_constant(&self) -> f64 {
        1.0 - self.problem.l1 * self.config.theta * self.config.tau / 2.0
    }

    pub fn hat_b(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.config.theta * self.config.tau;
        let b = self.problem.drift(x)?;
        Ok(x.iter().zip(&b).map(|(xi, bi)| xi - w * bi).collect())
    }

    /// `x + (1 - theta) tau b(x)`, the mean of `hat_b(X_{n+1})` given `X_n = x`.
    pub fn explicit_part(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = (1.0 - self.config.theta) * self.config.tau;
        let b = self.problem.drift(x)?;
        Ok(x.iter().zip(&b).map(|(xi, bi)| xi + w * bi).collect())
    }

    /// Writes `hat_b(y) - rhs` into `out` (and `b(y)` into `b`); returns its norm.
    fn residual(&self, y: &[f64], rhs: &[f64], b: &mut [f64], out: &mut [f64]) -> Result<f64> {
        let w = self.config.theta * self.config.tau;
        self.problem.drift_into(y, b)?;
        for i in 0..y.len() {
            out[i] = y[i] - w * b[i] - rhs[i];
        }
        Ok(norm(out))
    }

    /// Rounding floor of the residual evaluation; the solve never asks for
    /// less than this.
    fn tolerance_floor(&self, y: &[f64], b: &[f64], rhs: &[f64]) -> f64 {
        let w = self.config.theta * self.config.tau;
        let scale = norm(y) + w * norm(b) + norm(rhs);
        self.config.newton_tol.max(16.0 * f64::EPSILON * scale)
    }

    pub fn implicit_solve(&self, rhs: &[f64], x_init: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        let mut y = x_init.to_vec();
        self.implicit_solve_into(rhs, &mut y, &mut ws)?;
        Ok(y)
    }

    /// Solves `hat_b(y) = rhs` starting from the contents of `y`.
    ///
    /// Newton with backtracking on the residual norm, Jacobian
    /// `I - theta tau J_b(y)`; on stagnation, damped fixed-point iteration
    /// `y <- (y + rhs + theta tau b(y)) / 2`.
    pub fn implicit_solve_into(&self, rhs: &[f64], y: &mut [f64], ws: &mut StepWorkspace) -> Result<SolveStats> {
        let d = self.problem.dim();
        let w = self.config.theta * self.config.tau;
        let StepWorkspace {
            b,
            resid,
            trial,
            trial_resid,
            delta,
            jac,
            ..
        } = ws;

        let mut rn = self.residual(y, rhs, b, resid)?;
        let mut iterations = 0;
        while iterations < self.config.newton_max_iter {
            if rn <= self.tolerance_floor(y, b, rhs) {
                return Ok(SolveStats {
                    iterations,
                    residual: rn,
                    used_fallback: false,
                });
            }
            iterations += 1;
            self.problem.jacobian_into(y, jac)?;
            for (i, row) in jac.chunks_mut(d).enumerate() {
                row.iter_mut().for_each(|v| *v *= -w);
                row[i] += 1.0;
            }
            delta.copy_from_slice(resid);
            if !solve_in_place(jac, delta, d) {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..d {
                    trial[i] = y[i] - step * delta[i];
                }
                // A trial point may leave the region where b is finite.
                let tn = self.residual(trial, rhs, b, trial_resid).unwrap_or(f64::INFINITY);
                if tn <= (1.0 - 1e-4 * step) * rn || tn <= self.tolerance_floor(trial, b, rhs) {
                    y.copy_from_slice(trial);
                    resid.copy_from_slice(trial_resid);
                    rn = tn;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        // b must describe the current iterate before the floor is evaluated.
        rn = self.residual(y, rhs, b, resid)?;
        if rn <= self.tolerance_floor(y, b, rhs) {
            return Ok(SolveStats {
                iterations,
                residual: rn,
                used_fallback: false,
            });
        }
        if self.config.fixed_point_fallback {
            for k in 1..=FALLBACK_MAX_ITER {
                for i in 0..d {
                    y[i] = (1.0 - FALLBACK_DAMPING) * y[i] + FALLBACK_DAMPING * (rhs[i] + w * b[i]);
                }
                rn = match self.residual(y, rhs, b, resid) {
                    Ok(v) => v,
                    Err(_) => break,
                };
                if rn <= self.tolerance_floor(y, b, rhs) {
                    return Ok(SolveStats {
                        iterations: iterations + k,
                        residual: rn,
                        used_fallback: true,
                    });
                }
            }
        }
        Err(Error::SolverFailure {
            residual: rn,
            iterations,
        })
    }

    pub fn step(&self, x: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        let mut out = vec![0.0; x.len()];
        self.step_into(x, dw, &mut out, &mut ws)?;
        Ok(out)
    }

    /// One theta-method step from `x` with increment `dw`, warm-started at `x`.
    pub fn step_into(&self, x: &[f64], dw: &[f64], out: &mut [f64], ws: &mut StepWorkspace) -> Result<()> {
        let (d, m) = (self.problem.dim(), self.problem.noise_dim());
        let StmConfig { theta, tau, .. } = self.config;
        self.problem.drift_into(x, &mut ws.b)?;
        self.problem.diffusion_into(x, &mut ws.sigma)?;
        mat_vec(&ws.sigma, d, m, dw, &mut ws.noise_term);
        if theta == 0.0 {
            for i in 0..d {
                out[i] = x[i] + ws.b[i] * tau + ws.noise_term[i];
            }
            return Ok(());
        }
        let w = (1.0 - theta) * tau;
        for i in 0..d {
            ws.rhs[i] = x[i] + w * ws.b[i] + ws.noise_term[i];
        }
        out.copy_from_slice(x);
        let rhs = std::mem::take(&mut ws.rhs);
        let solved = self.implicit_solve_into(&rhs, out, ws);
        ws.rhs = rhs;
        solved.map(|_| ())
    }

    /// Advances `n` steps from `x0`, handing every visited state (including
    /// `x0` at index 0) to `visit`. Returns the terminal state.
    pub fn run_path(
        &self,
        x0: &[f64],
        n: usize,
        noise: &mut impl IncrementSource,
        ws: &mut StepWorkspace,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        if x0.len() != self.problem.dim() {
            return Err(Error::invalid(format!(
                "initial state has dimension {} but the problem has {}",
                x0.len(),
                self.problem.dim()
            )));
        }
        let mut cur = x0.to_vec();
        let mut next = cur.clone();
        let mut dw = std::mem::take(&mut ws.dw);
        visit(0, &cur);
        for k in 0..n {
            noise.increment(k as u64, self.config.tau, &mut dw);
            if let Err(e) = self.step_into(&cur, &dw, &mut next, ws) {
                ws.dw = dw;
                return Err(e.at_step(k));
            }
            std::mem::swap(&mut cur, &mut next);
            visit(k + 1, &cur);
        }
        ws.dw = dw;
        Ok(cur)
    }

    pub fn simulate_path(&self, x0: &[f64], n: usize, noise: &mut impl IncrementSource) -> Result<Trajectory> {
        let mut ws = self.workspace();
        let mut states = Vec::with_capacity(n + 1);
        self.run_path(x0, n, noise, &mut ws, |_, x| states.push(x.to_vec()))?;
        Ok(Trajectory {
            states,
            tau: self.config.tau,
            seed: noise.seed(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `X_0, ..., X_n`.
    pub states: Vec<Vec<f64>>,
    pub tau: f64,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with header `step,t,x_1,...,x_d`.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("step,t");
        for i in 1..=d {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for (k, x) in self.states.iter().enumerate() {
            let _ = write!(out, "{k},{}", k as f64 * self.tau);
            for v in x {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
