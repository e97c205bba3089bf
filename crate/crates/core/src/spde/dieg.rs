use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{norm, solve_in_place};
use crate::rng::IncrementSource;

use super::problem::SpdeProblem;
use super::space::{SpectralField, SpectralSpace};

const FALLBACK_MAX_ITER: usize = 10_000;
const FALLBACK_DAMPING: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub fixed_point_fallback: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            fixed_point_fallback: true,
        }
    }
}

/// Q-Wiener increment on `V_N`: coefficient `k` is `N(0, q_k tau)`.
/// `source` supplies the standard `N(0, tau)` increments.
pub fn qwiener_increment(
    space: &SpectralSpace,
    q_spectrum: &[f64],
    tau: f64,
    source: &mut impl IncrementSource,
    step: u64,
) -> Result<SpectralField> {
    let n = space.modes();
    if q_spectrum.len() < n {
        return Err(Error::invalid(format!(
            "noise spectrum has {} entries but the space has {n} modes",
            q_spectrum.len()
        )));
    }
    let mut coeffs = vec![0.0; n];
    source.increment(step, tau, &mut coeffs);
    for (c, q) in coeffs.iter_mut().zip(q_spectrum) {
        *c *= q.sqrt();
    }
    Ok(SpectralField::new(coeffs))
}

#[derive(Clone, Debug)]
pub struct DiegWorkspace {
    values: Vec<f64>,
    fvals: Vec<f64>,
    pf: Vec<f64>,
    rhs: Vec<f64>,
    resid: Vec<f64>,
    trial: Vec<f64>,
    trial_resid: Vec<f64>,
    delta: Vec<f64>,
    jac: Vec<f64>,
    dw: Vec<f64>,
}

impl DiegWorkspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            values: vec![0.0; m],
            fvals: vec![0.0; m],
            pf: vec![0.0; n],
            rhs: vec![0.0; n],
            resid: vec![0.0; n],
            trial: vec![0.0; n],
            trial_resid: vec![0.0; n],
            delta: vec![0.0; n],
            jac: vec![0.0; n * n],
            dw: vec![0.0; n],
        }
    }
}

/// Spectral-Galerkin drift-implicit Euler step
///
/// ```text
/// (I + tau Lambda) X_{j+1} - tau P_N F(X_{j+1}) = X_j + P_N G(X_j) dW_j
/// ```
///
/// with `Lambda = diag(lambda_k)`. The left side `hat_F` is uniformly
/// monotone with constant `1 - (K1 - lambda_1) tau > 0`.
#[derive(Clone, Debug)]
pub struct DiegStepper {
    space: SpectralSpace,
    problem: SpdeProblem,
    tau: f64,
    solver: SolverConfig,
}

impl DiegStepper {
    pub fn new(space: SpectralSpace, problem: SpdeProblem, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1) (got {tau})")));
        }
        let k1 = problem.constants.k1;
        if (k1 - space.lambda1()) * tau >= 1.0 {
            return Err(Error::invalid(format!(
                "(K1 - λ1)·τ < 1 violated: ({k1} - {}) · {tau} >= 1",
                space.lambda1()
            )));
        }
        if problem.q_spectrum.len() < space.modes() {
            return Err(Error::invalid(format!(
                "noise spectrum has {} entries but the space has {} modes",
                problem.q_spectrum.len(),
                space.modes()
            )));
        }
        Ok(Self {
            space,
            problem,
            tau,
            solver: SolverConfig::default(),
        })
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn space(&self) -> &SpectralSpace {
        &self.space
    }

    pub fn problem(&self) -> &SpdeProblem {
        &self.problem
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn workspace(&self) -> DiegWorkspace {
        DiegWorkspace::new(self.space.modes(), self.space.collocation_size())
    }

    /// Monotonicity constant `1 - K1 tau + lambda_1 tau` of `hat_F`.
    pub fn monotonicity_constant(&self) -> f64 {
        1.0 - self.problem.constants.k1 * self.tau + self.space.lambda1() * self.tau
    }

    /// `P_N F(y)` into `ws.pf`, leaving grid values of `y` in `ws.values`.
    fn reaction(&self, y: &[f64], ws_values: &mut [f64], ws_fvals: &mut [f64], pf: &mut [f64]) -> Result<()> {
        self.space.to_grid(y, ws_values);
        for (f, u) in ws_fvals.iter_mut().zip(ws_values.iter()) {
            *f = (self.problem.reaction)(*u);
        }
        ensure_finite(ws_fvals, "reaction term on collocation grid", y)?;
        self.space.project(ws_fvals, pf);
        Ok(())
    }

    /// `hat_F(x) = (I + tau Lambda) x - tau P_N F(x)`.
    pub fn hat_f(&self, x: &SpectralField) -> Result<SpectralField> {
        let mut ws = self.workspace();
        self.reaction(&x.coeffs, &mut ws.values, &mut ws.fvals, &mut ws.pf)?;
        let lam = self.space.eigenvalues();
        Ok(SpectralField::new(
            (0..self.space.modes())
                .map(|k| (1.0 + self.tau * lam[k]) * x.coeffs[k] - self.tau * ws.pf[k])
                .collect(),
        ))
    }

    /// Residual `hat_F(y) - rhs` into `out`; returns `(norm, rounding floor)`.
    fn residual(&self, y: &[f64], rhs: &[f64], ws: &mut DiegWorkspace, trial: bool) -> Result<(f64, f64)> {
        let DiegWorkspace {
            values,
            fvals,
            pf,
            resid,
            trial_resid,
            ..
        } = ws;
        self.reaction(y, values, fvals, pf)?;
        let out = if trial { trial_resid } else { resid };
        let lam = self.space.eigenvalues();
        let mut lin = 0.0;
        for k in 0..y.len() {
            let a = (1.0 + self.tau * lam[k]) * y[k];
            lin += a * a;
            out[k] = a - self.tau * pf[k] - rhs[k];
        }
        let floor = 16.0 * f64::EPSILON * (lin.sqrt() + self.tau * norm(pf) + norm(rhs));
        Ok((norm(out), self.solver.tol.max(floor)))
    }

    /// `J = (I + tau Lambda) - tau P_N diag(f'(y(xi))) P_N^T` into `ws.jac`.
    fn assemble_jacobian(&self, ws: &mut DiegWorkspace) -> Result<()> {
        let n = self.space.modes();
        let m = self.space.collocation_size();
        for (f, u) in ws.fvals.iter_mut().zip(&ws.values) {
            *f = (self.problem.reaction_derivative)(*u);
        }
        ensure_finite(&ws.fvals, "reaction derivative on collocation grid", &ws.values)?;
        ws.jac.fill(0.0);
        for i in 0..m {
            let d = ws.fvals[i];
            if d == 0.0 {
                continue;
            }
            for j in 0..n {
                let ej = self.space.basis_value(i, j) * d;
                for k in j..n {
                    ws.jac[j * n + k] += ej * self.space.basis_value(i, k);
                }
            }
        }
        let scale = -self.tau * self.space.weight();
        let lam = self.space.eigenvalues();
        for j in 0..n {
            for k in j..n {
                let v = ws.jac[j * n + k] * scale;
                ws.jac[j * n + k] = v;
                ws.jac[k * n + j] = v;
            }
            ws.jac[j * n + j] += 1.0 + self.tau * lam[j];
        }
        Ok(())
    }

    /// Solves `hat_F(y) = rhs` (`rhs` taken from `ws.rhs`) starting from `y`.
    fn solve(&self, y: &mut [f64], ws: &mut DiegWorkspace) -> Result<usize> {
        let n = self.space.modes();
        let rhs = std::mem::take(&mut ws.rhs);
        let result = self.solve_inner(y, &rhs, ws, n);
        ws.rhs = rhs;
        result
    }

    fn solve_inner(&self, y: &mut [f64], rhs: &[f64], ws: &mut DiegWorkspace, n: usize) -> Result<usize> {
        let (mut rn, mut floor) = self.residual(y, rhs, ws, false)?;
        let mut iterations = 0;
        while iterations < self.solver.max_iter {
            if rn <= floor {
                return Ok(iterations);
            }
            iterations += 1;
            // ws.values holds y on the grid from the last residual call.
            self.assemble_jacobian(ws)?;
            ws.delta.copy_from_slice(&ws.resid);
            if !solve_in_place(&mut ws.jac, &mut ws.delta, n) {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                for k in 0..n {
                    ws.trial[k] = y[k] - step * ws.delta[k];
                }
                let trial = std::mem::take(&mut ws.trial);
                let res = self.residual(&trial, rhs, ws, true);
                ws.trial = trial;
                let (tn, tfloor) = res.unwrap_or((f64::INFINITY, 0.0));
                if tn <= (1.0 - 1e-4 * step) * rn || tn <= tfloor {
                    y.copy_from_slice(&ws.trial);
                    ws.resid.copy_from_slice(&ws.trial_resid);
                    rn = tn;
                    floor = tfloor;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (rn, floor) = self.residual(y, rhs, ws, false)?;
        if rn <= floor {
            return Ok(iterations);
        }
        if self.solver.fixed_point_fallback {
            let lam = self.space.eigenvalues();
            for k in 1..=FALLBACK_MAX_ITER {
                // ws.pf holds P_N F(y) from the last residual call.
                for j in 0..n {
                    let target = (rhs[j] + self.tau * ws.pf[j]) / (1.0 + self.tau * lam[j]);
                    y[j] = (1.0 - FALLBACK_DAMPING) * y[j] + FALLBACK_DAMPING * target;
                }
                match self.residual(y, rhs, ws, false) {
                    Ok((r, f)) => {
                        rn = r;
                        if r <= f {
                            return Ok(iterations + k);
                        }
                    }
                    Err(_) => break,
                }
            }
        }
        Err(Error::SolverFailure {
            residual: rn,
            iterations,
        })
    }

    /// `x + P_N G(x) dW` into `ws.rhs`.
    fn assemble_rhs(&self, x: &[f64], dw: &[f64], ws: &mut DiegWorkspace) -> Result<()> {
        match &self.problem.diffusion {
            None => {
                for k in 0..x.len() {
                    ws.rhs[k] = x[k] + dw[k];
                }
            }
            Some(g) => {
                self.space.to_grid(x, &mut ws.values);
                self.space.to_grid(dw, &mut ws.fvals);
                for (w, u) in ws.fvals.iter_mut().zip(&ws.values) {
                    *w *= g(*u);
                }
                ensure_finite(&ws.fvals, "diffusion on collocation grid", x)?;
                self.space.project(&ws.fvals, &mut ws.pf);
                for k in 0..x.len() {
                    ws.rhs[k] = x[k] + ws.pf[k];
                }
            }
        }
        Ok(())
    }

    pub fn step(&self, x: &SpectralField, dw: &SpectralField) -> Result<SpectralField> {
        let n = self.space.modes();
        if x.modes() != n || dw.modes() != n {
            return Err(Error::invalid(format!(
                "fields must have {n} modes (got {} and {})",
                x.modes(),
                dw.modes()
            )));
        }
        let mut ws = self.workspace();
        let mut out = x.coeffs.clone();
        self.step_into(&x.coeffs, &dw.coeffs, &mut out, &mut ws)?;
        Ok(SpectralField::new(out))
    }

    /// Step from `x` with noise coefficients `dw`; `out` is the warm start.
    pub fn step_into(&self, x: &[f64], dw: &[f64], out: &mut [f64], ws: &mut DiegWorkspace) -> Result<()> {
        self.assemble_rhs(x, dw, ws)?;
        self.solve(out, ws).map(|_| ())
    }

    /// Advances `n` steps, visiting every state including `x0` at index 0.
    pub fn run_path(
        &self,
        x0: &SpectralField,
        n: usize,
        source: &mut impl IncrementSource,
        ws: &mut DiegWorkspace,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<SpectralField> {
        let modes = self.space.modes();
        if x0.modes() != modes {
            return Err(Error::invalid(format!(
                "initial field has {} modes but the space has {modes}",
                x0.modes()
            )));
        }
        let mut cur = x0.coeffs.clone();
        let mut next = cur.clone();
        let mut dw = std::mem::take(&mut ws.dw);
        visit(0, &cur);
        let sq: Vec<f64> = self.problem.q_spectrum[..modes].iter().map(|q| q.sqrt()).collect();
        for k in 0..n {
            source.increment(k as u64, self.tau, &mut dw);
            for (d, s) in dw.iter_mut().zip(&sq) {
                *d *= s;
            }
            next.copy_from_slice(&cur);
            if let Err(e) = self.step_into(&cur, &dw, &mut next, ws) {
                ws.dw = dw;
                return Err(e.at_step(k));
            }
            std::mem::swap(&mut cur, &mut next);
            visit(k + 1, &cur);
        }
        ws.dw = dw;
        Ok(SpectralField::new(cur))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{NoiseStream, ZeroNoise};
    use crate::spde::problem::{allen_cahn_constants, power_spectrum, SpdeConstants};
    use crate::spde::space::nemytskii_project;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn linear_problem(n: usize) -> SpdeProblem {
        SpdeProblem::new(
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            None,
            SpdeConstants {
                k1: 0.0,
                k2: 0.0,
                k3: 0.0,
                k4: 0.0,
                k5: 0.0,
                q: 1.0,
                k6: 0.0,
                k7: 0.0,
                k8: 1.0,
            },
            power_spectrum(n, 2.0),
        )
        .unwrap()
    }

    fn allen_cahn_stepper(eps: f64, tau: f64) -> DiegStepper {
        let params = allen_cahn_constants(eps, -1.0, &power_spectrum(10, 2.0)).unwrap();
        DiegStepper::new(SpectralSpace::new(10).unwrap(), SpdeProblem::allen_cahn(&params), tau).unwrap()
    }

    #[test]
    fn linear_step_closed_form() {
        let s = DiegStepper::new(SpectralSpace::new(10).unwrap(), linear_problem(10), 0.1).unwrap();
        let y = s.step(&SpectralField::basis(10, 1), &SpectralField::zeros(10)).unwrap();
        assert_abs_diff_eq!(y.coeffs[0], 1.0 / (1.0 + 0.1 * PI * PI), epsilon = 1e-14);
        assert_abs_diff_eq!(y.coeffs[0], 0.503281, epsilon = 1e-6);
        assert!(y.coeffs[1..].iter().all(|c| *c == 0.0));
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let s = allen_cahn_stepper(0.5, 0.1);
        let y = s.step(&SpectralField::zeros(10), &SpectralField::zeros(10)).unwrap();
        assert_eq!(y, SpectralField::zeros(10));
    }

    #[test]
    fn allen_cahn_step_matches_fixed_point_oracle() {
        let s = allen_cahn_stepper(0.5, 0.1);
        let x = SpectralField::sine_sum(10, [1]);
        let y = s.step(&x, &SpectralField::zeros(10)).unwrap();
        // residual
        let hf = s.hat_f(&y).unwrap();
        let res: f64 = hf.coeffs.iter().zip(&x.coeffs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-12, "residual {res}");
        // damped fixed point y <- (y + (I + tau L)^-1 (x + tau P f(y))) / 2, 1000 sweeps
        let space = s.space();
        let f = |u: f64| 4.0 * (u - u * u * u);
        let mut z = x.coeffs.clone();
        for _ in 0..1000 {
            let pf = nemytskii_project(&SpectralField::new(z.clone()), f, space).unwrap();
            for k in 0..10 {
                let t = (x.coeffs[k] + 0.1 * pf.coeffs[k]) / (1.0 + 0.1 * space.eigenvalues()[k]);
                z[k] = 0.5 * z[k] + 0.5 * t;
            }
        }
        for (a, b) in y.coeffs.iter().zip(&z) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_size_condition() {
        let params = allen_cahn_constants(0.1, -1.0, &power_spectrum(10, 2.0)).unwrap();
        // K1 = 100: (100 - pi^2) tau < 1 needs tau < 0.011
        let space = SpectralSpace::new(10).unwrap();
        let err = DiegStepper::new(space.clone(), SpdeProblem::allen_cahn(&params), 0.1).unwrap_err();
        assert!(err.to_string().contains("(K1 - λ1)·τ < 1"));
        assert!(DiegStepper::new(space, SpdeProblem::allen_cahn(&params), 0.01).is_ok());
    }

    #[test]
    fn qwiener_zero_tau_and_trace() {
        let space = SpectralSpace::new(10).unwrap();
        let q = power_spectrum(10, 2.0);
        let mut noise = NoiseStream::new(0, 0, 10);
        let w = qwiener_increment(&space, &q, 0.0, &mut noise, 0).unwrap();
        assert_eq!(w, SpectralField::zeros(10));
        let trace: f64 = q.iter().map(|qk| qk * 0.1).sum();
        assert_abs_diff_eq!(trace, 0.1 * 1.549_767_731_166_540_8, epsilon = 1e-15);
    }

    #[test]
    fn qwiener_second_moments() {
        let space = SpectralSpace::new(10).unwrap();
        let q = power_spectrum(10, 2.0);
        let tau = 0.1;
        let draws = 100_000;
        let mut noise = NoiseStream::new(5, 0, 10);
        let mut m2 = [0.0; 10];
        for step in 0..draws {
            let w = qwiener_increment(&space, &q, tau, &mut noise, step).unwrap();
            for (a, c) in m2.iter_mut().zip(&w.coeffs) {
                *a += c * c;
            }
        }
        for (k, a) in m2.iter().enumerate() {
            let target = q[k] * tau;
            let mean = a / draws as f64;
            assert!(
                (mean - target).abs() <= 5.0 * target * (2.0 / draws as f64).sqrt(),
                "mode {} mean {mean} target {target}",
                k + 1
            );
        }
    }

    #[test]
    fn multiplicative_noise_projects_product() {
        let mut p = linear_problem(6);
        p.diffusion = Some(Arc::new(|u| 1.0 + u));
        let s = DiegStepper::new(SpectralSpace::with_collocation(6, 40).unwrap(), p, 0.1).unwrap();
        let x = SpectralField::new(vec![0.3, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let dw = SpectralField::new(vec![0.0, 0.2, 0.0, 0.0, 0.0, 0.0]);
        let y = s.step(&x, &dw).unwrap();
        // rhs = x + P_N[(1 + x(xi)) dW(xi)], then the linear solve per mode
        let space = s.space();
        let xs = x.grid_values(space);
        let ws: Vec<f64> = dw.grid_values(space).iter().zip(&xs).map(|(w, u)| w * (1.0 + u)).collect();
        let mut proj = vec![0.0; 6];
        space.project(&ws, &mut proj);
        for k in 0..6 {
            let expect = (x.coeffs[k] + proj[k]) / (1.0 + 0.1 * space.eigenvalues()[k]);
            assert_abs_diff_eq!(y.coeffs[k], expect, epsilon = 1e-14);
        }
        assert!((proj[1] - 0.2).abs() > 1e-3, "multiplicative part must couple modes");
    }

    #[test]
    fn zero_noise_path_decays() {
        let s = allen_cahn_stepper(0.5, 0.1);
        let mut ws = s.workspace();
        let mut norms = Vec::new();
        s.run_path(&SpectralField::sine_sum(10, 1..=10), 30, &mut ZeroNoise, &mut ws, |_, x| {
            norms.push(x.iter().map(|c| c * c).sum::<f64>())
        })
        .unwrap();
        assert_eq!(norms.len(), 31);
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        assert!(norms[30] < 1e-4);
    }

    proptest! {
        #[test]
        fn linear_case_oracle(x in proptest::collection::vec(-5.0f64..5.0, 10), dw in proptest::collection::vec(-1.0f64..1.0, 10)) {
            let s = DiegStepper::new(SpectralSpace::new(10).unwrap(), linear_problem(10), 0.1).unwrap();
            let y = s.step(&SpectralField::new(x.clone()), &SpectralField::new(dw.clone())).unwrap();
            for k in 0..10 {
                let expect = (x[k] + dw[k]) / (1.0 + 0.1 * s.space().eigenvalues()[k]);
                prop_assert!((y.coeffs[k] - expect).abs() <= 1e-12);
            }
        }

        #[test]
        fn hat_f_is_uniformly_monotone(a in proptest::collection::vec(-2.0f64..2.0, 10), b in proptest::collection::vec(-2.0f64..2.0, 10)) {
            let s = allen_cahn_stepper(0.5, 0.1);
            let (x, y) = (SpectralField::new(a.clone()), SpectralField::new(b.clone()));
            let (fx, fy) = (s.hat_f(&x).unwrap(), s.hat_f(&y).unwrap());
            let mut inner = 0.0;
            let mut dist = 0.0;
            for k in 0..10 {
                inner += (a[k] - b[k]) * (fx.coeffs[k] - fy.coeffs[k]);
                dist += (a[k] - b[k]).powi(2);
            }
            prop_assert!(inner >= s.monotonicity_constant() * dist - 1e-9);
        }
    }
}
