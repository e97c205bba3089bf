//! Lyapunov certificates for the stochastic theta method.
//!
//! For `theta in (1/2, 1]` and `lambda in (0, 2 theta - 1]`,
//!
//! ```text
//! V_theta(x) = |x - (1 - theta + lambda) b(x) tau|^2
//!            + (2 theta - 1 - lambda) ||sigma(x)||^2 tau + 1
//! E[V_theta(X_{n+1}) | X_n] <= rho V_theta(X_n) + kappa
//! rho   = (1 + (1 - theta) L3 tau) / (1 + (1 - theta + lambda) L3 tau)
//! kappa = L2 tau + (1 - rho)
//! ```
//!
//! and for the trapezoidal case `theta = 1/2`,
//! `V_half(x) = |x - b(x) tau / 2|^2 + 1` with
//! `E[V_half(X_{n+1}) | X_n] <= V_half(X_n) + L2 tau - L3 |X_n|^2 tau`.
//!
//! The one-step kernel has the explicit density
//! `p(x, y) = N(b~(x), sigma sigma^T tau)(hat_b(y)) |det J_hat_b(y)|`
//! with `b~(x) = x + (1 - theta) b(x) tau`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, norm_sq};
use crate::montecarlo::path_moments;
use crate::problem::SodeProblem;
use crate::quadrature::{gk15, integrate};
use crate::rng::{uniform_stream, IncrementSource, NoiseStream};
use crate::stm::{StmConfig, Stepper};

/// Multiplier on the standard error in every Monte Carlo verdict.
pub const SE_BAND: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovSpec {
    pub theta: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl LyapunovSpec {
    pub fn new(theta: f64, lambda: f64, tau: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::invalid(format!(
                "θ ∈ [1/2,1] required for certificates (got {theta})"
            )));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1) (got {tau})")));
        }
        if theta == 0.5 {
            if lambda != 0.0 {
                return Err(Error::invalid("lambda must be 0 when theta = 1/2"));
            }
        } else if !(lambda > 0.0 && lambda <= 2.0 * theta - 1.0) {
            return Err(Error::invalid(format!(
                "lambda must lie in (0, 2θ-1] = (0, {}] (got {lambda})",
                2.0 * theta - 1.0
            )));
        }
        Ok(Self { theta, lambda, tau })
    }

    /// `lambda = 2 theta - 1`, the largest admissible value.
    pub fn with_default_lambda(theta: f64, tau: f64) -> Result<Self> {
        Self::new(theta, (2.0 * theta - 1.0).max(0.0), tau)
    }

    pub fn is_trapezoidal(&self) -> bool {
        self.theta == 0.5
    }

    fn stepper(&self, problem: &SodeProblem) -> Result<Stepper> {
        Stepper::new(problem.clone(), StmConfig::new(self.theta, self.tau)?)
    }
}

/// Contraction `rho` and offset `kappa` of `PV <= rho V + kappa`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftConstants {
    pub rho: f64,
    pub kappa: f64,
}

impl DriftConstants {
    /// `kappa / (1 - rho)`, the asymptotic level of `E V`.
    pub fn stationary_level(&self) -> f64 {
        self.kappa / (1.0 - self.rho)
    }
}

pub fn v_theta(x: &[f64], problem: &SodeProblem, spec: &LyapunovSpec) -> Result<f64> {
    if spec.is_trapezoidal() {
        return Err(Error::invalid("V_theta needs theta > 1/2; use v_half at theta = 1/2"));
    }
    let LyapunovSpec { theta, lambda, tau } = *spec;
    let b = problem.drift(x)?;
    let s = problem.diffusion(x)?;
    let w = (1.0 - theta + lambda) * tau;
    let shifted: f64 = x.iter().zip(&b).map(|(xi, bi)| (xi - w * bi).powi(2)).sum();
    Ok(shifted + (2.0 * theta - 1.0 - lambda) * frobenius_sq(&s) * tau + 1.0)
}

pub fn v_half(x: &[f64], problem: &SodeProblem, tau: f64) -> Result<f64> {
    let b = problem.drift(x)?;
    let w = 0.5 * tau;
    Ok(x.iter().zip(&b).map(|(xi, bi)| (xi - w * bi).powi(2)).sum::<f64>() + 1.0)
}

/// `V_theta` or, at `theta = 1/2`, `V_half`.
pub fn lyapunov_value(x: &[f64], problem: &SodeProblem, spec: &LyapunovSpec) -> Result<f64> {
    if spec.is_trapezoidal() {
        v_half(x, problem, spec.tau)
    } else {
        v_theta(x, problem, spec)
    }
}

pub fn drift_constants(problem: &SodeProblem, spec: &LyapunovSpec) -> Result<DriftConstants> {
    if spec.is_trapezoidal() {
        return Err(Error::invalid(
            "geometric drift constants need theta > 1/2; theta = 1/2 only has the weak drift condition",
        ));
    }
    let LyapunovSpec { theta, lambda, tau } = *spec;
    let l3t = problem.l3 * tau;
    let denom = 1.0 + (1.0 - theta + lambda) * l3t;
    let rho = (1.0 + (1.0 - theta) * l3t) / denom;
    let kappa = problem.l2 * tau + lambda * l3t / denom;
    Ok(DriftConstants { rho, kappa })
}

/// Right-hand side of the one-step drift inequality at `x`.
pub fn drift_bound(x: &[f64], problem: &SodeProblem, spec: &LyapunovSpec) -> Result<f64> {
    if spec.is_trapezoidal() {
        Ok(v_half(x, problem, spec.tau)? + problem.l2 * spec.tau - problem.l3 * norm_sq(x) * spec.tau)
    } else {
        let c = drift_constants(problem, spec)?;
        Ok(c.rho * v_theta(x, problem, spec)? + c.kappa)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftVerdict {
    pub x: Vec<f64>,
    /// `V(x)` at the starting point.
    pub v: f64,
    pub lhs_estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub passed: bool,
}

impl DriftVerdict {
    pub const CSV_HEADER: &'static str = "x,V,lhs_estimate,std_error,bound,passed";

    pub fn new(x: Vec<f64>, v: f64, lhs_estimate: f64, std_error: f64, bound: f64) -> Self {
        Self {
            passed: lhs_estimate <= bound + SE_BAND * std_error,
            x,
            v,
            lhs_estimate,
            std_error,
            bound,
        }
    }

    /// `x` is written as its coordinates joined by `;`.
    pub fn csv_row(&self) -> String {
        let x: Vec<String> = self.x.iter().map(f64::to_string).collect();
        format!(
            "{},{},{},{},{},{}",
            x.join(";"),
            self.v,
            self.lhs_estimate,
            self.std_error,
            self.bound,
            self.passed
        )
    }
}

fn check_paths(mc_paths: usize) -> Result<()> {
    if mc_paths < 1000 {
        return Err(Error::invalid(format!("at least 1000 Monte Carlo paths required (got {mc_paths})")));
    }
    Ok(())
}

/// Monte Carlo check of the one-step drift inequality at `x`; path `i` draws
/// its increment from stream `(seed, i)`.
pub fn verify_drift_mc(
    x: &[f64],
    problem: &SodeProblem,
    spec: &LyapunovSpec,
    mc_paths: usize,
    seed: u64,
) -> Result<DriftVerdict> {
    check_paths(mc_paths)?;
    let stepper = spec.stepper(problem)?;
    let m = problem.noise_dim();
    let moments = path_moments(mc_paths, 1, |p, out| {
        let mut noise = NoiseStream::new(seed, p as u64, m);
        let mut dw = vec![0.0; m];
        noise.increment(0, spec.tau, &mut dw);
        let y = stepper.step(x, &dw)?;
        out[0] = lyapunov_value(&y, problem, spec)?;
        Ok(())
    })?;
    Ok(DriftVerdict::new(
        x.to_vec(),
        lyapunov_value(x, problem, spec)?,
        moments.mean(0),
        moments.std_error(0),
        drift_bound(x, problem, spec)?,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayPoint {
    pub step: usize,
    pub ev_estimate: f64,
    pub std_error: f64,
    /// `rho^k V(x0) + kappa / (1 - rho)`.
    pub bound: f64,
    pub passed: bool,
}

impl DecayPoint {
    pub const CSV_HEADER: &'static str = "n,EV_estimate,std_error,bound,passed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.ev_estimate, self.std_error, self.bound, self.passed
        )
    }
}

/// Tracks `E V_theta(X_k)` for `k = 0..=n` against the iterated drift bound.
pub fn verify_geometric_decay(
    x0: &[f64],
    problem: &SodeProblem,
    spec: &LyapunovSpec,
    n: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<Vec<DecayPoint>> {
    let consts = drift_constants(problem, spec)?;
    let v0 = v_theta(x0, problem, spec)?;
    let point = |step: usize, ev: f64, se: f64| {
        let bound = consts.rho.powi(step as i32) * v0 + consts.stationary_level();
        DecayPoint {
            step,
            ev_estimate: ev,
            std_error: se,
            bound,
            passed: ev <= bound + SE_BAND * se,
        }
    };
    if n == 0 {
        return Ok(vec![point(0, v0, 0.0)]);
    }
    check_paths(mc_paths)?;
    let stepper = spec.stepper(problem)?;
    let m = problem.noise_dim();
    let moments = path_moments(mc_paths, n + 1, |p, out| {
        let mut noise = NoiseStream::new(seed, p as u64, m);
        let mut ws = stepper.workspace();
        let mut failure = None;
        stepper.run_path(x0, n, &mut noise, &mut ws, |k, x| {
            if failure.is_some() {
                return;
            }
            match v_theta(x, problem, spec) {
                Ok(v) => out[k] = v,
                Err(e) => failure = Some(e),
            }
        })?;
        failure.map_or(Ok(()), Err)
    })?;
    Ok((0..=n).map(|k| point(k, moments.mean(k), moments.std_error(k))).collect())
}

/// Radius of the small set `{|x|^2 <= (L2 tau + 1) / (L3 tau)}`.
pub fn small_set_radius(problem: &SodeProblem, tau: f64) -> f64 {
    ((problem.l2 * tau + 1.0) / (problem.l3 * tau)).sqrt()
}

/// One-step density `p(x, .)` with the `x`-dependent Gaussian factors
/// precomputed.
#[derive(Clone, Debug)]
pub struct TransitionDensity {
    stepper: Stepper,
    mean: DVector<f64>,
    /// Lower Cholesky factor of `sigma(x) sigma(x)^T tau`.
    chol_lower: DMatrix<f64>,
    log_norm: f64,
    std_dev_1d: f64,
}

impl TransitionDensity {
    pub fn new(x: &[f64], problem: &SodeProblem, config: &StmConfig) -> Result<Self> {
        let stepper = Stepper::new(problem.clone(), *config)?;
        let d = problem.dim();
        let mean = DVector::from_vec(stepper.explicit_part(x)?);
        let cov = problem.diffusion_covariance(x)? * config.tau;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate { point: x.to_vec() })?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::Degenerate { point: x.to_vec() });
        }
        Ok(Self {
            std_dev_1d: cov[(0, 0)].sqrt(),
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            chol_lower: l,
            mean,
            stepper,
        })
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        let problem = self.stepper.problem();
        let d = problem.dim();
        let hb = DVector::from_vec(self.stepper.hat_b(y)?);
        let z = hb - &self.mean;
        let white = self
            .chol_lower
            .solve_lower_triangular(&z)
            .ok_or_else(|| Error::Degenerate { point: y.to_vec() })?;
        let w = self.stepper.config().theta * self.stepper.config().tau;
        let jac = DMatrix::from_row_slice(d, d, &problem.jacobian(y)?);
        let jac_hat = DMatrix::identity(d, d) - jac * w;
        let det = jac_hat.determinant().abs();
        if det == 0.0 {
            return Ok(0.0);
        }
        Ok((self.log_norm - 0.5 * white.norm_squared() + det.ln()).exp())
    }

    /// Preimage under `hat_b` of `mean + k s` (scalar problems).
    fn preimage(&self, k: f64) -> Result<f64> {
        let target = self.mean[0] + k * self.std_dev_1d;
        Ok(self.stepper.implicit_solve(&[target], &[target])?[0])
    }

    /// `[y_lo, y_hi]` mapping onto `mean -/+ 10 s` (scalar problems).
    pub fn support_1d(&self) -> Result<(f64, f64)> {
        ensure_scalar(self.stepper.problem(), "density support")?;
        Ok((self.preimage(-10.0)?, self.preimage(10.0)?))
    }
}

fn ensure_scalar(problem: &SodeProblem, what: &'static str) -> Result<()> {
    if problem.dim() == 1 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension {
            dim: problem.dim(),
            what,
        })
    }
}

pub fn transition_density(x: &[f64], y: &[f64], problem: &SodeProblem, config: &StmConfig) -> Result<f64> {
    TransitionDensity::new(x, problem, config)?.eval(y)
}

/// `int p(x, y) dy` by adaptive Gauss–Kronrod over the preimage of
/// `b~(x) -/+ 10 s`.
pub fn density_normalization(x: &[f64], problem: &SodeProblem, config: &StmConfig) -> Result<f64> {
    let dens = TransitionDensity::new(x, problem, config)?;
    let (lo, hi) = dens.support_1d()?;
    let mut err = None;
    let mass = integrate(
        |y| match dens.eval(&[y]) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
        1e-12,
        0.0,
    );
    if let Some(e) = err {
        return Err(e);
    }
    mass
}

/// Piecewise-linear inverse CDF of `p(x, .)` built by cellwise quadrature.
#[derive(Clone, Debug)]
pub struct DensityCdf {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl DensityCdf {
    pub fn new(x: &[f64], problem: &SodeProblem, config: &StmConfig, cells: usize) -> Result<Self> {
        let dens = TransitionDensity::new(x, problem, config)?;
        let (lo, hi) = dens.support_1d()?;
        let cells = cells.max(1);
        let h = (hi - lo) / cells as f64;
        let nodes: Vec<f64> = (0..=cells).map(|i| lo + h * i as f64).collect();
        let masses: Vec<f64> = nodes
            .par_windows(2)
            .map(|w| {
                let mut err = None;
                let mut f = |y: f64| {
                    dens.eval(&[y]).unwrap_or_else(|e| {
                        err.get_or_insert(e);
                        0.0
                    })
                };
                let (v, _) = gk15(&mut f, w[0], w[1]);
                err.map_or(Ok(v), Err)
            })
            .collect::<Result<_>>()?;
        let mut cdf = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in masses {
            acc += m;
            cdf.push(acc);
        }
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { nodes, cdf })
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.nodes[i - 1] + t.clamp(0.0, 1.0) * (self.nodes[i] - self.nodes[i - 1])
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut u = uniform_stream(seed, 0xcdf);
        (0..count).map(|_| self.quantile(u())).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinorizationReport {
    pub small_set_radius: f64,
    /// `(b - a) * min p(x, y)` over the grid: a lower bound on the mass the
    /// one-step kernel from any `x` in the small set puts on the probe set.
    pub measure_lower_bound: f64,
    pub probe_set: (f64, f64),
    pub grid_resolution: usize,
    pub min_density: f64,
    pub passed: bool,
}

impl MinorizationReport {
    pub const CSV_HEADER: &'static str =
        "small_set_radius,probe_lower,probe_upper,grid,min_density,measure_lower_bound,passed";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            self.small_set_radius,
            self.probe_set.0,
            self.probe_set.1,
            self.grid_resolution,
            self.min_density,
            self.measure_lower_bound,
            self.passed
        );
        s
    }
}

/// Grid minimum of `p(x, y)` over `x` in the small set and `y` at the
/// midpoints of `grid` cells of `[a, b]` (scalar problems only).
pub fn minorization_probe(
    problem: &SodeProblem,
    config: &StmConfig,
    probe_interval: (f64, f64),
    grid: usize,
) -> Result<MinorizationReport> {
    ensure_scalar(problem, "minorization probe")?;
    let (a, b) = probe_interval;
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(Error::invalid(format!("probe interval [{a}, {b}] must be bounded and ordered")));
    }
    if grid < 2 {
        return Err(Error::invalid("minorization grid needs at least 2 points"));
    }
    let radius = small_set_radius(problem, config.tau);
    let xs: Vec<f64> = (0..grid)
        .map(|i| -radius + 2.0 * radius * i as f64 / (grid - 1) as f64)
        .collect();
    let ys: Vec<f64> = (0..grid).map(|j| a + (b - a) * (j as f64 + 0.5) / grid as f64).collect();
    let min_density = xs
        .par_iter()
        .map(|&x| {
            let dens = TransitionDensity::new(&[x], problem, config)?;
            if a == b {
                return Ok(f64::INFINITY);
            }
            ys.iter()
                .map(|&y| dens.eval(&[y]))
                .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let (min_density, measure) = if a == b {
        (0.0, 0.0)
    } else {
        (min_density, (b - a) * min_density)
    };
    Ok(MinorizationReport {
        small_set_radius: radius,
        measure_lower_bound: measure,
        probe_set: (a, b),
        grid_resolution: grid,
        min_density,
        passed: measure > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ex1() -> SodeProblem {
        SodeProblem::example1()
    }

    #[test]
    fn spec_validation() {
        assert!(LyapunovSpec::new(0.4, 0.0, 0.1).is_err());
        assert!(LyapunovSpec::new(0.5, 0.1, 0.1).is_err());
        assert!(LyapunovSpec::new(0.75, 0.6, 0.1).is_err());
        assert!(LyapunovSpec::new(0.75, 0.0, 0.1).is_err());
        assert!(LyapunovSpec::new(0.75, 0.5, 0.1).is_ok());
        assert_eq!(LyapunovSpec::with_default_lambda(0.5, 0.1).unwrap().lambda, 0.0);
        assert_eq!(LyapunovSpec::with_default_lambda(1.0, 0.1).unwrap().lambda, 1.0);
    }

    #[test]
    fn v_theta_values() {
        let s = LyapunovSpec::new(1.0, 1.0, 0.1).unwrap();
        assert_eq!(v_theta(&[0.0], &ex1(), &s).unwrap(), 1.0);
        assert_abs_diff_eq!(v_theta(&[2.0], &ex1(), &s).unwrap(), 7.76, epsilon = 1e-12);
        let s = LyapunovSpec::new(0.75, 0.5, 0.1).unwrap();
        assert_abs_diff_eq!(v_theta(&[1.0], &ex1(), &s).unwrap(), 2.0, epsilon = 1e-14);
        assert!(v_theta(&[1.0], &ex1(), &LyapunovSpec::new(0.5, 0.0, 0.1).unwrap()).is_err());
    }

    #[test]
    fn v_half_values() {
        assert_eq!(v_half(&[0.0], &ex1(), 0.1).unwrap(), 1.0);
        assert_abs_diff_eq!(v_half(&[1.0], &ex1(), 0.1).unwrap(), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v_half(&[2.0], &ex1(), 0.1).unwrap(), 6.29, epsilon = 1e-12);
    }

    #[test]
    fn drift_constant_values() {
        let c = drift_constants(&ex1(), &LyapunovSpec::new(1.0, 1.0, 0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(c.rho, 1.0 / 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.kappa, 0.3 + 0.1 / 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.stationary_level(), 4.3, epsilon = 1e-12);

        let c = drift_constants(&ex1(), &LyapunovSpec::new(0.75, 0.5, 0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(c.rho, 1.025 / 1.075, epsilon = 1e-15);

        let c = drift_constants(&ex1(), &LyapunovSpec::new(1.0, 1e-12, 0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(c.rho, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.kappa, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn drift_mc_at_origin() {
        let s = LyapunovSpec::new(1.0, 1.0, 0.1).unwrap();
        let v = verify_drift_mc(&[0.0], &ex1(), &s, 100_000, 1).unwrap();
        assert_abs_diff_eq!(v.bound, 1.3, epsilon = 1e-12);
        assert!(v.passed, "{v:?}");
    }

    #[test]
    fn drift_mc_trapezoidal() {
        let s = LyapunovSpec::new(0.5, 0.0, 0.1).unwrap();
        let v = verify_drift_mc(&[2.0], &ex1(), &s, 100_000, 2).unwrap();
        assert_abs_diff_eq!(v.bound, 6.19, epsilon = 1e-12);
        assert!(v.passed, "{v:?}");
    }

    #[test]
    fn drift_mc_deterministic_identity_step() {
        let p = SodeProblem::new(
            1,
            1,
            Arc::new(|_, out| out[0] = 0.0),
            Arc::new(|_, out| out[0] = 0.0),
            0.0,
            1.0,
            1.0,
        )
        .unwrap();
        let s = LyapunovSpec::new(1.0, 1.0, 0.1).unwrap();
        let c = drift_constants(&p, &s).unwrap();
        // V(x) = x^2 + 1; fixed point of V <= rho V + kappa at kappa / (1 - rho).
        let level = c.stationary_level();
        for (x, expect) in [(0.5, true), ((level - 1.0).sqrt() + 0.5, false)] {
            let v = verify_drift_mc(&[x], &p, &s, 1000, 0).unwrap();
            assert_abs_diff_eq!(v.lhs_estimate, v.v, epsilon = 1e-12);
            assert!(v.std_error < 1e-6);
            assert_eq!(v.passed, expect, "x={x} {v:?}");
        }
    }

    #[test]
    fn drift_mc_needs_enough_paths() {
        let s = LyapunovSpec::new(1.0, 1.0, 0.1).unwrap();
        assert!(verify_drift_mc(&[0.0], &ex1(), &s, 10, 0).is_err());
    }

    #[test]
    fn decay_from_origin_and_zero_steps() {
        let s = LyapunovSpec::new(1.0, 1.0, 0.1).unwrap();
        let c = drift_constants(&ex1(), &s).unwrap();
        let pts = verify_geometric_decay(&[0.0], &ex1(), &s, 20, 2000, 0).unwrap();
        assert_eq!(pts.len(), 21);
        for p in &pts {
            assert_abs_diff_eq!(p.bound, c.rho.powi(p.step as i32) + c.stationary_level(), epsilon = 1e-12);
            assert!(p.passed);
        }
        let pts = verify_geometric_decay(&[15.0], &ex1(), &s, 0, 2000, 0).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].ev_estimate, v_theta(&[15.0], &ex1(), &s).unwrap());
    }

    #[test]
    fn small_set_radius_values() {
        assert_abs_diff_eq!(small_set_radius(&ex1(), 0.1), 13f64.sqrt(), epsilon = 1e-14);
        let unit = ex1().with_constants(3.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(small_set_radius(&unit, 0.999_999), 2f64.sqrt(), epsilon = 1e-6);
        let r = small_set_radius(&ex1(), 1e-6);
        assert_abs_diff_eq!(r, 1e3 * (3e-6f64 + 1.0).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn density_at_origin() {
        let cfg = StmConfig::new(1.0, 0.1).unwrap();
        let p = transition_density(&[0.0], &[0.0], &ex1(), &cfg).unwrap();
        assert_abs_diff_eq!(p, 0.9 / (0.2 * PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(p, 1.135415, epsilon = 1e-5);
    }

    #[test]
    fn density_far_tail_underflows_to_zero() {
        let cfg = StmConfig::new(1.0, 0.1).unwrap();
        for y in [1e3, -1e3] {
            let p = transition_density(&[0.0], &[y], &ex1(), &cfg).unwrap();
            assert!(p < 1e-300);
            assert!(p >= 0.0);
        }
    }

    #[test]
    fn density_normalizes() {
        for theta in [0.5, 0.75, 1.0] {
            let cfg = StmConfig::new(theta, 0.1).unwrap();
            for x in [-2.0, 0.0, 2.0] {
                let mass = density_normalization(&[x], &ex1(), &cfg).unwrap();
                assert!((mass - 1.0).abs() <= 1e-6, "theta={theta} x={x} mass={mass}");
            }
        }
    }

    #[test]
    fn density_normalizes_for_additive_noise() {
        let cfg = StmConfig::new(1.0, 0.3).unwrap();
        let mass = density_normalization(&[1.5], &SodeProblem::double_well_additive(), &cfg).unwrap();
        assert!((mass - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn degenerate_diffusion_is_rejected() {
        let p = SodeProblem::new(
            1,
            1,
            Arc::new(|x, out| out[0] = -x[0]),
            Arc::new(|_, out| out[0] = 0.0),
            0.0,
            1.0,
            1.0,
        )
        .unwrap();
        let cfg = StmConfig::new(1.0, 0.1).unwrap();
        assert!(matches!(
            transition_density(&[0.0], &[0.0], &p, &cfg),
            Err(Error::Degenerate { .. })
        ));
        assert!(matches!(
            minorization_probe(&p, &cfg, (-1.0, 1.0), 11),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn minorization_cases() {
        let cfg = StmConfig::new(1.0, 0.1).unwrap();
        let r = minorization_probe(&ex1(), &cfg, (-1.0, 1.0), 201).unwrap();
        assert!(r.passed && r.measure_lower_bound > 0.0, "{r:?}");
        assert_abs_diff_eq!(r.small_set_radius, 13f64.sqrt(), epsilon = 1e-14);

        let r = minorization_probe(&ex1(), &cfg, (0.5, 0.5), 21).unwrap();
        assert_eq!(r.measure_lower_bound, 0.0);
        assert!(!r.passed);
    }

    #[test]
    fn minorization_requires_scalar_state() {
        let p = SodeProblem::new(
            2,
            2,
            Arc::new(|x, out| out.copy_from_slice(&[-x[0], -x[1]])),
            Arc::new(|_, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
            0.0,
            1.0,
            1.0,
        )
        .unwrap();
        let cfg = StmConfig::new(1.0, 0.1).unwrap();
        assert!(matches!(
            minorization_probe(&p, &cfg, (-1.0, 1.0), 11),
            Err(Error::UnsupportedDimension { .. })
        ));
        // The density itself works in any dimension: Gaussian at its mean.
        let d = transition_density(&[0.0, 0.0], &[0.0, 0.0], &p, &cfg).unwrap();
        assert_abs_diff_eq!(d, 1.1 * 1.1 / (2.0 * PI * 0.1), epsilon = 1e-12);
    }

    #[test]
    fn cdf_quantiles_are_monotone() {
        let cfg = StmConfig::new(1.0, 0.1).unwrap();
        let cdf = DensityCdf::new(&[2.0], &ex1(), &cfg, 2000).unwrap();
        let qs: Vec<f64> = (1..100).map(|i| cdf.quantile(i as f64 / 100.0)).collect();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn drift_constants_in_range(theta in 0.5001f64..=1.0, frac in 0.0001f64..=1.0, tau in 0.001f64..0.999, l3 in 0.01f64..50.0) {
            let lambda = frac * (2.0 * theta - 1.0);
            let p = ex1().with_constants(3.0, 3.0, l3).unwrap();
            let spec = LyapunovSpec::new(theta, lambda, tau).unwrap();
            let c = drift_constants(&p, &spec).unwrap();
            prop_assert!(c.rho > 0.0 && c.rho < 1.0);
            prop_assert!(c.kappa > 0.0);
            let rho = (1.0 + (1.0 - theta) * l3 * tau) / (1.0 + (1.0 - theta + lambda) * l3 * tau);
            prop_assert!((c.rho - rho).abs() <= 1e-14);
            prop_assert!((c.kappa - (3.0 * tau + 1.0 - rho)).abs() <= 1e-13);
        }

        #[test]
        fn v_theta_is_coercive(x in -50.0f64..50.0, theta in 0.5001f64..=1.0, frac in 0.0001f64..=1.0) {
            let lambda = frac * (2.0 * theta - 1.0);
            let spec = LyapunovSpec::new(theta, lambda, 0.1).unwrap();
            let p = ex1();
            let w = (1.0 - theta + lambda) * 0.1;
            let lower = (1.0 + w * p.l3) * x * x - p.l2 * w;
            let v = v_theta(&[x], &p, &spec).unwrap();
            prop_assert!(v >= lower - 1e-9 * v.abs().max(1.0));
        }
    }
}
