//! SODE problem descriptions `dX = b(X) dt + sigma(X) dW` and sampled checks
//! of the structural assumptions the certificates rely on: coupled
//! monotonicity, coupled coercivity, nondegenerate diffusion, and the
//! auxiliary inequality used to build the theta-method Lyapunov function.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dist_sq, dot, frobenius_sq, norm_sq};
use crate::rng::uniform_stream;

/// `f(x, out)`: evaluates a vector- or matrix-valued coefficient into `out`.
pub type CoefficientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Central-difference step used when no drift Jacobian is supplied.
pub const FD_STEP: f64 = 1e-6;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Clone)]
pub struct SodeProblem {
    name: String,
    dim: usize,
    noise_dim: usize,
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    drift_jacobian: Option<CoefficientFn>,
    /// Monotonicity constant.
    pub l1: f64,
    /// Coercivity constants, both positive.
    pub l2: f64,
    pub l3: f64,
}

impl fmt::Debug for SodeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SodeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("has_jacobian", &self.drift_jacobian.is_some())
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .field("l3", &self.l3)
            .finish()
    }
}

impl SodeProblem {
    /// `drift` writes `dim` values; `diffusion` writes a row-major
    /// `dim x noise_dim` matrix.
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: CoefficientFn,
        diffusion: CoefficientFn,
        l1: f64,
        l2: f64,
        l3: f64,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::invalid("state and noise dimensions must be positive"));
        }
        if !l1.is_finite() {
            return Err(Error::invalid("L1 must be finite"));
        }
        if !(l2 > 0.0 && l2.is_finite()) || !(l3 > 0.0 && l3.is_finite()) {
            return Err(Error::invalid(format!(
                "L2 and L3 must be positive (got L2={l2}, L3={l3})"
            )));
        }
        Ok(Self {
            name: "custom".into(),
            dim,
            noise_dim,
            drift,
            diffusion,
            drift_jacobian: None,
            l1,
            l2,
            l3,
        })
    }

    /// Supplies the analytic drift Jacobian (row-major `dim x dim`).
    pub fn with_jacobian(mut self, jac: CoefficientFn) -> Self {
        self.drift_jacobian = Some(jac);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Replaces the claimed constants, keeping the coefficients.
    pub fn with_constants(mut self, l1: f64, l2: f64, l3: f64) -> Result<Self> {
        let checked = Self::new(
            self.dim,
            self.noise_dim,
            self.drift.clone(),
            self.diffusion.clone(),
            l1,
            l2,
            l3,
        )?;
        self.l1 = checked.l1;
        self.l2 = checked.l2;
        self.l3 = checked.l3;
        Ok(self)
    }

    /// `b(x) = x - x^3`, `sigma(x) = sqrt(x^2 + 1)` with `L1 = 3, L2 = 3, L3 = 1`.
    pub fn example1() -> Self {
        Self::new(
            1,
            1,
            Arc::new(|x, out| out[0] = x[0] - x[0] * x[0] * x[0]),
            Arc::new(|x, out| out[0] = (x[0] * x[0] + 1.0).sqrt()),
            3.0,
            3.0,
            1.0,
        )
        .expect("valid preset")
        .with_jacobian(Arc::new(|x, out| out[0] = 1.0 - 3.0 * x[0] * x[0]))
        .with_name("example1")
    }

    /// `b(x) = x - x^3` with unit additive noise.
    ///
    /// `2(x-y)^2 (1 - x^2 - xy - y^2) <= 2|x-y|^2` gives `L1 = 2`, and
    /// `2x^2 - 2x^4 + 1 <= 17/8 - x^2` (since `max(3x^2 - 2x^4) = 9/8`)
    /// gives `L2 = 17/8`, `L3 = 1`.
    pub fn double_well_additive() -> Self {
        Self::new(
            1,
            1,
            Arc::new(|x, out| out[0] = x[0] - x[0] * x[0] * x[0]),
            Arc::new(|_, out| out[0] = 1.0),
            2.0,
            17.0 / 8.0,
            1.0,
        )
        .expect("valid preset")
        .with_jacobian(Arc::new(|x, out| out[0] = 1.0 - 3.0 * x[0] * x[0]))
        .with_name("double-well-additive")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            "double-well-additive" => Ok(Self::double_well_additive()),
            other => Err(Error::usage(
                "preset",
                format!("unknown SODE preset '{other}' (expected example1 or double-well-additive)"),
            )),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.drift_jacobian.is_some()
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.drift)(x, out);
        ensure_finite(out, "drift", x)
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.diffusion)(x, out);
        ensure_finite(out, "diffusion", x)
    }

    /// Drift Jacobian; central differences with step [`FD_STEP`] when no
    /// analytic Jacobian was supplied.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(jac) = &self.drift_jacobian {
            jac(x, out);
            return ensure_finite(out, "drift jacobian", x);
        }
        let d = self.dim;
        let mut probe = x.to_vec();
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        for j in 0..d {
            probe[j] = x[j] + FD_STEP;
            self.drift_into(&probe, &mut plus)?;
            probe[j] = x[j] - FD_STEP;
            self.drift_into(&probe, &mut minus)?;
            probe[j] = x[j];
            for i in 0..d {
                out[i * d + j] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
            }
        }
        Ok(())
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(x, &mut out)?;
        Ok(out)
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut out)?;
        Ok(out)
    }

    /// `sigma(x) sigma(x)^T` as a `dim x dim` matrix.
    pub fn diffusion_covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.diffusion(x)?;
        let sigma = DMatrix::from_row_slice(self.dim, self.noise_dim, &s);
        Ok(&sigma * sigma.transpose())
    }
}

/// Where assumption checks are evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleSource {
    /// Halton points for the first half, seeded uniform draws for the rest,
    /// all inside `[lower, upper]^d` (or `^2d` for pairs).
    Box {
        lower: f64,
        upper: f64,
        count: usize,
        seed: u64,
    },
    Points(Vec<Vec<f64>>),
    Pairs(Vec<(Vec<f64>, Vec<f64>)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub source: SampleSource,
    pub tolerance: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self::in_box(-10.0, 10.0, 10_000)
    }
}

impl SampleSpec {
    pub fn in_box(lower: f64, upper: f64, count: usize) -> Self {
        Self {
            source: SampleSource::Box {
                lower,
                upper,
                count,
                seed: 0,
            },
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn points(points: Vec<Vec<f64>>) -> Self {
        Self {
            source: SampleSource::Points(points),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn pairs(pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Self {
            source: SampleSource::Pairs(pairs),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        if let SampleSource::Box { seed, .. } = &mut self.source {
            *seed = new_seed;
        }
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn box_points(lower: f64, upper: f64, count: usize, seed: u64, dim: usize) -> Vec<Vec<f64>> {
        let width = upper - lower;
        let n_halton = count / 2;
        let mut pts: Vec<Vec<f64>> = (0..n_halton)
            .map(|i| {
                (0..dim)
                    .map(|j| lower + width * halton(i as u64 + 1, nth_prime(j)))
                    .collect()
            })
            .collect();
        let mut uniform = uniform_stream(seed, 0x5eed);
        pts.extend((n_halton..count).map(|_| (0..dim).map(|_| lower + width * uniform()).collect()));
        pts
    }

    /// Sample points in `R^dim`.
    pub fn sample_points(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        let pts = match &self.source {
            SampleSource::Box {
                lower,
                upper,
                count,
                seed,
            } => {
                check_box(*lower, *upper)?;
                Self::box_points(*lower, *upper, *count, *seed, dim)
            }
            SampleSource::Points(p) => p.clone(),
            SampleSource::Pairs(p) => p.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect(),
        };
        check_dims(pts.iter(), dim)?;
        Ok(pts)
    }

    /// Sample pairs in `R^dim x R^dim`. Explicit point lists are paired
    /// consecutively.
    pub fn sample_pairs(&self, dim: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = match &self.source {
            SampleSource::Box {
                lower,
                upper,
                count,
                seed,
            } => {
                check_box(*lower, *upper)?;
                Self::box_points(*lower, *upper, *count, *seed, 2 * dim)
                    .into_iter()
                    .map(|mut p| {
                        let y = p.split_off(dim);
                        (p, y)
                    })
                    .collect()
            }
            SampleSource::Points(p) => p
                .chunks(2)
                .filter(|c| c.len() == 2)
                .map(|c| (c[0].clone(), c[1].clone()))
                .collect(),
            SampleSource::Pairs(p) => p.clone(),
        };
        check_dims(pairs.iter().flat_map(|(a, b)| [a, b]), dim)?;
        Ok(pairs)
    }
}

fn check_box(lower: f64, upper: f64) -> Result<()> {
    if lower.is_finite() && upper.is_finite() && lower <= upper {
        Ok(())
    } else {
        Err(Error::invalid(format!("sample box [{lower}, {upper}] must be bounded and ordered")))
    }
}

fn check_dims<'a>(mut pts: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Result<()> {
    match pts.find(|p| p.len() != dim) {
        Some(p) => Err(Error::invalid(format!(
            "sample point has dimension {} but the problem has {dim}",
            p.len()
        ))),
        None => Ok(()),
    }
}

fn nth_prime(n: usize) -> u64 {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    if n < PRIMES.len() {
        return PRIMES[n];
    }
    let mut count = PRIMES.len();
    let mut candidate = 55u64;
    loop {
        if (2..).take_while(|k: &u64| k * k <= candidate).all(|k| !candidate.is_multiple_of(k)) {
            if count == n {
                return candidate;
            }
            count += 1;
        }
        candidate += 2;
    }
}

/// Radical inverse of `index` in `base`.
fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssumptionId {
    /// Coupled monotonicity.
    A1,
    /// Coupled coercivity.
    A2,
    /// Nondegenerate diffusion.
    A3i,
    /// Auxiliary inequality behind the theta-method Lyapunov function.
    LemmaInSTM,
}

impl fmt::Display for AssumptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssumptionId::A1 => "A1",
            AssumptionId::A2 => "A2",
            AssumptionId::A3i => "A3i",
            AssumptionId::LemmaInSTM => "LemmaInSTM",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub assumption: AssumptionId,
    pub passed: bool,
    /// Smallest slack over the sample set.
    pub worst_margin: f64,
    /// Point attaining `worst_margin`; for pairs, `x` followed by `y`.
    pub worst_point: Vec<f64>,
    pub samples_used: usize,
    pub tolerance: f64,
}

impl AssumptionReport {
    pub const CSV_HEADER: &'static str = "assumption_id,passed,worst_margin,samples_used";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.assumption, self.passed, self.worst_margin, self.samples_used
        )
    }
}

/// Min-reduction of per-sample margins, evaluated in parallel.
fn worst_of<T: Sync>(
    samples: &[T],
    margin: impl Fn(&T) -> Result<(f64, Vec<f64>)> + Sync,
) -> Result<(f64, Vec<f64>)> {
    let results: Vec<(f64, Vec<f64>)> = samples.par_iter().map(&margin).collect::<Result<_>>()?;
    Ok(results
        .into_iter()
        .fold((f64::INFINITY, Vec::new()), |best, cur| {
            if cur.0 < best.0 {
                cur
            } else {
                best
            }
        }))
}

fn report(
    assumption: AssumptionId,
    (worst_margin, worst_point): (f64, Vec<f64>),
    samples_used: usize,
    tolerance: f64,
    passed: impl FnOnce(f64) -> bool,
) -> AssumptionReport {
    AssumptionReport {
        assumption,
        passed: samples_used > 0 && passed(worst_margin),
        worst_margin,
        worst_point,
        samples_used,
        tolerance,
    }
}

/// Slack of `2<b(x)-b(y), x-y> + ||sigma(x)-sigma(y)||^2 <= L1 |x-y|^2`.
pub fn check_monotonicity(problem: &SodeProblem, sampler: &SampleSpec) -> Result<AssumptionReport> {
    let pairs = sampler.sample_pairs(problem.dim())?;
    let worst = worst_of(&pairs, |(x, y)| {
        let (bx, by) = (problem.drift(x)?, problem.drift(y)?);
        let (sx, sy) = (problem.diffusion(x)?, problem.diffusion(y)?);
        let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let lhs = 2.0 * dot(&db, &dx) + dist_sq(&sx, &sy);
        let m = problem.l1 * norm_sq(&dx) - lhs;
        Ok((m, x.iter().chain(y).copied().collect()))
    })?;
    let tol = sampler.tolerance;
    Ok(report(AssumptionId::A1, worst, pairs.len(), tol, |m| m >= -tol))
}

/// Slack of `2<b(x), x> + ||sigma(x)||^2 <= L2 - L3 |x|^2`.
pub fn check_coercivity(problem: &SodeProblem, sampler: &SampleSpec) -> Result<AssumptionReport> {
    let pts = sampler.sample_points(problem.dim())?;
    let worst = worst_of(&pts, |x| {
        let b = problem.drift(x)?;
        let s = problem.diffusion(x)?;
        let m = problem.l2 - problem.l3 * norm_sq(x) - 2.0 * dot(&b, x) - frobenius_sq(&s);
        Ok((m, x.clone()))
    })?;
    let tol = sampler.tolerance;
    Ok(report(AssumptionId::A2, worst, pts.len(), tol, |m| m >= -tol))
}

/// Smallest eigenvalue of `sigma sigma^T`; passes only when it is strictly
/// above the tolerance.
pub fn check_nondegeneracy(problem: &SodeProblem, sampler: &SampleSpec) -> Result<AssumptionReport> {
    let pts = sampler.sample_points(problem.dim())?;
    let worst = worst_of(&pts, |x| {
        let cov = problem.diffusion_covariance(x)?;
        let min_eig = cov.symmetric_eigenvalues().min();
        Ok((min_eig, x.clone()))
    })?;
    let tol = sampler.tolerance;
    Ok(report(AssumptionId::A3i, worst, pts.len(), tol, |m| m > tol))
}

/// Slack of
/// `|x - beta b|^2 + beta L2 + (C rho - beta)||sigma||^2 <= C (|x - rho b|^2 + rho L2)`
/// with `C = (1 + beta L3) / (1 + rho L3)`.
pub fn check_lemma_inequality(
    problem: &SodeProblem,
    rho: f64,
    beta: f64,
    sampler: &SampleSpec,
) -> Result<AssumptionReport> {
    if !(beta >= 0.0 && rho >= beta && rho.is_finite()) {
        return Err(Error::invalid(format!(
            "lemma inequality needs rho >= beta >= 0 (got rho={rho}, beta={beta})"
        )));
    }
    let c = (1.0 + beta * problem.l3) / (1.0 + rho * problem.l3);
    let pts = sampler.sample_points(problem.dim())?;
    let worst = worst_of(&pts, |x| {
        let b = problem.drift(x)?;
        let s = problem.diffusion(x)?;
        let shifted = |w: f64| -> f64 { x.iter().zip(&b).map(|(xi, bi)| (xi - w * bi).powi(2)).sum() };
        let rhs = c * (shifted(rho) + rho * problem.l2);
        let lhs = shifted(beta) + beta * problem.l2 + (c * rho - beta) * frobenius_sq(&s);
        Ok((rhs - lhs, x.clone()))
    })?;
    let tol = sampler.tolerance;
    Ok(report(AssumptionId::LemmaInSTM, worst, pts.len(), tol, |m| m >= -tol))
}
