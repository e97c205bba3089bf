//! Lyapunov certificate of the Galerkin drift-implicit Euler scheme:
//!
//! ```text
//! V(x)  = ||x||^2 + c ||grad x||^2 + 1
//! D     = 1 + 2 (lambda_1 - K2 - eps) tau
//! c     = 2 eps tau / (D lambda_1)
//! rho   = (1 + K7 tau) / D
//! kappa = (2 K3 + K8) tau / D + (1 - rho)
//! ```
//!
//! with `E[V(X_{j+1}) | X_j] <= rho V(X_j) + kappa`.

use crate::error::{Error, Result};
use crate::lyapunov::{DriftConstants, DriftVerdict};
use crate::montecarlo::path_moments;
use crate::rng::NoiseStream;

use super::dieg::{qwiener_increment, DiegStepper};
use super::problem::SpdeProblem;
use super::space::{SpectralField, SpectralSpace};

fn check_margin(space: &SpectralSpace, problem: &SpdeProblem, eps_margin: f64) -> Result<()> {
    let upper = space.lambda1() - problem.constants.k2;
    if !(eps_margin > 0.0 && eps_margin < upper) {
        return Err(Error::invalid(format!(
            "eps_margin must lie in (0, λ1 - K2) = (0, {upper}) (got {eps_margin})"
        )));
    }
    Ok(())
}

fn denominator(space: &SpectralSpace, problem: &SpdeProblem, tau: f64, eps_margin: f64) -> f64 {
    1.0 + 2.0 * (space.lambda1() - problem.constants.k2 - eps_margin) * tau
}

/// Weight `c` of the gradient term in `V`.
pub fn gradient_weight(space: &SpectralSpace, problem: &SpdeProblem, tau: f64, eps_margin: f64) -> Result<f64> {
    check_margin(space, problem, eps_margin)?;
    Ok(2.0 * eps_margin * tau / (denominator(space, problem, tau, eps_margin) * space.lambda1()))
}

pub fn lyapunov_spde(
    x: &SpectralField,
    space: &SpectralSpace,
    problem: &SpdeProblem,
    tau: f64,
    eps_margin: f64,
) -> Result<f64> {
    let c = gradient_weight(space, problem, tau, eps_margin)?;
    Ok(x.norm_sq() + c * x.grad_norm_sq(space) + 1.0)
}

fn coeff_lyapunov(x: &[f64], eigenvalues: &[f64], c: f64) -> f64 {
    x.iter().zip(eigenvalues).map(|(v, l)| v * v * (1.0 + c * l)).sum::<f64>() + 1.0
}

pub fn drift_constants_spde(
    problem: &SpdeProblem,
    space: &SpectralSpace,
    tau: f64,
    eps_margin: f64,
) -> Result<DriftConstants> {
    let k = &problem.constants;
    let l1 = space.lambda1();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1) (got {tau})")));
    }
    if k.k2 + k.k7 / 2.0 >= l1 {
        return Err(Error::invalid(format!(
            "K2 + K7/2 < λ1 violated: {} + {}/2 >= {l1}",
            k.k2, k.k7
        )));
    }
    if (k.k1 - l1) * tau >= 1.0 {
        return Err(Error::invalid(format!(
            "(K1 - λ1)·τ < 1 violated: ({} - {l1}) · {tau} >= 1",
            k.k1
        )));
    }
    check_margin(space, problem, eps_margin)?;
    let d = denominator(space, problem, tau, eps_margin);
    let rho = (1.0 + k.k7 * tau) / d;
    Ok(DriftConstants {
        rho,
        kappa: (2.0 * k.k3 + k.k8) * tau / d + (1.0 - rho),
    })
}

/// Monte Carlo check of the one-step drift inequality from `x`; path `i`
/// draws its noise from stream `(seed, i)`.
pub fn verify_drift_mc_spde(
    x: &SpectralField,
    stepper: &DiegStepper,
    eps_margin: f64,
    mc_paths: usize,
    seed: u64,
) -> Result<DriftVerdict> {
    if mc_paths < 1000 {
        return Err(Error::invalid(format!("at least 1000 Monte Carlo paths required (got {mc_paths})")));
    }
    let (space, problem, tau) = (stepper.space(), stepper.problem(), stepper.tau());
    if x.modes() != space.modes() {
        return Err(Error::invalid(format!(
            "field has {} modes but the space has {}",
            x.modes(),
            space.modes()
        )));
    }
    let constants = drift_constants_spde(problem, space, tau, eps_margin)?;
    let c = gradient_weight(space, problem, tau, eps_margin)?;
    let n = space.modes();
    let moments = path_moments(mc_paths, 1, |p, out| {
        let mut noise = NoiseStream::new(seed, p as u64, n);
        let dw = qwiener_increment(space, &problem.q_spectrum, tau, &mut noise, 0)?;
        let mut ws = stepper.workspace();
        let mut y = x.coeffs.clone();
        stepper.step_into(&x.coeffs, &dw.coeffs, &mut y, &mut ws)?;
        out[0] = coeff_lyapunov(&y, space.eigenvalues(), c);
        Ok(())
    })?;
    let v = lyapunov_spde(x, space, problem, tau, eps_margin)?;
    Ok(DriftVerdict::new(
        x.coeffs.clone(),
        v,
        moments.mean(0),
        moments.std_error(0),
        constants.rho * v + constants.kappa,
    ))
}
