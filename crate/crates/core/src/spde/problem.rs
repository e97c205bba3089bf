use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Structural constants of the reaction `f` and the pointwise diffusion `g`:
///
/// ```text
/// (f(a) - f(b)) (a - b) <= K1 (a - b)^2
/// f(a) a                <= K2 a^2 + K3
/// |f'(a)|               <= K4 |a|^(q-1) + K5
/// ```
///
/// and `K6`, `K7`, `K8` the Lipschitz and linear-growth constants of `G`
/// in the Hilbert–Schmidt norm (`||G(x)||^2 <= K7 ||x||^2 + K8`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdeConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub q: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
}

/// `dX = (Laplacian X + F(X)) dt + G(X) dW` on (0, 1) with Dirichlet
/// boundary conditions and `Q`-Wiener noise diagonal in the sine basis.
#[derive(Clone)]
pub struct SpdeProblem {
    pub reaction: ScalarFn,
    pub reaction_derivative: ScalarFn,
    /// `None` for additive noise, `g == 1`.
    pub diffusion: Option<ScalarFn>,
    pub constants: SpdeConstants,
    /// Noise covariance eigenvalues `q_k` on `e_k`.
    pub q_spectrum: Vec<f64>,
}

impl fmt::Debug for SpdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdeProblem")
            .field("additive", &self.diffusion.is_none())
            .field("constants", &self.constants)
            .field("q_spectrum", &self.q_spectrum)
            .finish()
    }
}

impl SpdeProblem {
    pub fn new(
        reaction: ScalarFn,
        reaction_derivative: ScalarFn,
        diffusion: Option<ScalarFn>,
        constants: SpdeConstants,
        q_spectrum: Vec<f64>,
    ) -> Result<Self> {
        if q_spectrum.is_empty() || q_spectrum.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(Error::invalid("noise spectrum q_k must be positive and finite"));
        }
        Ok(Self {
            reaction,
            reaction_derivative,
            diffusion,
            constants,
            q_spectrum,
        })
    }

    pub fn allen_cahn(params: &AllenCahnParams) -> Self {
        let inv = params.epsilon.powi(-2);
        Self {
            reaction: Arc::new(move |u| inv * (u - u * u * u)),
            reaction_derivative: Arc::new(move |u| inv * (1.0 - 3.0 * u * u)),
            diffusion: None,
            constants: params.constants,
            q_spectrum: params.q_spectrum.clone(),
        }
    }

    pub fn is_additive(&self) -> bool {
        self.diffusion.is_none()
    }

    /// `sum q_k` over the retained spectrum.
    pub fn noise_trace(&self) -> f64 {
        self.q_spectrum.iter().sum()
    }
}

/// `q_k = k^(-exponent)` for `k = 1..=modes`.
pub fn power_spectrum(modes: usize, exponent: f64) -> Vec<f64> {
    (1..=modes).map(|k| (k as f64).powf(-exponent)).collect()
}

/// Constants of the stochastic Allen–Cahn equation with reaction
/// `eps^-2 (u - u^3)` and additive noise.
#[derive(Clone, Debug, PartialEq)]
pub struct AllenCahnParams {
    pub epsilon: f64,
    pub constants: SpdeConstants,
    pub q_spectrum: Vec<f64>,
}

/// `K1 = eps^-2`, `q = 3`, `K4 = 2 eps^-2`, `K5 = eps^-2`, `K6 = K7 = 0`,
/// `K8 = sum q_k`, and `K3 = max_a [(eps^-2 + |K2|) a^2 - eps^-2 a^4]
/// = (eps^-2 + |K2|)^2 eps^2 / 4` for the chosen `K2 < 0`.
pub fn allen_cahn_constants(epsilon: f64, k2: f64, q_spectrum: &[f64]) -> Result<AllenCahnParams> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive (got {epsilon})")));
    }
    if !(k2 < 0.0) {
        return Err(Error::invalid(format!("K2 must be negative (got {k2})")));
    }
    if q_spectrum.is_empty() || q_spectrum.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
        return Err(Error::invalid("noise spectrum q_k must be positive and finite"));
    }
    let inv = epsilon.powi(-2);
    let a = inv + k2.abs();
    Ok(AllenCahnParams {
        epsilon,
        constants: SpdeConstants {
            k1: inv,
            k2,
            k3: a * a * epsilon * epsilon / 4.0,
            k4: 2.0 * inv,
            k5: inv,
            q: 3.0,
            k6: 0.0,
            k7: 0.0,
            k8: q_spectrum.iter().sum(),
        },
        q_spectrum: q_spectrum.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn allen_cahn_half_epsilon() {
        let q = power_spectrum(10, 2.0);
        let p = allen_cahn_constants(0.5, -1.0, &q).unwrap();
        assert_eq!(p.constants.k1, 4.0);
        assert_abs_diff_eq!(p.constants.k3, 1.5625, epsilon = 1e-15);
        assert_abs_diff_eq!(p.constants.k8, 1.549_767_731_166_540_8, epsilon = 1e-14);
        // (K1 - lambda_1) tau < 1 for every tau in (0, 1) since 4 < pi^2.
        assert!(p.constants.k1 < std::f64::consts::PI.powi(2));
    }

    #[test]
    fn k3_matches_quartic_maximum() {
        // brute-force max of 5 a^2 - 4 a^4 on a fine grid
        let best = (0..=200_000)
            .map(|i| {
                let a = i as f64 * 1e-5;
                5.0 * a * a - 4.0 * a.powi(4)
            })
            .fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(best, 25.0 / 16.0, epsilon = 1e-9);
    }

    #[test]
    fn coercivity_holds_on_grid() {
        let q = power_spectrum(10, 2.0);
        for (eps, k2) in [(0.5, -1.0), (0.2, -3.0), (1.0, -0.1)] {
            let params = allen_cahn_constants(eps, k2, &q).unwrap();
            let p = SpdeProblem::allen_cahn(&params);
            let c = params.constants;
            let worst = (0..10_000)
                .map(|i| -10.0 + 20.0 * i as f64 / 9_999.0)
                .map(|a| c.k2 * a * a + c.k3 - (p.reaction)(a) * a)
                .fold(f64::INFINITY, f64::min);
            assert!(worst >= -1e-10, "eps={eps} worst={worst}");
        }
    }

    #[test]
    fn parameter_errors() {
        let q = power_spectrum(3, 2.0);
        assert!(allen_cahn_constants(0.5, 0.0, &q).is_err());
        assert!(allen_cahn_constants(0.5, 1.0, &q).is_err());
        assert!(allen_cahn_constants(0.0, -1.0, &q).is_err());
        assert!(allen_cahn_constants(0.5, -1.0, &[1.0, 0.0]).is_err());
    }
}
