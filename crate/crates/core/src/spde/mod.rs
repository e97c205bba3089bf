//! Spectral-Galerkin discretization of monotone SPDEs on (0, 1) with
//! Dirichlet boundary conditions.

mod dieg;
mod lyapunov;
mod problem;
mod space;

pub use dieg::{qwiener_increment, DiegStepper, DiegWorkspace, SolverConfig};
pub use lyapunov::{drift_constants_spde, gradient_weight, lyapunov_spde, verify_drift_mc_spde};
pub use problem::{allen_cahn_constants, power_spectrum, AllenCahnParams, ScalarFn, SpdeConstants, SpdeProblem};
pub use space::{nemytskii_project, SpectralField, SpectralSpace};
