//! Stochastic theta method (STM) for monotone SODEs, the spectral-Galerkin
//! drift-implicit Euler scheme for monotone SPDEs on (0, 1), and numerical
//! ergodicity certificates for both: Lyapunov drift inequalities, explicit
//! one-step transition densities, minorization probes and ergodic statistics.
//!
//! Module map:
//!
//! - [`problem`]: SODE problem descriptions and sampled assumption checks.
//! - [`stm`]: the theta-method stepper and its implicit solve.
//! - [`lyapunov`]: Lyapunov functions, drift constants, Monte Carlo drift
//!   verification, small sets and the transition density.
//! - [`spde`]: sine-basis Galerkin space, Nemytskii projection, the
//!   drift-implicit Euler Galerkin step and its Lyapunov certificate.
//! - [`stats`]: time averages, kernel density estimates, Kolmogorov–Smirnov
//!   distances and the two ergodicity experiments.
//! - [`cli`]: configuration resolution and command execution.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod montecarlo;
pub mod problem;
pub mod quadrature;
pub mod rng;
pub mod spde;
pub mod stats;
pub mod stm;

pub use error::{Error, Result};
pub use lyapunov::{DriftConstants, DriftVerdict, LyapunovSpec, MinorizationReport};
pub use problem::{AssumptionId, AssumptionReport, SampleSpec, SodeProblem};
pub use rng::{IncrementSource, NoiseStream, ZeroNoise};
pub use spde::{AllenCahnParams, DiegStepper, SpdeProblem, SpectralField, SpectralSpace};
pub use stats::{ErgodicReport, TestFunctional};
pub use stm::{StmConfig, Stepper, Trajectory};
