//! Numerical laboratory for scalar stochastic reaction-diffusion equations
//!
//! ```text
//! du = Δu dt + f(u) dt + σ(u) dW,    x ∈ T^d,  d ∈ {1, 2},
//! ```
//!
//! driven by noise that is white in time and spatially correlated by a kernel
//! κ(x, y). The crate provides:
//!
//! * exact spectral heat semigroup and grid reductions on the unit torus
//!   ([`grid`]),
//! * Gaussian noise fields with exact covariance factorisations and
//!   counter-based reproducible streams ([`noise`]),
//! * the linearised flow Φ and its dampened variant Ξ, solved through the
//!   exponential transform Φ = e^Y Φ̄, together with the associated integral
//!   kernel K and its statistics ([`linear`]),
//! * the projective process π_t = Φ_t w / ‖Φ_t w‖_{L¹}, Hilbert's projective
//!   metric and Birkhoff contraction experiments ([`projective`]),
//! * Lyapunov-exponent estimators, the quadratic functional Q and the
//!   centred fluctuation F ([`lyapunov`]),
//! * Monte Carlo construction of the corrector G solving the Poisson problem
//!   LG = F for the projective generator, with Fréchet and supermartingale
//!   checks ([`corrector`]),
//! * the nonlinear flow Ψ, auxiliary processes X and Y, cut-off/stopping-time
//!   machinery and the negative-moment instability experiment ([`nonlinear`]),
//! * a config-driven, deterministic experiment runner with CSV artifacts
//!   ([`experiments`]).
//!
//! All ensemble computations are reproducible: noise is generated from
//! counter-based streams keyed by (seed, path, step), and cross-path
//! reductions happen in a fixed order independent of the worker count.

pub mod corrector;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linear;
pub mod lyapunov;
pub mod noise;
pub mod nonlinear;
pub mod projective;
pub mod rng;
pub mod spectral;

pub use error::LabError;
pub use grid::{Field, GridDescriptor, Reduction};
pub use noise::{CorrelationKernel, KernelSpec};
pub use rng::NoiseStream;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, LabError>;
