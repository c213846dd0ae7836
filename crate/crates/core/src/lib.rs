//! Expansive motions of the Newtonian N-body problem.
//!
//! Hyperbolic, completely parabolic and hyperbolic-parabolic half-entire
//! motions are computed by minimizing a renormalized Lagrangian action over
//! perturbation paths φ with φ(1) = 0, and checked against an independent ODE
//! integrator, a Kepler propagator and the known asymptotic expansions.
//!
//! The geometric core is generic over the scalar ([`Real`], `f32` or `f64`);
//! the aliases at the crate root fix it to `f64`.

pub mod action;
pub mod central;
pub mod cluster;
pub mod configuration;
pub mod error;
pub mod grid;
pub mod hj;
pub mod io;
pub mod kepler;
pub mod minimizer;
pub mod ode;
pub mod reference;
pub mod scalar;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Configuration = configuration::Configuration<f64>;
pub type MassSystem = system::MassSystem<f64>;
pub type ClusterPartition = cluster::ClusterPartition<f64>;
pub type CentralConfigResult = central::CentralConfigResult<f64>;
pub use central::CcOptions;
pub type TimeGrid = grid::TimeGrid<f64>;
pub type DiscretePath = grid::DiscretePath<f64>;
pub type ReferenceMotion = reference::ReferenceMotion<f64>;
pub use reference::Regime;
pub use grid::Grading;
pub type ActionBreakdown = action::ActionBreakdown<f64>;
pub use action::{action_eval, action_gradient, ActionOptions, RenormForm, TailTreatment};
pub type SolveReport = minimizer::SolveReport<f64>;
pub use minimizer::{euler_lagrange_residual, solve, SolveConfig};
