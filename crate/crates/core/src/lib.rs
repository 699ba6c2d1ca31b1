//! Conservative Kac particle simulation of the space-homogeneous Landau
//! equation with hard potentials, together with the estimators, transport
//! distances and inequality checks used to verify it.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernels`] evaluates the pair kernels `A`, `B`, `σ` and the pointwise
//!   inequalities about them.
//! * [`ensemble`] holds particle states and samples compactly supported
//!   initial data.
//! * [`noise`] provides the counter-keyed Gaussian streams that make every run
//!   reproducible independently of the worker count.
//! * [`integrator`] advances the conservative particle system.
//! * [`coupling`] evolves two systems under shared noise.
//! * [`observables`] and [`transport`] turn replica data into statistics.
//! * [`inequality`] and [`oracle`] hold the analytical reference machinery.
//! * [`config`], [`io`] and [`harness`] wire everything to files and the CLI.

pub mod config;
pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod inequality;
pub mod integrator;
pub mod io;
pub mod kernels;
pub mod knn;
pub mod noise;
pub mod observables;
pub mod ode;
pub mod oracle;
pub mod stats;
pub mod transport;

pub use error::{KacError, Result};

/// Velocity vector in three dimensions.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Real 3×3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
