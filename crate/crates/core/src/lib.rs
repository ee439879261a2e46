//! Stochastic approximation for strongly monotone Cartesian stochastic
//! variational inequalities.
//!
//! The crate is organised bottom-up:
//!
//! * [`vector`], [`set`], [`map`]: block vectors, block-structured convex sets,
//!   stochastic map oracles and merit functions.
//! * [`projection`]: Euclidean projections (closed form, Dykstra for polyhedra).
//! * [`stepsize`]: harmonic, recursive, centralized adaptive (ASA) and
//!   distributed adaptive (DASA) stepsize rules and their error-bound sequences.
//! * [`smoothing`]: local randomized smoothing on balls (MSR) and cubes (MCR).
//! * [`engine`]: the projected SA loop, replications and MSE trajectories.
//! * [`problems`]: bandwidth sharing, networked Nash-Cournot and a synthetic
//!   quadratic with known solution.
//! * [`bench`]: experiment configs, the deterministic reference-solution
//!   oracle, confidence intervals and CSV/JSON reports.

pub mod bench;
pub mod engine;
pub mod error;
pub mod map;
pub mod problems;
pub mod projection;
pub mod rng;
pub mod set;
pub mod smoothing;
pub mod stepsize;
pub mod vector;

pub use error::{Result, SviError};
pub use map::{natural_residual, sample_map, MapConstants, Problem, StochasticMap};
pub use projection::{project_block, project_cartesian, DykstraConfig};
pub use set::{CartesianSet, Polyhedron, SetBlock};
pub use vector::{BlockVector, Layout};
