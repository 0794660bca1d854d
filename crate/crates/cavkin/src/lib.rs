//! Numerically exact simulation of ground-state chemical kinetics for a
//! reactive mode coupled to dissipative solvent baths and, optionally, a
//! lossy optical cavity. Quantum rates come from hierarchical equations of
//! motion over rational bath expansions; classical cross-checks come from
//! generalized Langevin trajectories and Grote-Hynes theory.

pub mod baths;
pub mod classical;
pub mod cli;
pub mod error;
pub mod heom;
pub mod linalg;
pub mod model;
pub mod rates;
pub mod units;
