//! A self-contained 2D point-goal navigation research stack.
//!
//! The crate wires together an occupancy-grid environment with discrete
//! actions and raycast sensing, an A* planner used to derive waypoint
//! curricula, a twin-VAE perception front end, a from-scratch PPO agent,
//! and the SPL/success evaluation harness. Everything runs on the CPU in
//! 64-bit floats so training is deterministic under a fixed seed.

pub mod agent;
pub mod curriculum;
pub mod env;
pub mod eval;
pub mod grid;
pub mod mapgen;
pub mod nn;
pub mod perception;
pub mod planner;

pub use env::{Action, EpisodeSpec, Observation, Pose, SensorConfig};
pub use grid::OccupancyGrid;
pub use planner::{DistanceField, PlannedPath};
