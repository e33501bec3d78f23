//! Closed-loop imitation-planning laboratory.
//!
//! A deterministic driving simulator (kinematic bicycle ego, LQR tracking,
//! IDM traffic), synthetic scenario generation, a small transformer planner
//! trained by imitation with perturbation-based augmentation, a state dropout
//! encoder for the ego kinematic inputs, and a PPO-trained trajectory adapter
//! that converts planned trajectories into control commands.
//!
//! Everything is seeded and reproducible: the same inputs and seeds produce
//! byte-identical scenario files, simulation logs, and checkpoints.

pub mod adapter;
pub mod augment;
pub mod control;
pub mod simulator;
pub mod dynamics;
pub mod error;
pub mod geom;
pub mod limits;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod scenario;
pub mod traffic;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::PlannedTrajectory;
