//! Shared physical limits and comfort thresholds.
//!
//! The comfort thresholds are used both by the closed-loop score and by the
//! adapter's reward penalties; they must stay a single definition.

/// Longitudinal acceleration considered comfortable, m/s^2.
pub const COMFORT_MAX_LON_ACCEL: f64 = 2.4;
/// Longitudinal jerk considered comfortable, m/s^3.
pub const COMFORT_MAX_JERK: f64 = 4.0;
/// Yaw rate considered comfortable, rad/s.
pub const COMFORT_MAX_YAW_RATE: f64 = 0.95;

/// Command clamps.
pub const MAX_ACCEL_CMD: f64 = 5.0;
pub const MAX_STEER_RATE_CMD: f64 = 1.0;

/// Steering angle limit, rad.
pub const MAX_STEER: f64 = 0.6;
/// Lowest allowed longitudinal velocity, m/s (near-no-reverse urban driving).
pub const MIN_VELOCITY: f64 = -0.5;

/// Default vehicle footprint, meters.
pub const EGO_LENGTH: f64 = 4.6;
pub const EGO_WIDTH: f64 = 1.85;
