//! The 80-point, 8 s planned trajectory shared by every planner and tracker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Pose, DT, FUTURE_LEN};

/// 80 poses at 0.1 s spacing; the first sample is the pose at plan time.
/// The frame is whatever the producer declares (learned planners emit the
/// ego frame at plan time, the simulator tracks global-frame plans).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    poses: Vec<Pose>,
}

impl PlannedTrajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.len() != FUTURE_LEN {
            return Err(Error::Other(format!(
                "planned trajectory has {} poses, expected {FUTURE_LEN}",
                poses.len()
            )));
        }
        if poses
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.yaw.is_finite()))
        {
            return Err(Error::Other("planned trajectory contains non-finite values".into()));
        }
        Ok(PlannedTrajectory { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn get(&self, i: usize) -> Pose {
        self.poses[i.min(FUTURE_LEN - 1)]
    }

    pub fn endpoint(&self) -> Pose {
        self.poses[FUTURE_LEN - 1]
    }

    /// Point-to-point speeds implied by the sample spacing; the last value is
    /// repeated so the result has one entry per pose.
    pub fn speeds(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .poses
            .windows(2)
            .map(|w| w[0].distance_to(&w[1]) / DT)
            .collect();
        let last = *v.last().unwrap_or(&0.0);
        v.push(last);
        v
    }

    /// Re-expresses the trajectory in `frame`.
    pub fn in_frame(&self, frame: &Pose) -> PlannedTrajectory {
        PlannedTrajectory {
            poses: self.poses.iter().map(|p| p.in_frame(frame)).collect(),
        }
    }

    /// Maps a frame-local trajectory back to global coordinates.
    pub fn from_frame(&self, frame: &Pose) -> PlannedTrajectory {
        PlannedTrajectory {
            poses: self.poses.iter().map(|p| p.from_frame(frame)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(PlannedTrajectory::new(vec![Pose::default(); 79]).is_err());
        assert!(PlannedTrajectory::new(vec![Pose::default(); 80]).is_ok());
    }

    #[test]
    fn speeds_from_spacing() {
        let poses: Vec<Pose> = (0..FUTURE_LEN)
            .map(|i| Pose::new(0.5 * i as f64, 0.0, 0.0))
            .collect();
        let traj = PlannedTrajectory::new(poses).unwrap();
        for v in traj.speeds() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_round_trip() {
        let poses: Vec<Pose> = (0..FUTURE_LEN)
            .map(|i| Pose::new(0.3 * i as f64, (i as f64 * 0.05).sin(), 0.1))
            .collect();
        let traj = PlannedTrajectory::new(poses).unwrap();
        let frame = Pose::new(4.0, -2.0, 0.9);
        let back = traj.in_frame(&frame).from_frame(&frame);
        for (a, b) in traj.poses().iter().zip(back.poses()) {
            assert!(a.distance_to(b) < 1e-12);
            assert!((a.yaw - b.yaw).abs() < 1e-12);
        }
    }
}
