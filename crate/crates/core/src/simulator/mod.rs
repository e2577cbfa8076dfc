//! Deterministic synthetic world: obstacle geometry, kinematic playback,
//! ray-cast sensors and collision checking.

use thiserror::Error;

use crate::bspline::BSplineTrajectory;
use crate::geometry::{Pose, Vec3};

pub mod scenario;
pub mod sensors;
pub mod world;

pub use scenario::{gen_random_scenario, Scenario, ScenarioParams};
pub use sensors::{render_depth, render_view, sample_lidar, DepthMap};
pub use world::{Aabb, Obstacle, TargetMarker, World};

/// Simulation tick (s).
pub const DEFAULT_TICK: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("trajectory domain is empty")]
    TrajectoryDomainEmpty,
    #[error("invalid time step {0}")]
    InvalidTimeStep(f64),
    #[error("no valid scenario after {0} attempts")]
    Unsatisfiable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavState {
    /// Body-to-world transform.
    pub pose: Pose,
    pub velocity: Vec3,
    pub time: f64,
}

impl UavState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            pose: Pose::from_yaw(yaw, position),
            velocity: Vec3::zeros(),
            time: 0.0,
        }
    }

    pub fn position(&self) -> Vec3 {
        *self.pose.translation()
    }
}

/// Kinematic playback of `traj` by `dt`. Position follows the spline,
/// velocity is its derivative clipped to `v_max`, and yaw turns toward the
/// horizontal velocity when moving faster than 0.1 m/s. Past the end of
/// the domain the vehicle holds the endpoint at rest.
pub fn advance(state: &UavState, traj: &BSplineTrajectory, dt: f64, v_max: f64) -> Result<UavState, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidTimeStep(dt));
    }
    if !(traj.duration() > 0.0) {
        return Err(SimError::TrajectoryDomainEmpty);
    }
    let time = state.time + dt;
    let t = time.clamp(traj.start_time(), traj.end_time());
    let position = traj.evaluate(t).map_err(|_| SimError::TrajectoryDomainEmpty)?;
    let mut velocity = if time >= traj.end_time() {
        Vec3::zeros()
    } else {
        traj.evaluate_derivative(t, 1).map_err(|_| SimError::TrajectoryDomainEmpty)?
    };
    let speed = velocity.norm();
    if speed > v_max {
        velocity *= v_max / speed;
    }
    let horizontal = velocity.xy().norm();
    let yaw = if velocity.norm() > 0.1 && horizontal > 1e-9 {
        velocity.y.atan2(velocity.x)
    } else {
        state.pose.yaw()
    };
    Ok(UavState {
        pose: Pose::from_yaw(yaw, position),
        velocity,
        time,
    })
}
