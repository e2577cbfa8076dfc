//! The navigator: re-grounding, lifting pixels to a persistent world goal,
//! replanning and episode scoring.

use thiserror::Error;

use crate::geometry::{back_project, CameraIntrinsics, GeometryError, PixelTarget, Point3, Pose};
use crate::simulator::DepthMap;

pub mod guide;
pub mod navigator;
pub mod planner;

pub use navigator::{
    mock_grounder, navigator_step, run_episode, run_episode_logged, EpisodeContext, EpisodeLog, EpisodeResult,
    FailureReason, NavigatorConfig, NavigatorState, PlanRecord, Status, TickRecord,
};
pub use planner::{PlanOutcome, PlanStart, Planner, PlannerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("no valid depth around pixel ({x}, {y})")]
    DepthUnavailable { x: f64, y: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Depth at the rounded pixel, or the median of valid depths in its 3×3
/// neighborhood.
pub fn depth_at(pixel: &PixelTarget, depth: &DepthMap) -> Option<f64> {
    let clamp = |v: f64, n: u32| (v.round().max(0.0) as u32).min(n.saturating_sub(1));
    let (cx, cy) = (clamp(pixel.x, depth.width()), clamp(pixel.y, depth.height()));
    if let Some(d) = depth.get(cx, cy) {
        return Some(d);
    }
    let mut valid: Vec<f64> = (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter_map(|(dx, dy)| {
            let (x, y) = (cx as i64 + dx, cy as i64 + dy);
            (x >= 0 && y >= 0).then(|| depth.get(x as u32, y as u32)).flatten()
        })
        .collect();
    if valid.is_empty() {
        return None;
    }
    valid.sort_by(f64::total_cmp);
    let n = valid.len();
    Some(if n % 2 == 1 {
        valid[n / 2]
    } else {
        0.5 * (valid[n / 2 - 1] + valid[n / 2])
    })
}

/// Lifts a grounded pixel to a world point through the depth map, the
/// camera mount and the body pose.
pub fn lift_target(
    pixel: &PixelTarget,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    camera_extrinsics: &Pose,
    body_pose: &Pose,
) -> Result<Point3, LiftError> {
    if !intrinsics.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds {
            x: pixel.x,
            y: pixel.y,
            width: intrinsics.width,
            height: intrinsics.height,
        }
        .into());
    }
    let d = depth_at(pixel, depth).ok_or(LiftError::DepthUnavailable { x: pixel.x, y: pixel.y })?;
    lift_with_range(pixel, d, intrinsics, camera_extrinsics, body_pose)
}

/// Lifts a pixel at a given camera-frame depth.
pub fn lift_with_range(
    pixel: &PixelTarget,
    depth: f64,
    intrinsics: &CameraIntrinsics,
    camera_extrinsics: &Pose,
    body_pose: &Pose,
) -> Result<Point3, LiftError> {
    let cam = back_project(pixel, depth, intrinsics)?;
    Ok(crate::geometry::sensor_to_world(&cam, camera_extrinsics, body_pose))
}
