//! Receding-horizon trajectory planning around the optimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::guide::{guide_path, polyline_at, polyline_length, GuideConfig};
use crate::bspline::{cubic_start_points, BSplineTrajectory, SplineError};
use crate::geometry::Vec3;
use crate::mapping::OccupancyMap;
use crate::optimizer::{optimize, CostWeights, OptimizeError, OptimizeOptions, OptimizeOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub knot_interval: f64,
    /// Speed of the initial timing profile (m/s).
    pub cruise_speed: f64,
    /// Acceleration of the initial timing profile (m/s²).
    pub profile_accel: f64,
    /// Goal moves larger than this discard the warm start (m).
    pub goal_reset_distance: f64,
    /// Minimum map clearance along an accepted trajectory (m).
    pub clearance_floor: f64,
    /// Re-optimizations with a heavier collision weight when the floor is
    /// violated.
    pub collision_retries: usize,
    /// Factor applied to the collision weight on each retry.
    pub retry_weight_factor: f64,
    /// Clearance kept around the trajectory endpoint (m).
    pub goal_clearance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            knot_interval: 0.25,
            cruise_speed: 2.0,
            profile_accel: 1.5,
            goal_reset_distance: 2.0,
            clearance_floor: 0.5,
            collision_retries: 3,
            retry_weight_factor: 4.0,
            goal_clearance: 0.6,
        }
    }
}

/// Vehicle state the new trajectory must continue from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanStart {
    pub time: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl PlanStart {
    pub fn at_rest(time: f64, position: Vec3) -> Self {
        Self {
            time,
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
        }
    }

    /// State of `traj` at `time`, clamped into its domain.
    pub fn from_trajectory(traj: &BSplineTrajectory, time: f64) -> Result<Self, SplineError> {
        let t = time.clamp(traj.start_time(), traj.end_time());
        let (position, velocity, acceleration) = traj.state_at(t)?;
        let (velocity, acceleration) = if time >= traj.end_time() {
            (Vec3::zeros(), Vec3::zeros())
        } else {
            (velocity, acceleration)
        };
        Ok(Self {
            time,
            position,
            velocity,
            acceleration,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Previous trajectory re-anchored at the current state.
    Warm,
    /// Timed A* guide path.
    Guide,
    /// Timed straight segment.
    Straight,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub trajectory: BSplineTrajectory,
    pub init: InitKind,
    /// Every optimizer run of this cycle, in order.
    pub runs: Vec<OptimizeOutcome>,
    /// Minimum map clearance along the accepted trajectory.
    pub clearance: f64,
    /// Knot-interval stretch applied for feasibility (1 = none).
    pub time_scale: f64,
    /// Endpoint actually used after keeping clear of mapped obstacles.
    pub goal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Planner {
    pub weights: CostWeights,
    pub options: OptimizeOptions,
    pub config: PlannerConfig,
    pub guide: GuideConfig,
    /// When false the timed straight segment is flown unoptimized.
    pub optimize: bool,
}

/// Minimum interpolated map distance along `traj`, sampled every 0.05 s
/// and at least 200 times. Samples outside the window are ignored.
pub fn trajectory_clearance(traj: &BSplineTrajectory, map: &OccupancyMap) -> f64 {
    let count = ((traj.duration() / 0.05).ceil() as usize).max(200);
    traj.sample(count)
        .iter()
        .filter_map(|(_, p)| map.query_distance(p).ok().filter(|q| !q.outside).map(|q| q.distance))
        .fold(f64::INFINITY, f64::min)
}

fn max_norm(points: &[Vec3]) -> f64 {
    points.iter().map(|p| p.norm()).fold(0.0, f64::max)
}

/// Control points of a trajectory starting at `start` and following
/// `path` under a trapezoidal speed profile, ending at rest on the last
/// path point.
fn timed_control_points(start: &PlanStart, path: &[Vec3], dt: f64, cruise: f64, accel: f64) -> Vec<Vec3> {
    let goal = *path.last().expect("non-empty path");
    let mut pts = cubic_start_points(&start.position, &start.velocity, &start.acceleration, dt).to_vec();
    let length = polyline_length(path);
    if length > 1e-6 {
        let dir0 = (polyline_at(path, 1e-3) - path[0]).normalize();
        let v0 = start.velocity.dot(&dir0).clamp(0.0, cruise);
        // Trapezoid from v0 up to cruise and down to rest.
        let d_up = (cruise * cruise - v0 * v0) / (2.0 * accel);
        let d_down = cruise * cruise / (2.0 * accel);
        let (v_peak, d_up, d_down) = if d_up + d_down <= length {
            (cruise, d_up, d_down)
        } else {
            let vp = ((2.0 * accel * length + v0 * v0) / 2.0).sqrt().max(v0);
            let du = ((vp * vp - v0 * v0) / (2.0 * accel)).max(0.0);
            (vp, du, length - du)
        };
        let t_up = (v_peak - v0) / accel;
        let t_cruise = (length - d_up - d_down).max(0.0) / v_peak;
        let t_down = v_peak / accel;
        let total = t_up + t_cruise + t_down;
        let s_at = |t: f64| {
            if t <= t_up {
                v0 * t + 0.5 * accel * t * t
            } else if t <= t_up + t_cruise {
                d_up + v_peak * (t - t_up)
            } else {
                let r = (t - t_up - t_cruise).min(t_down);
                d_up + v_peak * t_cruise + v_peak * r - 0.5 * accel * r * r
            }
        };
        let mut i = 3;
        loop {
            let t = (i - 1) as f64 * dt;
            if t >= total {
                break;
            }
            pts.push(polyline_at(path, s_at(t)));
            i += 1;
        }
    }
    pts.extend([goal; 3]);
    while pts.len() < 7 {
        pts.push(goal);
    }
    pts
}

/// Re-anchors `prev` at `start`. The head encodes the current state, the
/// rest samples `prev` blended toward `goal`, and the knot interval is
/// adjusted so the new trajectory ends when `prev` did.
fn warm_start(prev: &BSplineTrajectory, start: &PlanStart, goal: &Vec3) -> Result<BSplineTrajectory, SplineError> {
    let remaining = prev.end_time() - start.time;
    let segments = ((remaining / prev.knot_interval()).round() as usize).max(4);
    let dt = remaining / segments as f64;
    let mut pts = cubic_start_points(&start.position, &start.velocity, &start.acceleration, dt).to_vec();
    let shift = goal - prev.last_point();
    for i in 3..segments {
        let t = start.time + (i - 1) as f64 * dt;
        pts.push(prev.evaluate(t)? + shift * ((t - start.time) / remaining));
    }
    pts.extend([*goal; 3]);
    BSplineTrajectory::cubic(pts, dt, start.time)
}

impl Default for Planner {
    fn default() -> Self {
        Self::new(CostWeights::default())
    }
}

impl Planner {
    pub fn new(weights: CostWeights) -> Self {
        Self {
            weights,
            options: OptimizeOptions::default(),
            config: PlannerConfig::default(),
            guide: GuideConfig::default(),
            optimize: true,
        }
    }

    /// Moves a goal lying too close to mapped obstacles back toward `from`.
    pub fn clear_goal(&self, map: &OccupancyMap, goal: &Vec3, from: &Vec3) -> Vec3 {
        let need = self.config.goal_clearance;
        let clearance = |p: &Vec3| match map.query_distance(p) {
            Ok(q) if !q.outside && !map.is_stale() => q.distance,
            _ => f64::INFINITY,
        };
        if clearance(goal) >= need {
            return *goal;
        }
        let back = from - goal;
        let steps = (back.norm() / 0.1).ceil() as usize;
        for i in 1..=steps {
            let p = goal + back * (i as f64 / steps as f64);
            if clearance(&p) >= need {
                return p;
            }
        }
        *goal
    }

    fn build(&self, pts: Vec<Vec3>, start: &PlanStart) -> Result<BSplineTrajectory, PlanError> {
        Ok(BSplineTrajectory::cubic(pts, self.config.knot_interval, start.time)?)
    }

    /// Stretches the knot interval until every velocity and acceleration
    /// control point is within limits, re-encoding the start state at
    /// each step.
    fn enforce_limits(&self, traj: BSplineTrajectory, start: &PlanStart) -> Result<(BSplineTrajectory, f64), PlanError> {
        let (v_max, a_max) = (self.weights.v_max, self.weights.a_max);
        let excess = |t: &BSplineTrajectory| -> Result<f64, PlanError> {
            let v = max_norm(&t.derivative_control_points(1)?);
            let a = max_norm(&t.derivative_control_points(2)?);
            Ok((v / v_max).max((a / a_max).sqrt()))
        };
        let base_dt = traj.knot_interval();
        let mut current = traj;
        let mut f = excess(&current)?;
        let mut best = (current.clone(), f);
        for _ in 0..30 {
            if f <= 1.0 {
                return Ok((current.clone(), current.knot_interval() / base_dt));
            }
            let dt = current.knot_interval() * f * 1.02;
            // A large start acceleration makes the re-encoded head grow with
            // the interval, so stretching can diverge.
            if dt > 100.0 * base_dt {
                break;
            }
            let mut pts = current.into_control_points();
            let head = cubic_start_points(&start.position, &start.velocity, &start.acceleration, dt);
            pts[..3].copy_from_slice(&head);
            current = BSplineTrajectory::cubic(pts, dt, start.time)?;
            f = excess(&current)?;
            if f < best.1 {
                best = (current.clone(), f);
            }
        }
        let (current, f) = best;
        // Pure scaling divides velocity by f and acceleration by f².
        let f = f.max(1.0) * 1.001;
        let dt = current.knot_interval() * f;
        let current = current.with_knot_interval(dt)?;
        Ok((current, dt / base_dt))
    }

    /// One planning cycle from `start` to `goal`.
    pub fn plan(
        &self,
        map: &OccupancyMap,
        start: &PlanStart,
        goal: &Vec3,
        previous: Option<&BSplineTrajectory>,
    ) -> Result<PlanOutcome, PlanError> {
        let goal = self.clear_goal(map, goal, &start.position);
        let dt = self.config.knot_interval;
        let (cruise, accel) = (self.config.cruise_speed, self.config.profile_accel);

        if !self.optimize {
            let pts = timed_control_points(start, &[start.position, goal], dt, cruise, accel);
            let (trajectory, time_scale) = self.enforce_limits(self.build(pts, start)?, start)?;
            return Ok(PlanOutcome {
                clearance: trajectory_clearance(&trajectory, map),
                trajectory,
                init: InitKind::Straight,
                runs: Vec::new(),
                time_scale,
                goal,
            });
        }

        let warm = previous.filter(|p| {
            (p.last_point() - goal).norm() <= self.config.goal_reset_distance
                && p.end_time() - start.time >= 4.0 * self.config.knot_interval
        });
        let guide = || -> Result<BSplineTrajectory, PlanError> {
            let path = guide_path(map, &start.position, &goal, &self.guide);
            self.build(timed_control_points(start, &path, dt, cruise, accel), start)
        };
        let (mut init, mut kind) = match warm {
            Some(prev) => (warm_start(prev, start, &goal)?, InitKind::Warm),
            None => (guide()?, InitKind::Guide),
        };

        let mut runs = Vec::new();
        let mut best: Option<(BSplineTrajectory, f64)> = None;
        let mut weights = self.weights;
        let mut tried_guide = kind == InitKind::Guide;
        let mut attempt = 0;
        loop {
            let out = optimize(&init, &weights, map, &self.options, true)?;
            let clearance = trajectory_clearance(&out.trajectory, map);
            let candidate = out.trajectory.clone();
            runs.push(out);
            if best.as_ref().is_none_or(|(_, c)| clearance > *c) {
                best = Some((candidate.clone(), clearance));
            }
            if clearance >= self.config.clearance_floor || attempt >= self.config.collision_retries {
                break;
            }
            attempt += 1;
            if !tried_guide {
                // The warm start may hug a newly mapped obstacle; restart
                // from a fresh guide before strengthening the barrier.
                init = guide()?;
                kind = InitKind::Guide;
                tried_guide = true;
            } else {
                weights.lambda_c *= self.config.retry_weight_factor;
                init = candidate;
            }
        }
        let (trajectory, _) = best.expect("at least one optimizer run");
        let (trajectory, time_scale) = self.enforce_limits(trajectory, start)?;
        Ok(PlanOutcome {
            clearance: trajectory_clearance(&trajectory, map),
            trajectory,
            init: kind,
            runs,
            time_scale,
            goal,
        })
    }
}
