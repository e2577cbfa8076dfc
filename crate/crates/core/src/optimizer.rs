//! Gradient-based refinement of B-spline control points.
//!
//! `J = λs·Js + λc·Jc + λd·Jd` where `Js` sums squared third-order
//! control-point differences, `Jc` applies a cubic barrier to the distance
//! of each free control point from the nearest obstacle, and `Jd` penalizes
//! velocity and acceleration control points beyond their limits. The first
//! and last `k` control points are pinned.

use std::io::{self, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::BSplineTrajectory;
use crate::geometry::Vec3;
use crate::mapping::{MapError, OccupancyMap};

pub mod audit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("cost term needs degree >= {needed}, trajectory has degree {degree}")]
    DegreeTooLow { needed: usize, degree: usize },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
    /// Clearance below which the collision barrier activates (m).
    pub d_safe: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            lambda_c: 10.0,
            lambda_d: 1.0,
            d_safe: 0.5,
            v_max: 4.0,
            a_max: 3.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let weights = [self.lambda_s, self.lambda_c, self.lambda_d];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(OptimizeError::InvalidConfig(format!(
                "weights must be non-negative, got {weights:?}"
            )));
        }
        for (name, v) in [("d_safe", self.d_safe), ("v_max", self.v_max), ("a_max", self.a_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimizeError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    /// Stop once the free-gradient norm falls below this.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    pub step_shrink: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            initial_step: 1.0,
            step_shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 40,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(OptimizeError::InvalidConfig("step_shrink must lie in (0, 1)".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(OptimizeError::InvalidConfig("armijo_c must lie in (0, 1)".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(OptimizeError::InvalidConfig("initial_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub total: f64,
    pub smoothness: f64,
    pub collision: f64,
    pub feasibility: f64,
    /// Gradient of `total` over the free control points, flattened xyz.
    pub gradient: Vec<f64>,
}

impl CostReport {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Indices of the control points the optimizer may move.
pub fn free_range(traj: &BSplineTrajectory) -> Range<usize> {
    let n = traj.control_points().len();
    let k = traj.degree();
    if n > 2 * k {
        k..n - k
    } else {
        k..k
    }
}

/// Cubic barrier: zero at or beyond `d_safe`, `(d_safe - d)³` inside.
pub fn barrier(d: f64, d_safe: f64) -> f64 {
    if d >= d_safe {
        0.0
    } else {
        (d_safe - d).powi(3)
    }
}

/// Derivative of [`barrier`]; zero at the kink.
pub fn barrier_derivative(d: f64, d_safe: f64) -> f64 {
    if d >= d_safe {
        0.0
    } else {
        -3.0 * (d_safe - d).powi(2)
    }
}

/// `Σ ‖P[i+3] - 3P[i+2] + 3P[i+1] - P[i]‖²` and its gradient over every
/// control point.
pub fn cost_smoothness(traj: &BSplineTrajectory) -> Result<(f64, Vec<Vec3>), OptimizeError> {
    if traj.degree() < 3 {
        return Err(OptimizeError::DegreeTooLow {
            needed: 3,
            degree: traj.degree(),
        });
    }
    let p = traj.control_points();
    let mut grad = vec![Vec3::zeros(); p.len()];
    let mut value = 0.0;
    for i in 0..p.len().saturating_sub(3) {
        let jerk = p[i + 3] - p[i + 2] * 3.0 + p[i + 1] * 3.0 - p[i];
        value += jerk.norm_squared();
        grad[i + 3] += jerk * 2.0;
        grad[i + 2] -= jerk * 6.0;
        grad[i + 1] += jerk * 6.0;
        grad[i] -= jerk * 2.0;
    }
    Ok((value, grad))
}

/// `Σ F(d(p_i))` over free control points inside the map window. Points
/// outside the window are treated as unknown-free and contribute nothing.
pub fn cost_collision(
    traj: &BSplineTrajectory,
    map: &OccupancyMap,
    d_safe: f64,
) -> Result<(f64, Vec<Vec3>), OptimizeError> {
    if map.is_stale() {
        return Err(MapError::StaleField.into());
    }
    let p = traj.control_points();
    let mut grad = vec![Vec3::zeros(); p.len()];
    let mut value = 0.0;
    for i in free_range(traj) {
        let q = map.query_distance(&p[i])?;
        if q.outside || q.distance >= d_safe {
            continue;
        }
        value += barrier(q.distance, d_safe);
        grad[i] = q.gradient * barrier_derivative(q.distance, d_safe);
    }
    Ok((value, grad))
}

/// `Σ max(0, ‖v‖² - v_max²)² + Σ max(0, ‖a‖² - a_max²)²` over the velocity
/// and acceleration control points.
pub fn cost_feasibility(
    traj: &BSplineTrajectory,
    v_max: f64,
    a_max: f64,
) -> Result<(f64, Vec<Vec3>), OptimizeError> {
    if traj.degree() < 2 {
        return Err(OptimizeError::DegreeTooLow {
            needed: 2,
            degree: traj.degree(),
        });
    }
    let p = traj.control_points();
    let dt = traj.knot_interval();
    let mut grad = vec![Vec3::zeros(); p.len()];
    let mut value = 0.0;
    let (v2, a2) = (v_max * v_max, a_max * a_max);
    for i in 0..p.len() - 1 {
        let v = (p[i + 1] - p[i]) / dt;
        let excess = v.norm_squared() - v2;
        if excess > 0.0 {
            value += excess * excess;
            let g = v * (4.0 * excess / dt);
            grad[i + 1] += g;
            grad[i] -= g;
        }
    }
    for i in 0..p.len().saturating_sub(2) {
        let a = (p[i + 2] - p[i + 1] * 2.0 + p[i]) / (dt * dt);
        let excess = a.norm_squared() - a2;
        if excess > 0.0 {
            value += excess * excess;
            let g = a * (4.0 * excess / (dt * dt));
            grad[i + 2] += g;
            grad[i + 1] -= g * 2.0;
            grad[i] += g;
        }
    }
    Ok((value, grad))
}

pub fn total_cost(
    traj: &BSplineTrajectory,
    weights: &CostWeights,
    map: &OccupancyMap,
) -> Result<CostReport, OptimizeError> {
    let (js, gs) = cost_smoothness(traj)?;
    let (jc, gc) = cost_collision(traj, map, weights.d_safe)?;
    let (jd, gd) = cost_feasibility(traj, weights.v_max, weights.a_max)?;
    let free = free_range(traj);
    let mut gradient = Vec::with_capacity(3 * free.len());
    for i in free {
        let g = gs[i] * weights.lambda_s + gc[i] * weights.lambda_c + gd[i] * weights.lambda_d;
        gradient.extend_from_slice(g.as_slice());
    }
    Ok(CostReport {
        total: weights.lambda_s * js + weights.lambda_c * jc + weights.lambda_d * jd,
        smoothness: js,
        collision: jc,
        feasibility: jd,
        gradient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub smoothness: f64,
    pub collision: f64,
    pub feasibility: f64,
    /// Accepted step length (0 for the initial record).
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// The very first line search failed; the input is returned unchanged.
    NoDescent,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub trajectory: BSplineTrajectory,
    pub iterations: usize,
    pub report: CostReport,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
}

fn record(iteration: usize, report: &CostReport, step: f64) -> IterationRecord {
    IterationRecord {
        iteration,
        total: report.total,
        smoothness: report.smoothness,
        collision: report.collision,
        feasibility: report.feasibility,
        step,
    }
}

/// Re-spaces the free control points evenly between the pinned ends.
fn straighten_free_points(traj: &mut BSplineTrajectory) {
    let free = free_range(traj);
    if free.is_empty() {
        return;
    }
    let pts = traj.control_points_mut();
    let a = pts[free.start - 1];
    let b = pts[free.end];
    let span = (free.len() + 1) as f64;
    for (j, i) in free.enumerate() {
        pts[i] = a + (b - a) * ((j + 1) as f64 / span);
    }
}

/// Gradient descent with Armijo backtracking over the free control points.
///
/// With `warm_start` the given control points seed the search; otherwise
/// the free points are first re-spaced on the segment between the pinned
/// ends. Accepted costs never increase and pinned points are untouched.
pub fn optimize(
    traj: &BSplineTrajectory,
    weights: &CostWeights,
    map: &OccupancyMap,
    options: &OptimizeOptions,
    warm_start: bool,
) -> Result<OptimizeOutcome, OptimizeError> {
    weights.validate()?;
    options.validate()?;
    let mut current = traj.clone();
    if !warm_start {
        straighten_free_points(&mut current);
    }
    let mut report = total_cost(&current, weights, map)?;
    let mut trace = vec![record(0, &report, 0.0)];
    let free = free_range(&current);

    if options.max_iterations == 0 {
        return Ok(OptimizeOutcome {
            trajectory: current,
            iterations: 0,
            report,
            termination: Termination::MaxIterations,
            trace,
        });
    }

    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut candidate = current.clone();
    for it in 0..options.max_iterations {
        let g2: f64 = report.gradient.iter().map(|g| g * g).sum();
        if free.is_empty() || g2.sqrt() < options.gradient_tolerance {
            termination = Termination::Converged;
            break;
        }
        let mut step = options.initial_step;
        let mut accepted = None;
        for _ in 0..options.max_backtracks {
            {
                let src = current.control_points();
                let dst = candidate.control_points_mut();
                for (j, i) in free.clone().enumerate() {
                    let g = Vec3::new(report.gradient[3 * j], report.gradient[3 * j + 1], report.gradient[3 * j + 2]);
                    dst[i] = src[i] - g * step;
                }
            }
            let trial = total_cost(&candidate, weights, map)?;
            if trial.total <= report.total - options.armijo_c * step * g2 {
                accepted = Some(trial);
                break;
            }
            step *= options.step_shrink;
        }
        match accepted {
            Some(trial) => {
                std::mem::swap(&mut current, &mut candidate);
                candidate.control_points_mut().copy_from_slice(current.control_points());
                report = trial;
                iterations += 1;
                trace.push(record(iterations, &report, step));
            }
            None => {
                termination = if it == 0 {
                    Termination::NoDescent
                } else {
                    Termination::LineSearchFailed
                };
                break;
            }
        }
    }

    Ok(OptimizeOutcome {
        trajectory: current,
        iterations,
        report,
        termination,
        trace,
    })
}

/// Writes the per-iteration trace as CSV.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "iteration,J,Js,Jc,Jd,step")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.total, r.smoothness, r.collision, r.feasibility, r.step
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::init_straight_line;
    use crate::geometry::Frame;
    use crate::mapping::{MapConfig, PointCloud};

    fn empty_map() -> OccupancyMap {
        let mut m = OccupancyMap::new(MapConfig::default(), &Vec3::zeros()).unwrap();
        m.recompute_distance_field();
        m
    }

    fn line(n: usize, spacing: f64, dt: f64) -> BSplineTrajectory {
        let pts = (0..n).map(|i| Vec3::new(spacing * i as f64, 0.0, 0.0)).collect();
        BSplineTrajectory::cubic(pts, dt, 0.0).unwrap()
    }

    /// Sphere of lidar-like surface points.
    fn sphere_map(center: Vec3, radius: f64) -> OccupancyMap {
        let mut m = OccupancyMap::new(MapConfig::default(), &center).unwrap();
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..120 {
                let th = std::f64::consts::PI * (i as f64 + 0.5) / 60.0;
                let ph = 2.0 * std::f64::consts::PI * j as f64 / 120.0;
                pts.push(center + radius * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()));
            }
        }
        m.insert_cloud(&PointCloud::new(pts, Frame::World));
        m.recompute_distance_field();
        m
    }

    #[test]
    fn smoothness_examples() {
        assert!(cost_smoothness(&line(9, 0.7, 0.3)).unwrap().0 < 1e-24);
        let x = Vec3::new(1.0, 0.0, 0.0);
        let t = BSplineTrajectory::cubic(vec![Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), x], 1.0, 0.0).unwrap();
        assert_eq!(cost_smoothness(&t).unwrap().0, 1.0);
        let quad = BSplineTrajectory::new(vec![Vec3::zeros(); 4], 2, 1.0, 0.0).unwrap();
        assert!(matches!(cost_smoothness(&quad), Err(OptimizeError::DegreeTooLow { .. })));
    }

    #[test]
    fn barrier_values() {
        assert_eq!(barrier(0.6, 0.5), 0.0);
        assert_eq!(barrier(0.5, 0.5), 0.0);
        assert!((barrier(0.3, 0.5) - 0.008).abs() < 1e-15);
        assert_eq!(barrier_derivative(0.5, 0.5), 0.0);
        assert!((barrier_derivative(0.3, 0.5) + 0.12).abs() < 1e-15);
    }

    #[test]
    fn collision_inactive_with_clearance() {
        let map = sphere_map(Vec3::new(0.0, 5.0, 0.0), 1.0);
        let (v, g) = cost_collision(&line(12, 0.5, 0.3), &map, 0.5).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn collision_single_point_contribution() {
        // Occupied voxel at the origin; a free control point 0.3 m away
        // along +x on voxel centers.
        let mut map = OccupancyMap::new(MapConfig { resolution: 0.1, ..MapConfig::default() }, &Vec3::zeros()).unwrap();
        map.insert_cloud(&PointCloud::new(vec![Vec3::new(0.05, 0.05, 0.05)], Frame::World));
        map.recompute_distance_field();
        let probe = Vec3::new(0.35, 0.05, 0.05);
        assert!((map.query_distance(&probe).unwrap().distance - 0.3).abs() < 1e-12);
        let far = Vec3::new(5.0, 5.0, 5.0);
        let pts = vec![far, far, far, probe, far, far, far];
        let t = BSplineTrajectory::cubic(pts, 1.0, 0.0).unwrap();
        let (v, _) = cost_collision(&t, &map, 0.5).unwrap();
        assert!((v - 0.008).abs() < 1e-12, "{v}");
    }

    #[test]
    fn collision_requires_fresh_field() {
        let mut map = empty_map();
        map.insert_cloud(&PointCloud::new(vec![Vec3::zeros()], Frame::World));
        assert!(matches!(
            cost_collision(&line(8, 0.5, 0.3), &map, 0.5),
            Err(OptimizeError::Map(MapError::StaleField))
        ));
    }

    #[test]
    fn feasibility_examples() {
        let t = line(8, 0.5, 0.3);
        assert_eq!(cost_feasibility(&t, 4.0, 3.0).unwrap().0, 0.0);
        // One velocity control point with |v|² = 17.
        let v = 17f64.sqrt();
        let pts = vec![Vec3::zeros(), Vec3::new(v, 0.0, 0.0)];
        let lin = BSplineTrajectory::new(pts, 1, 1.0, 0.0).unwrap();
        assert!(matches!(cost_feasibility(&lin, 4.0, 3.0), Err(OptimizeError::DegreeTooLow { .. })));
        let pts = vec![Vec3::zeros(), Vec3::new(v, 0.0, 0.0), Vec3::new(2.0 * v, 0.0, 0.0)];
        let quad = BSplineTrajectory::new(pts, 2, 1.0, 0.0).unwrap();
        assert!((cost_feasibility(&quad, 4.0, 3.0).unwrap().0 - 2.0).abs() < 1e-12);
        // One acceleration control point with |a|² = 10 and slow velocities.
        let a = 10f64.sqrt();
        let pts = vec![Vec3::zeros(), Vec3::zeros(), Vec3::new(a, 0.0, 0.0)];
        let quad = BSplineTrajectory::new(pts, 2, 1.0, 0.0).unwrap();
        assert!((cost_feasibility(&quad, 4.0, 3.0).unwrap().0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum() {
        let map = sphere_map(Vec3::new(2.0, 0.2, 0.0), 0.6);
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(0.45 * i as f64, 0.1 * (i as f64).sin(), 0.0)).collect();
        let t = BSplineTrajectory::cubic(pts, 0.1, 0.0).unwrap();
        let w = CostWeights::default();
        let r = total_cost(&t, &w, &map).unwrap();
        assert!(r.smoothness > 0.0 && r.collision > 0.0 && r.feasibility > 0.0);
        assert!((r.total - (r.smoothness + 10.0 * r.collision + r.feasibility)).abs() <= 1e-12 * r.total.abs().max(1.0));
        assert_eq!(r.gradient.len(), 3 * free_range(&t).len());
    }

    #[test]
    fn straight_line_in_free_space_costs_nothing() {
        let t = line(15, 0.5, 0.25);
        let r = total_cost(&t, &CostWeights::default(), &empty_map()).unwrap();
        assert!(r.total < 1e-24);
        let out = optimize(&t, &CostWeights::default(), &empty_map(), &OptimizeOptions::default(), true).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.termination, Termination::Converged);
        assert_eq!(out.trajectory, t);
    }

    #[test]
    fn zero_iterations_returns_input() {
        let map = sphere_map(Vec3::new(3.0, 0.0, 0.0), 0.5);
        let t = init_straight_line(&Vec3::zeros(), &Vec3::new(6.0, 0.0, 0.0), 15, 0.4).unwrap();
        let opts = OptimizeOptions { max_iterations: 0, ..Default::default() };
        let out = optimize(&t, &CostWeights::default(), &map, &opts, true).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.trajectory, t);
    }

    #[test]
    fn pushes_line_off_ball() {
        // Solid ball of radius 0.4 whose surface sits 0.2 m from the line.
        let mut map = OccupancyMap::new(MapConfig::default(), &Vec3::new(3.0, 0.0, 0.0)).unwrap();
        let c = Vec3::new(3.0, 0.6, 0.0);
        let (lo, hi) = (map.voxel_index(&c.add_scalar(-0.5)), map.voxel_index(&c.add_scalar(0.5)));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if (map.voxel_center([x, y, z]) - c).norm() <= 0.4 {
                        map.set_occupied([x, y, z]);
                    }
                }
            }
        }
        map.recompute_distance_field();
        let t = init_straight_line(&Vec3::zeros(), &Vec3::new(6.0, 0.0, 0.0), 20, 0.5).unwrap();
        let w = CostWeights::default();
        let clearance = |t: &BSplineTrajectory| {
            free_range(t)
                .map(|i| map.query_distance(&t.control_points()[i]).unwrap().distance)
                .fold(f64::INFINITY, f64::min)
        };
        let before = total_cost(&t, &w, &map).unwrap();
        assert!(before.collision > 0.0);
        let out = optimize(&t, &w, &map, &OptimizeOptions::default(), true).unwrap();
        assert!(out.report.total < before.total);
        assert!(clearance(&out.trajectory) > clearance(&t));
        assert!(clearance(&out.trajectory) >= w.d_safe - map.resolution(), "{}", clearance(&out.trajectory));
        let pinned: Vec<usize> = (0..3).chain(17..20).collect();
        for i in pinned {
            assert_eq!(out.trajectory.control_points()[i], t.control_points()[i]);
        }
        assert!(out.trace.windows(2).all(|w| w[1].total <= w[0].total));
    }

    #[test]
    fn cold_start_respaces_free_points() {
        let mut t = init_straight_line(&Vec3::zeros(), &Vec3::new(6.0, 0.0, 0.0), 12, 0.4).unwrap();
        t.control_points_mut()[5].y = 3.0;
        let opts = OptimizeOptions { max_iterations: 0, ..Default::default() };
        let out = optimize(&t, &CostWeights::default(), &empty_map(), &opts, false).unwrap();
        assert!(out.trajectory.control_points().iter().all(|p| p.y == 0.0));
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&[IterationRecord { iteration: 0, total: 1.5, smoothness: 1.0, collision: 0.05, feasibility: 0.0, step: 0.0 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,J,Js,Jc,Jd,step\n0,1.5,1,0.05,0,0\n");
    }
}
