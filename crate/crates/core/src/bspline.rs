//! Uniform B-spline trajectories.
//!
//! Control point `i` of a degree-`k` spline starting at `start_time` owns
//! the knot `start_time + (i - k)·Δt`; the valid domain is
//! `[start_time, start_time + (N + 1 - k)·Δt]`.

use thiserror::Error;

use crate::geometry::Vec3;

pub const DEFAULT_DEGREE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("t = {t} outside the spline domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("derivative order {order} exceeds degree {degree}")]
    OrderTooHigh { order: usize, degree: usize },
    #[error("{got} control points given, degree {degree} needs at least {need}")]
    TooFewPoints { got: usize, need: usize, degree: usize },
    #[error("knot interval must be positive and finite, got {0}")]
    InvalidKnotInterval(f64),
    #[error("control points must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineTrajectory {
    control_points: Vec<Vec3>,
    degree: usize,
    knot_interval: f64,
    start_time: f64,
}

impl BSplineTrajectory {
    pub fn new(
        control_points: Vec<Vec3>,
        degree: usize,
        knot_interval: f64,
        start_time: f64,
    ) -> Result<Self, SplineError> {
        if control_points.len() < degree + 1 {
            return Err(SplineError::TooFewPoints {
                got: control_points.len(),
                need: degree + 1,
                degree,
            });
        }
        if !(knot_interval > 0.0 && knot_interval.is_finite()) {
            return Err(SplineError::InvalidKnotInterval(knot_interval));
        }
        if !start_time.is_finite() || control_points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(SplineError::NonFinite);
        }
        Ok(Self {
            control_points,
            degree,
            knot_interval,
            start_time,
        })
    }

    pub fn cubic(control_points: Vec<Vec3>, knot_interval: f64, start_time: f64) -> Result<Self, SplineError> {
        Self::new(control_points, DEFAULT_DEGREE, knot_interval, start_time)
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn control_points_mut(&mut self) -> &mut [Vec3] {
        &mut self.control_points
    }

    pub fn into_control_points(self) -> Vec<Vec3> {
        self.control_points
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knot_interval(&self) -> f64 {
        self.knot_interval
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn with_start_time(self, start_time: f64) -> Self {
        Self { start_time, ..self }
    }

    /// Same control points, different knot interval.
    pub fn with_knot_interval(self, knot_interval: f64) -> Result<Self, SplineError> {
        Self::new(self.control_points, self.degree, knot_interval, self.start_time)
    }

    pub fn segment_count(&self) -> usize {
        self.control_points.len() - self.degree
    }

    pub fn duration(&self) -> f64 {
        self.segment_count() as f64 * self.knot_interval
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn first_point(&self) -> Vec3 {
        self.control_points[0]
    }

    pub fn last_point(&self) -> Vec3 {
        *self.control_points.last().unwrap()
    }

    /// Clamps `t` into the domain when it lies within rounding distance of it.
    fn local_parameter(&self, t: f64) -> Result<(usize, f64), SplineError> {
        let (start, end) = (self.start_time, self.end_time());
        let slack = 1e-9 * start.abs().max(end.abs()).max(1.0);
        if !(t >= start - slack && t <= end + slack) {
            return Err(SplineError::OutOfDomain { t, start, end });
        }
        let x = ((t - start) / self.knot_interval).clamp(0.0, self.segment_count() as f64);
        let segment = (x.floor() as usize).min(self.segment_count() - 1);
        Ok((segment, x))
    }

    /// De Boor evaluation on the uniform knot vector.
    pub fn evaluate(&self, t: f64) -> Result<Vec3, SplineError> {
        let (segment, x) = self.local_parameter(t)?;
        let k = self.degree;
        let mut d: Vec<Vec3> = self.control_points[segment..=segment + k].to_vec();
        for r in 1..=k {
            for j in (r..=k).rev() {
                let knot = (j + segment) as f64 - k as f64;
                let alpha = (x - knot) / (k + 1 - r) as f64;
                d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
            }
        }
        Ok(d[k])
    }

    /// Control points of the `order`-th derivative, obtained by repeated
    /// differencing `(P[i+1] - P[i]) / Δt`.
    pub fn derivative_control_points(&self, order: usize) -> Result<Vec<Vec3>, SplineError> {
        if order > self.degree {
            return Err(SplineError::OrderTooHigh {
                order,
                degree: self.degree,
            });
        }
        let mut pts = self.control_points.clone();
        for _ in 0..order {
            pts = pts
                .windows(2)
                .map(|w| (w[1] - w[0]) / self.knot_interval)
                .collect();
        }
        Ok(pts)
    }

    /// The derivative as a spline of degree `k - order` on the same domain.
    pub fn derivative_spline(&self, order: usize) -> Result<Self, SplineError> {
        let pts = self.derivative_control_points(order)?;
        Ok(Self {
            control_points: pts,
            degree: self.degree - order,
            knot_interval: self.knot_interval,
            start_time: self.start_time,
        })
    }

    pub fn evaluate_derivative(&self, t: f64, order: usize) -> Result<Vec3, SplineError> {
        if order == 0 {
            return self.evaluate(t);
        }
        self.derivative_spline(order)?.evaluate(t)
    }

    /// Position, velocity and acceleration at `t`.
    pub fn state_at(&self, t: f64) -> Result<(Vec3, Vec3, Vec3), SplineError> {
        let p = self.evaluate(t)?;
        let v = if self.degree >= 1 {
            self.evaluate_derivative(t, 1)?
        } else {
            Vec3::zeros()
        };
        let a = if self.degree >= 2 {
            self.evaluate_derivative(t, 2)?
        } else {
            Vec3::zeros()
        };
        Ok((p, v, a))
    }

    /// `count` uniformly spaced samples `(t, position)` over the domain.
    pub fn sample(&self, count: usize) -> Vec<(f64, Vec3)> {
        let count = count.max(2);
        (0..count)
            .map(|i| {
                let t = self.start_time + self.duration() * i as f64 / (count - 1) as f64;
                (t, self.evaluate(t).expect("sample inside domain"))
            })
            .collect()
    }

    /// Index of the segment containing `t` (clamped to the domain).
    pub fn segment_at(&self, t: f64) -> usize {
        let x = ((t - self.start_time) / self.knot_interval).max(0.0);
        (x.floor() as usize).min(self.segment_count() - 1)
    }
}

/// Control points evenly spaced from `start` to `goal`, inclusive.
pub fn linspace_control_points(start: &Vec3, goal: &Vec3, n_points: usize) -> Vec<Vec3> {
    match n_points {
        0 => Vec::new(),
        1 => vec![*start],
        n => (0..n)
            .map(|i| start + (goal - start) * (i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Straight-line cubic from `start` to `goal`.
///
/// With at least `2k` control points the first `k` coincide with `start`
/// and the last `k` with `goal`, so the curve starts and ends at rest on
/// them; the remaining points are evenly spaced in between. With fewer
/// points the control points are simply evenly spaced.
pub fn init_straight_line(
    start: &Vec3,
    goal: &Vec3,
    n_points: usize,
    knot_interval: f64,
) -> Result<BSplineTrajectory, SplineError> {
    let k = DEFAULT_DEGREE;
    if n_points < k + 1 {
        return Err(SplineError::TooFewPoints {
            got: n_points,
            need: k + 1,
            degree: k,
        });
    }
    let pts = if n_points >= 2 * k {
        let span = (n_points - 2 * k + 1) as f64;
        (0..n_points)
            .map(|i| {
                let s = ((i as f64 - (k - 1) as f64) / span).clamp(0.0, 1.0);
                start + (goal - start) * s
            })
            .collect()
    } else {
        linspace_control_points(start, goal, n_points)
    };
    BSplineTrajectory::cubic(pts, knot_interval, 0.0)
}

/// Knot interval that traverses `length` meters over `n_points - k`
/// segments at `cruise_speed`.
pub fn default_knot_interval(length: f64, n_points: usize, cruise_speed: f64) -> f64 {
    let segments = n_points.saturating_sub(DEFAULT_DEGREE).max(1) as f64;
    let dt = length / (segments * cruise_speed);
    if dt > 0.0 && dt.is_finite() {
        dt
    } else {
        1.0
    }
}

/// First three cubic control points that reproduce position `p`, velocity
/// `v` and acceleration `a` at the start of the first segment.
pub fn cubic_start_points(p: &Vec3, v: &Vec3, a: &Vec3, knot_interval: f64) -> [Vec3; 3] {
    let dt = knot_interval;
    let p1 = p - a * (dt * dt / 6.0);
    let p0 = p1 + (a * (dt * dt) - v * (2.0 * dt)) / 2.0;
    let p2 = p1 + (a * (dt * dt) + v * (2.0 * dt)) / 2.0;
    [p0, p1, p2]
}
