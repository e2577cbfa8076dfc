//! Static obstacle geometry and exact ray queries.

use crate::geometry::{Point3, Vec3};

use super::SimError;

/// Axis-aligned box given by its corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, SimError> {
        if !(min.iter().chain(max.iter()).all(|v| v.is_finite())) || (0..3).any(|i| min[i] > max[i]) {
            return Err(SimError::InvalidGeometry(format!("degenerate bounds {min:?} .. {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn cube(size: f64) -> Self {
        Self {
            min: Vec3::zeros(),
            max: Vec3::repeat(size),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    Box { center: Vec3, size: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl Obstacle {
    pub fn bounding_box(&self) -> Aabb {
        match *self {
            Obstacle::Box { center, size } => Aabb {
                min: center - size / 2.0,
                max: center + size / 2.0,
            },
            Obstacle::Sphere { center, radius } => Aabb {
                min: center.add_scalar(-radius),
                max: center.add_scalar(radius),
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            Obstacle::Box { center, size } => {
                center.iter().all(|v| v.is_finite()) && size.iter().all(|v| v.is_finite() && *v > 0.0)
            }
            Obstacle::Sphere { center, radius } => {
                center.iter().all(|v| v.is_finite()) && radius.is_finite() && radius > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidGeometry(format!("{self:?}")))
        }
    }

    /// Signed distance to the surface; negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Obstacle::Box { center, size } => {
                let q = (p - center).abs() - size / 2.0;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                outside + inside
            }
            Obstacle::Sphere { center, radius } => (p - center).norm() - radius,
        }
    }

    /// Smallest `t >= 0` with `origin + t·dir` on the surface. `dir` need
    /// not be normalized.
    pub fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match *self {
            Obstacle::Box { center, size } => {
                let lo = center - size / 2.0;
                let hi = center + size / 2.0;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < lo[i] || origin[i] > hi[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (lo[i] - origin[i]) / dir[i];
                    let b = (hi[i] - origin[i]) / dir[i];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far || t_far < 0.0 {
                    None
                } else if t_near >= 0.0 {
                    Some(t_near)
                } else {
                    Some(t_far)
                }
            }
            Obstacle::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 || a == 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / a;
                let t1 = (-b + sq) / a;
                if t0 >= 0.0 {
                    Some(t0)
                } else if t1 >= 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

/// Camera-facing disc marking the navigation target. Only cameras see it;
/// it is not an obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMarker {
    pub center: Vec3,
    pub radius: f64,
}

impl TargetMarker {
    /// Parameter of the hit on the disc facing `origin`, if any.
    pub fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.center - origin;
        let denom = n.dot(dir);
        if denom <= 0.0 {
            return None;
        }
        let t = n.norm_squared() / denom;
        let hit = origin + dir * t;
        ((hit - self.center).norm() <= self.radius).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    bounds: Aabb,
    obstacles: Vec<Obstacle>,
    target: Option<TargetMarker>,
}

impl World {
    pub fn new(bounds: Aabb, obstacles: Vec<Obstacle>) -> Result<Self, SimError> {
        for (i, o) in obstacles.iter().enumerate() {
            o.validate()?;
            if !bounds.contains_box(&o.bounding_box()) {
                return Err(SimError::InvalidGeometry(format!("obstacle {i} extends outside the world bounds")));
            }
        }
        Ok(Self {
            bounds,
            obstacles,
            target: None,
        })
    }

    pub fn empty(bounds: Aabb) -> Self {
        Self {
            bounds,
            obstacles: Vec::new(),
            target: None,
        }
    }

    pub fn with_target(mut self, target: TargetMarker) -> Self {
        self.target = Some(target);
        self
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn target(&self) -> Option<&TargetMarker> {
        self.target.as_ref()
    }

    /// Nearest obstacle hit along the ray within `max_t`, with the obstacle
    /// index.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, o) in self.obstacles.iter().enumerate() {
            if let Some(t) = o.ray_intersect(origin, dir) {
                if t <= max_t && best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Signed distance to the nearest obstacle surface; infinite when empty.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// True iff `p` lies within `radius` of any obstacle surface or inside
    /// one. Touching counts as collision.
    pub fn check_collision(&self, p: &Point3, radius: f64) -> bool {
        self.signed_distance(&p.coords) <= radius
    }

    /// Whether the straight segment `a`→`b` stays clear of obstacles.
    pub fn segment_clear(&self, a: &Vec3, b: &Vec3) -> bool {
        self.ray_cast(a, &(b - a), 1.0).is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Obstacle {
        Obstacle::Box {
            center: Vec3::new(5.0, 5.0, 5.0),
            size: Vec3::repeat(2.0),
        }
    }

    #[test]
    fn box_signed_distance() {
        let b = unit_box();
        assert_eq!(b.signed_distance(&Vec3::new(5.0, 5.0, 5.0)), -1.0);
        assert_eq!(b.signed_distance(&Vec3::new(8.0, 5.0, 5.0)), 2.0);
        assert!((b.signed_distance(&Vec3::new(7.0, 7.0, 5.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ray_hits() {
        let b = unit_box();
        let o = Vec3::new(0.0, 5.0, 5.0);
        assert_eq!(b.ray_intersect(&o, &Vec3::x()), Some(4.0));
        assert_eq!(b.ray_intersect(&o, &(-Vec3::x())), None);
        assert_eq!(b.ray_intersect(&o, &(Vec3::x() * 2.0)), Some(2.0));
        // From inside, the exit is reported.
        assert_eq!(b.ray_intersect(&Vec3::new(5.0, 5.0, 5.0), &Vec3::x()), Some(1.0));
        let s = Obstacle::Sphere {
            center: Vec3::new(5.0, 0.0, 0.0),
            radius: 1.0,
        };
        assert_eq!(s.ray_intersect(&Vec3::zeros(), &Vec3::x()), Some(4.0));
        assert_eq!(s.ray_intersect(&Vec3::zeros(), &Vec3::y()), None);
    }

    #[test]
    fn collision_boundary_counts() {
        let w = World::new(Aabb::cube(10.0), vec![unit_box()]).unwrap();
        assert!(w.check_collision(&Point3::world(Vec3::new(5.0, 5.0, 5.0)), 0.0));
        assert!(!w.check_collision(&Point3::world(Vec3::new(7.0, 5.0, 5.0) + Vec3::x() * 0.5), 0.3));
        assert!(w.check_collision(&Point3::world(Vec3::new(6.5, 5.0, 5.0)), 0.5));
    }

    #[test]
    fn rejects_out_of_bounds() {
        let far = Obstacle::Sphere {
            center: Vec3::new(9.5, 5.0, 5.0),
            radius: 1.0,
        };
        assert!(World::new(Aabb::cube(10.0), vec![far]).is_err());
        let bad = Obstacle::Sphere {
            center: Vec3::new(5.0, 5.0, 5.0),
            radius: -1.0,
        };
        assert!(World::new(Aabb::cube(10.0), vec![bad]).is_err());
    }

    #[test]
    fn marker_faces_origin() {
        let m = TargetMarker {
            center: Vec3::new(10.0, 0.0, 0.0),
            radius: 0.5,
        };
        assert_eq!(m.ray_intersect(&Vec3::zeros(), &Vec3::x()), Some(10.0));
        assert!(m.ray_intersect(&Vec3::zeros(), &Vec3::new(1.0, 0.1, 0.0)).is_none());
        assert!(m.ray_intersect(&Vec3::zeros(), &(-Vec3::x())).is_none());
    }
}
