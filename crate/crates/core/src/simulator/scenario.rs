//! Scenario definition and seeded random generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{forward_camera_rotation, CameraIntrinsics, Point3, Pose, Vec3};

use super::world::{Aabb, Obstacle, World};
use super::{SimError, UavState};

/// Collision radius of the vehicle (m).
pub const VEHICLE_RADIUS: f64 = 0.2;

pub const DEFAULT_INSTRUCTION: &str = "fly to the red beacon";

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub world: World,
    pub start: UavState,
    /// Ground-truth goal, hidden from the navigator.
    pub goal: Point3,
    pub instruction: String,
    /// Success threshold (m).
    pub delta: f64,
    pub camera: CameraIntrinsics,
    /// Camera-to-body transform.
    pub camera_extrinsics: Pose,
    /// Lidar-to-body transform.
    pub lidar_extrinsics: Pose,
    pub seed: u64,
}

impl Scenario {
    /// Default sensor rig: forward-looking camera and lidar at the body
    /// origin.
    pub fn new(world: World, start: UavState, goal: Vec3, instruction: impl Into<String>, delta: f64, seed: u64) -> Self {
        Self {
            world,
            start,
            goal: Point3::world(goal),
            instruction: instruction.into(),
            delta,
            camera: CameraIntrinsics::default(),
            camera_extrinsics: default_camera_extrinsics(),
            lidar_extrinsics: Pose::identity(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(SimError::InvalidGeometry(format!("delta must be positive, got {}", self.delta)));
        }
        if !self.goal.is_finite() || !self.start.position().iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidGeometry("non-finite start or goal".into()));
        }
        if self.world.check_collision(&Point3::world(self.start.position()), VEHICLE_RADIUS) {
            return Err(SimError::InvalidGeometry("start position is in collision".into()));
        }
        self.camera
            .validate()
            .map_err(|e| SimError::InvalidGeometry(e.to_string()))
    }
}

pub fn default_camera_extrinsics() -> Pose {
    Pose::new(forward_camera_rotation(), Vec3::zeros()).expect("valid rotation")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    /// Edge of the cubic world (m).
    pub world_size: f64,
    pub min_clearance: f64,
    pub d_safe: f64,
    /// Probability of placing obstacles that graze the start-goal line.
    pub corridor_probability: f64,
    pub delta: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            min_obstacles: 5,
            max_obstacles: 15,
            world_size: 20.0,
            min_clearance: 1.0,
            d_safe: 0.5,
            corridor_probability: 0.4,
            delta: 5.0,
            max_attempts: 1000,
        }
    }
}

impl ScenarioParams {
    /// Clearance required around the start and goal.
    pub fn clearance(&self) -> f64 {
        self.min_clearance.max(2.0 * self.d_safe)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.min_obstacles > self.max_obstacles || !(self.world_size >= 10.0) || !(self.delta > 0.0) {
            return Err(SimError::InvalidGeometry(format!("invalid scenario parameters {self:?}")));
        }
        Ok(())
    }
}

/// Radius around the goal whose sight lines from the start must be clear.
const SIGHT_CONE_RADIUS: f64 = 0.3;

fn perpendicular(rng: &mut impl Rng, axis: &Vec3) -> Vec3 {
    let a = axis.normalize();
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p = v - a * a.dot(&v);
        if p.norm() > 0.1 {
            return p.normalize();
        }
    }
}

fn segment_clearance(o: &Obstacle, a: &Vec3, b: &Vec3) -> f64 {
    let n = ((b - a).norm() / 0.05).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| o.signed_distance(&(a + (b - a) * (i as f64 / n as f64))))
        .fold(f64::INFINITY, f64::min)
}

fn random_free_obstacle(rng: &mut impl Rng, size: f64) -> Obstacle {
    if rng.random_bool(0.5) {
        let half = Vec3::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let center = Vec3::from_fn(|i, _| rng.random_range(half[i]..size - half[i]));
        Obstacle::Box { center, size: half * 2.0 }
    } else {
        let r = rng.random_range(0.5..2.0);
        let center = Vec3::from_fn(|_, _| rng.random_range(r..size - r));
        Obstacle::Sphere { center, radius: r }
    }
}

/// Seeded cluttered scenario in a `world_size` cube. The goal is visible
/// from the start; some obstacles may graze the straight start-goal line
/// closely enough that flying it directly collides.
pub fn gen_random_scenario(seed: u64, params: &ScenarioParams) -> Result<Scenario, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = params.world_size;
    let bounds = Aabb::cube(l);
    let clearance = params.clearance();

    for _ in 0..params.max_attempts {
        let start = Vec3::new(
            rng.random_range(0.075 * l..0.15 * l),
            rng.random_range(0.25 * l..0.75 * l),
            rng.random_range(0.3 * l..0.7 * l),
        );
        let goal = Vec3::new(
            rng.random_range(0.85 * l..0.925 * l),
            rng.random_range(0.25 * l..0.75 * l),
            rng.random_range(0.3 * l..0.7 * l),
        );
        let sight = goal - start;
        let count = rng.random_range(params.min_obstacles..=params.max_obstacles);
        let n_corridor = if rng.random_bool(params.corridor_probability) {
            rng.random_range(1..=2).min(count)
        } else {
            0
        };

        let mut obstacles = Vec::with_capacity(count);
        let mut tries = 0;
        while obstacles.len() < count && tries < 500 {
            tries += 1;
            let corridor = obstacles.len() < n_corridor;
            let o = if corridor {
                let s = rng.random_range(0.12..0.3);
                let gap = rng.random_range(0.1..0.18);
                let r = rng.random_range(0.5..1.5);
                let u = perpendicular(&mut rng, &sight);
                Obstacle::Sphere {
                    center: start + sight * s + u * (gap + r),
                    radius: r,
                }
            } else {
                random_free_obstacle(&mut rng, l)
            };
            if !bounds.contains_box(&o.bounding_box())
                || o.signed_distance(&start) < clearance
                || o.signed_distance(&goal) < clearance
            {
                continue;
            }
            if !corridor && segment_clearance(&o, &start, &goal) < 0.35 {
                continue;
            }
            obstacles.push(o);
        }
        if obstacles.len() < count {
            continue;
        }

        let world = World::new(bounds, obstacles)?;
        let ring = perpendicular(&mut rng, &sight);
        let ring2 = sight.normalize().cross(&ring);
        let visible = world.segment_clear(&start, &goal)
            && (0..8).all(|i| {
                let a = std::f64::consts::PI * i as f64 / 4.0;
                let target = goal + (ring * a.cos() + ring2 * a.sin()) * SIGHT_CONE_RADIUS;
                world.segment_clear(&start, &target)
            });
        if !visible {
            continue;
        }
        let yaw = sight.y.atan2(sight.x);
        let scenario = Scenario::new(world, UavState::at_rest(start, yaw), goal, DEFAULT_INSTRUCTION, params.delta, seed);
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(SimError::Unsatisfiable(params.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let p = ScenarioParams::default();
        for seed in 0..20 {
            let a = gen_random_scenario(seed, &p).unwrap();
            assert_eq!(a, gen_random_scenario(seed, &p).unwrap());
            let n = a.world.obstacles().len();
            assert!((p.min_obstacles..=p.max_obstacles).contains(&n));
            assert!(!a.world.check_collision(&Point3::world(a.start.position()), p.clearance() - 1e-9));
            assert!(!a.world.check_collision(&a.goal, p.clearance() - 1e-9));
            assert!(a.world.segment_clear(&a.start.position(), &a.goal.coords));
        }
    }

    #[test]
    fn some_scenarios_block_the_straight_line() {
        let p = ScenarioParams::default();
        let blocked = (0..30)
            .map(|s| gen_random_scenario(s, &p).unwrap())
            .filter(|sc| {
                let (a, b) = (sc.start.position(), sc.goal.coords);
                (0..=400).any(|i| {
                    let q = a + (b - a) * (i as f64 / 400.0);
                    sc.world.check_collision(&Point3::world(q), VEHICLE_RADIUS)
                })
            })
            .count();
        assert!(blocked > 0);
    }

    #[test]
    fn unsatisfiable_params() {
        let p = ScenarioParams {
            min_clearance: 15.0,
            max_attempts: 2,
            ..Default::default()
        };
        assert_eq!(gen_random_scenario(1, &p), Err(SimError::Unsatisfiable(2)));
    }
}
