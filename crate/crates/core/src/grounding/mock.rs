//! Ground-truth oracle grounder for simulation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Grounder, GroundingError, GroundingQuery, GroundingResult};
use crate::geometry::{project, Frame, PixelTarget, Point3, Vec3};
use crate::simulator::World;

/// Fraction of the camera-goal distance an obstacle must clear for the goal
/// to count as visible.
const OCCLUSION_FRACTION: f64 = 0.95;

/// Projects the true goal through the query's camera pose and perturbs it
/// with seeded Gaussian pixel noise.
///
/// The result is a pure function of (seed, query index, camera pose, goal).
#[derive(Debug, Clone)]
pub struct MockGrounder {
    world: Arc<World>,
    goal: Vec3,
    pixel_sigma: f64,
    seed: u64,
    latency: f64,
}

impl MockGrounder {
    pub fn new(world: Arc<World>, goal: Vec3, pixel_sigma: f64, seed: u64) -> Self {
        Self {
            world,
            goal,
            pixel_sigma,
            seed,
            latency: 0.0,
        }
    }

    /// Simulated latency reported with every result.
    pub fn with_latency(mut self, latency: f64) -> Self {
        self.latency = latency;
        self
    }

    fn locate(&self, query: &GroundingQuery) -> Option<PixelTarget> {
        let k = &query.intrinsics;
        let cam = query.camera_pose.inverse().transform_point(&self.goal);
        let exact = project(&Point3::from_coords(cam, Frame::Camera), k).ok()?;
        if !k.contains(&exact) {
            return None;
        }
        let origin = *query.camera_pose.translation();
        let to_goal = self.goal - origin;
        if self.world.ray_cast(&origin, &to_goal, OCCLUSION_FRACTION).is_some() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(query.index);
        let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        Some(PixelTarget::new(
            (exact.x + self.pixel_sigma * nx).clamp(0.0, k.width as f64),
            (exact.y + self.pixel_sigma * ny).clamp(0.0, k.height as f64),
        ))
    }
}

impl Grounder for MockGrounder {
    fn ground(&mut self, query: &GroundingQuery) -> Result<GroundingResult, GroundingError> {
        if query.instruction.trim().is_empty() {
            return Err(GroundingError::EmptyInstruction);
        }
        let result = match self.locate(query) {
            Some(pixel) => GroundingResult::found(pixel),
            None => GroundingResult::absent(),
        };
        Ok(result.with_latency(self.latency))
    }

    fn needs_image(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{forward_camera_rotation, CameraIntrinsics, Pose};
    use crate::grounding::GroundingStatus;
    use crate::simulator::{Aabb, Obstacle};

    fn query(pose: Pose, index: u64) -> GroundingQuery {
        GroundingQuery {
            image: None,
            instruction: "fly to the beacon".into(),
            intrinsics: CameraIntrinsics::default(),
            camera_pose: pose,
            index,
        }
    }

    fn camera() -> Pose {
        Pose::new(forward_camera_rotation(), Vec3::new(2.0, 10.0, 10.0)).unwrap()
    }

    #[test]
    fn on_axis_goal_hits_principal_point() {
        let world = Arc::new(World::empty(Aabb::cube(20.0)));
        let mut g = MockGrounder::new(world, Vec3::new(7.0, 10.0, 10.0), 0.0, 1);
        let r = g.ground(&query(camera(), 0)).unwrap();
        assert_eq!(r.pixel, Some(PixelTarget::new(320.0, 240.0)));
    }

    #[test]
    fn behind_outside_and_occluded_are_absent() {
        let world = Arc::new(World::empty(Aabb::cube(20.0)));
        let mut behind = MockGrounder::new(world.clone(), Vec3::new(0.0, 10.0, 10.0), 0.0, 1);
        assert_eq!(behind.ground(&query(camera(), 0)).unwrap().status, GroundingStatus::Absent);
        let mut aside = MockGrounder::new(world, Vec3::new(3.0, 18.0, 10.0), 0.0, 1);
        assert_eq!(aside.ground(&query(camera(), 0)).unwrap().status, GroundingStatus::Absent);
        let wall = Obstacle::Box {
            center: Vec3::new(4.0, 10.0, 10.0),
            size: Vec3::new(0.5, 3.0, 3.0),
        };
        let world = Arc::new(World::new(Aabb::cube(20.0), vec![wall]).unwrap());
        let mut blocked = MockGrounder::new(world, Vec3::new(7.0, 10.0, 10.0), 0.0, 1);
        assert_eq!(blocked.ground(&query(camera(), 0)).unwrap().status, GroundingStatus::Absent);
    }

    #[test]
    fn noise_statistics() {
        let world = Arc::new(World::empty(Aabb::cube(20.0)));
        let goal = Vec3::new(7.0, 9.0, 10.5);
        let exact = project(
            &Point3::from_coords(camera().inverse().transform_point(&goal), Frame::Camera),
            &CameraIntrinsics::default(),
        )
        .unwrap();
        let mut g = MockGrounder::new(world, goal, 5.0, 42);
        let k = CameraIntrinsics::default();
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..1000 {
            let p = g.ground(&query(camera(), i)).unwrap().pixel.unwrap();
            assert!(k.contains(&p));
            sx += p.x;
            sy += p.y;
        }
        assert!((sx / 1000.0 - exact.x).abs() < 5.0);
        assert!((sy / 1000.0 - exact.y).abs() < 5.0);
    }

    #[test]
    fn deterministic_per_index() {
        let world = Arc::new(World::empty(Aabb::cube(20.0)));
        let mut a = MockGrounder::new(world.clone(), Vec3::new(7.0, 10.0, 10.0), 3.0, 9);
        let mut b = MockGrounder::new(world, Vec3::new(7.0, 10.0, 10.0), 3.0, 9);
        let _ = b.ground(&query(camera(), 5)).unwrap();
        assert_eq!(a.ground(&query(camera(), 3)).unwrap(), b.ground(&query(camera(), 3)).unwrap());
        assert_ne!(a.ground(&query(camera(), 3)).unwrap(), a.ground(&query(camera(), 4)).unwrap());
    }
}
