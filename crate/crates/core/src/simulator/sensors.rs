//! Ray-cast depth camera, RGB view and omnidirectional lidar.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{CameraIntrinsics, Frame, Pose, Vec3};
use crate::grounding::Image;
use crate::mapping::PointCloud;

use super::world::World;

/// Per-pixel camera-frame z in meters; [`DepthMap::INVALID`] marks no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    max_range: f64,
}

impl DepthMap {
    pub const INVALID: f64 = 0.0;

    pub fn new_invalid(width: u32, height: u32, max_range: f64) -> Self {
        Self {
            width,
            height,
            depth: vec![Self::INVALID; width as usize * height as usize],
            max_range,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn raw(&self) -> &[f64] {
        &self.depth
    }

    /// Valid depth at integer pixel `(x, y)`.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.depth[(y * self.width + x) as usize];
        (d > 0.0 && d <= self.max_range).then_some(d)
    }

    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        let i = (y * self.width + x) as usize;
        self.depth[i] = if depth > 0.0 && depth <= self.max_range {
            depth
        } else {
            Self::INVALID
        };
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d != Self::INVALID).count()
    }

    /// Multiplicative Gaussian noise `d·(1 + η·n)`, clamped into
    /// `(0, max_range]`.
    pub fn apply_noise(&mut self, eta: f64, rng: &mut impl Rng) {
        if eta <= 0.0 {
            return;
        }
        let floor = 1e-3_f64.min(self.max_range);
        for d in self.depth.iter_mut().filter(|d| **d != Self::INVALID) {
            let n: f64 = rng.sample(StandardNormal);
            *d = (*d * (1.0 + eta * n)).clamp(floor, self.max_range);
        }
    }
}

/// What a camera ray hit first.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Hit {
    Obstacle(usize),
    Target,
}

fn cast_pixel(world: &World, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<(f64, Hit)> {
    let mut best = world
        .ray_cast(origin, dir, max_range)
        .map(|(t, i)| (t, Hit::Obstacle(i)));
    if let Some(t) = world.target().and_then(|m| m.ray_intersect(origin, dir)) {
        if t <= max_range && best.is_none_or(|(b, _)| t < b) {
            best = Some((t, Hit::Target));
        }
    }
    best
}

fn for_each_ray(
    camera_pose: &Pose,
    intrinsics: &CameraIntrinsics,
    mut f: impl FnMut(u32, u32, &Vec3, &Vec3),
) {
    let origin = *camera_pose.translation();
    for y in 0..intrinsics.height {
        for x in 0..intrinsics.width {
            // Camera-frame ray with unit z so the hit parameter is the depth.
            let dir = camera_pose.transform_vector(&intrinsics.ray(x as f64, y as f64));
            f(x, y, &origin, &dir);
        }
    }
}

/// Renders depth through every integer pixel. `camera_pose` maps camera to
/// world coordinates.
pub fn render_depth(world: &World, camera_pose: &Pose, intrinsics: &CameraIntrinsics, max_range: f64) -> DepthMap {
    let mut out = DepthMap::new_invalid(intrinsics.width, intrinsics.height, max_range);
    for_each_ray(camera_pose, intrinsics, |x, y, o, d| {
        if let Some((t, _)) = cast_pixel(world, o, d, max_range) {
            out.set(x, y, t);
        }
    });
    out
}

const SKY: [u8; 3] = [135, 180, 235];
const TARGET: [u8; 3] = [220, 30, 30];

/// Flat-shaded RGB view matching [`render_depth`] pixel for pixel.
pub fn render_view(world: &World, camera_pose: &Pose, intrinsics: &CameraIntrinsics, max_range: f64) -> Image {
    let mut img = Image::filled(intrinsics.width, intrinsics.height, SKY);
    for_each_ray(camera_pose, intrinsics, |x, y, o, d| {
        let color = match cast_pixel(world, o, d, max_range) {
            None => SKY,
            Some((_, Hit::Target)) => TARGET,
            Some((t, Hit::Obstacle(i))) => {
                let base = 90 + (i as u32 * 37 % 100) as u8;
                let shade = (1.0 - 0.5 * t / max_range).clamp(0.0, 1.0);
                let v = (base as f64 * shade) as u8;
                [v, v, (v as f64 * 0.9) as u8]
            }
        };
        img.set_pixel(x, y, color);
    });
    img
}

/// Omnidirectional scan on a uniform azimuth × elevation grid spanning
/// 360° × [−90°, +90°]. Returned points are in the lidar frame;
/// `lidar_pose` maps lidar to world coordinates.
pub fn sample_lidar(world: &World, lidar_pose: &Pose, n_azimuth: usize, n_elevation: usize, max_range: f64) -> PointCloud {
    let mut points = Vec::new();
    if n_azimuth == 0 || n_elevation == 0 {
        return PointCloud::new(points, Frame::Lidar);
    }
    let origin = *lidar_pose.translation();
    let inv = lidar_pose.inverse();
    for i in 0..n_elevation {
        let el = if n_elevation == 1 {
            0.0
        } else {
            -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / (n_elevation - 1) as f64
        };
        for j in 0..n_azimuth {
            let az = 2.0 * std::f64::consts::PI * j as f64 / n_azimuth as f64;
            let local = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dir = lidar_pose.transform_vector(&local);
            if let Some((t, _)) = world.ray_cast(&origin, &dir, max_range) {
                points.push(inv.transform_point(&(origin + dir * t)));
            }
        }
    }
    PointCloud::new(points, Frame::Lidar)
}
