//! Rigid transforms and pinhole projection.
//!
//! Frames: the camera frame is z-forward, x-right, y-down. Body and world
//! frames are z-up. A point is in front of the camera iff its camera-frame
//! z is positive.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} image")]
    PixelOutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("point lies behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Camera,
    Lidar,
    Body,
    #[default]
    World,
}

/// A 3D point tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub coords: Vec3,
    pub frame: Frame,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, frame: Frame) -> Self {
        Self {
            coords: Vec3::new(x, y, z),
            frame,
        }
    }

    pub fn from_coords(coords: Vec3, frame: Frame) -> Self {
        Self { coords, frame }
    }

    pub fn world(coords: Vec3) -> Self {
        Self::from_coords(coords, Frame::World)
    }

    pub fn x(&self) -> f64 {
        self.coords.x
    }

    pub fn y(&self) -> f64 {
        self.coords.y
    }

    pub fn z(&self) -> f64 {
        self.coords.z
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// Same coordinates, different frame label.
    pub fn retag(self, frame: Frame) -> Self {
        Self { frame, ..self }
    }
}

/// Rigid-body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose after checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite translation".into()));
        }
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(residual < ROTATION_TOLERANCE) {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (max |R^T R - I| = {residual:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "rotation determinant is {det}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the world z-axis followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self::from_rotation(Rotation3::from_euler_angles(0.0, 0.0, yaw), translation)
    }

    /// Roll, pitch, yaw (extrinsic x-y-z) plus translation.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vec3) -> Self {
        Self::from_rotation(Rotation3::from_euler_angles(roll, pitch, yaw), translation)
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn with_translation(self, translation: Vec3) -> Self {
        Self {
            translation,
            ..self
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Heading of the body x-axis projected onto the world xy-plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

/// Standard forward-looking camera mount: camera z along body x, camera x
/// along body -y, camera y along body -z.
pub fn forward_camera_rotation() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let intrinsics = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("empty image".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside the image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// The pinhole matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹ [x, y, 1]ᵀ`: the camera-frame ray through a pixel, with unit z.
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: &PixelTarget) -> bool {
        (0.0..=self.width as f64).contains(&pixel.x) && (0.0..=self.height as f64).contains(&pixel.y)
    }
}

/// Continuous pixel coordinates; x in `[0, width]`, y in `[0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelTarget {
    pub x: f64,
    pub y: f64,
}

impl PixelTarget {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// `d · K⁻¹ · [x, y, 1]ᵀ` in the camera frame.
pub fn back_project(
    pixel: &PixelTarget,
    depth: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<Point3, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if !intrinsics.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds {
            x: pixel.x,
            y: pixel.y,
            width: intrinsics.width,
            height: intrinsics.height,
        });
    }
    Ok(Point3::from_coords(
        depth * intrinsics.ray(pixel.x, pixel.y),
        Frame::Camera,
    ))
}

/// Pinhole projection of a camera-frame point. The result may fall outside
/// the image; callers check [`CameraIntrinsics::contains`].
pub fn project(point: &Point3, intrinsics: &CameraIntrinsics) -> Result<PixelTarget, GeometryError> {
    debug_assert_eq!(point.frame, Frame::Camera);
    let p = point.coords;
    if !(p.z > 0.0) {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok(PixelTarget::new(
        intrinsics.fx * p.x / p.z + intrinsics.cx,
        intrinsics.fy * p.y / p.z + intrinsics.cy,
    ))
}

/// `R_t · (R_e · p + t_e) + t_t`: sensor frame to world frame through the
/// sensor-to-body extrinsics and the body-to-world pose.
pub fn sensor_to_world(point: &Point3, sensor_extrinsics: &Pose, body_pose: &Pose) -> Point3 {
    debug_assert_ne!(point.frame, Frame::World);
    let body = sensor_extrinsics.transform_point(&point.coords);
    Point3::world(body_pose.transform_point(&body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn principal_point_lies_on_optical_axis() {
        let k = CameraIntrinsics::default();
        let p = back_project(&PixelTarget::new(k.cx, k.cy), 3.0, &k).unwrap();
        assert_eq!(p.coords, Vec3::new(0.0, 0.0, 3.0));
        assert_eq!(p.frame, Frame::Camera);
    }

    #[test]
    fn back_project_hand_example() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap();
        let p = back_project(&PixelTarget::new(150.0, 50.0), 2.0, &k).unwrap();
        assert!((p.coords - Vec3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
        let px = project(&p, &k).unwrap();
        assert!((px.x - 150.0).abs() < 1e-12 && (px.y - 50.0).abs() < 1e-12);
        assert!(matches!(
            back_project(&PixelTarget::new(150.0, 50.0), 2.0, &k100()),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn back_project_matches_inverse_matrix() {
        let k = CameraIntrinsics::default();
        let px = PixelTarget::new(17.25, 401.5);
        let via_matrix = 4.5 * k.matrix().try_inverse().unwrap() * Vec3::new(px.x, px.y, 1.0);
        let p = back_project(&px, 4.5, &k).unwrap();
        assert!((p.coords - via_matrix).norm() < 1e-12);
        assert_eq!(p.z(), 4.5);
    }

    #[test]
    fn degenerate_depths_are_rejected() {
        let k = CameraIntrinsics::default();
        let px = PixelTarget::new(10.0, 10.0);
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                back_project(&px, d, &k),
                Err(GeometryError::InvalidDepth(_))
            ));
        }
    }

    #[test]
    fn project_optical_axis_and_behind() {
        let k = CameraIntrinsics::default();
        let px = project(&Point3::new(0.0, 0.0, 7.5, Frame::Camera), &k).unwrap();
        assert_eq!((px.x, px.y), (k.cx, k.cy));
        assert!(matches!(
            project(&Point3::new(1.0, 1.0, -2.0, Frame::Camera), &k),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::default().validate().is_ok());
    }

    #[test]
    fn sensor_to_world_identity_and_translation() {
        let p = Point3::new(1.0, 2.0, 3.0, Frame::Lidar);
        let w = sensor_to_world(&p, &Pose::identity(), &Pose::identity());
        assert_eq!(w.coords, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(w.frame, Frame::World);
        let body = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let w = sensor_to_world(&Point3::new(0.0, 0.0, 0.0, Frame::Lidar), &Pose::identity(), &body);
        assert_eq!(w.coords, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn sensor_to_world_yaw() {
        let t = Vec3::new(-3.0, 0.5, 2.0);
        let body = Pose::from_yaw(FRAC_PI_2, t);
        let w = sensor_to_world(&Point3::new(1.0, 0.0, 0.0, Frame::Lidar), &Pose::identity(), &body);
        assert!((w.coords - (Vec3::new(0.0, 1.0, 0.0) + t)).norm() < 1e-12);
    }

    #[test]
    fn forward_camera_mount_is_a_rotation() {
        let pose = Pose::new(forward_camera_rotation(), Vec3::zeros()).unwrap();
        // Optical axis maps to body forward, image-right to body right (-y).
        assert_eq!(pose.transform_vector(&Vec3::z()), Vec3::x());
        assert_eq!(pose.transform_vector(&Vec3::x()), -Vec3::y());
        assert_eq!(pose.transform_vector(&Vec3::y()), -Vec3::z());
    }

    #[test]
    fn pose_rejects_non_rotations() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Pose::new(m, Vec3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.001, Vec3::zeros()).is_err());
    }

    #[test]
    fn compose_with_identity() {
        let p = Pose::from_euler(0.1, -0.4, 2.0, Vec3::new(1.0, -2.0, 0.3));
        assert_eq!(Pose::identity().compose(&p), p);
        let id = p.compose(&p.inverse());
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-9);
        assert!(id.translation().amax() < 1e-9);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -3.2..3.2f64,
            -1.5..1.5f64,
            -3.2..3.2f64,
            prop::array::uniform3(-50.0..50.0f64),
        )
            .prop_map(|(r, p, y, t)| Pose::from_euler(r, p, y, Vec3::from(t)))
    }

    proptest! {
        #[test]
        fn compose_is_sequential_application(a in arb_pose(), b in arb_pose(), p in prop::array::uniform3(-20.0..20.0f64)) {
            let p = Vec3::from(p);
            let lhs = a.compose(&b).transform_point(&p);
            let rhs = a.transform_point(&b.transform_point(&p));
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }

        #[test]
        fn constructed_poses_are_valid(a in arb_pose(), b in arb_pose()) {
            let c = a.compose(&b.inverse());
            prop_assert!(Pose::new(*c.rotation(), *c.translation()).is_ok());
        }

        #[test]
        fn project_inverts_back_project(x in 0.0..=640.0f64, y in 0.0..=480.0f64, d in 1e-3..=100.0f64) {
            let k = CameraIntrinsics::default();
            let px = project(&back_project(&PixelTarget::new(x, y), d, &k).unwrap(), &k).unwrap();
            prop_assert!((px.x - x).abs() < 1e-9 && (px.y - y).abs() < 1e-9);
        }
    }
}
