//! Aerial vision-language navigation: ground a target in the image, lift it
//! to a 3D waypoint, and fly there along an optimized B-spline.

pub mod bspline;
pub mod geometry;
pub mod grounding;
pub mod harness;
pub mod mapping;
pub mod optimizer;
pub mod pipeline;
pub mod simulator;

pub use geometry::{Frame, Point3, Pose, Vec3};
