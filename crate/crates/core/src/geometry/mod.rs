//! Geometric types shared by every stage: cameras, images, meshes and point
//! clouds.
//!
//! World convention: right-handed, +Z up, floor at `z = 0`, meters.

mod camera;
mod image;
pub mod io;
mod mesh;
mod pointcloud;

pub use camera::{Camera, CameraModel, CameraRecord, Intrinsics, Pose, Projection};
pub use image::{ColorMap, DepthMap, SemanticMap};
pub use mesh::{Aabb, TriangleMesh};
pub use pointcloud::{unproject, PointCloud};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Rgb = [f64; 3];

/// Semantic category identifier as stored in semantic maps.
pub type CategoryId = u8;

pub const EMPTY: CategoryId = 0;
pub const WALL: CategoryId = 1;
pub const FLOOR: CategoryId = 2;
pub const CEILING: CategoryId = 3;
/// First identifier handed out to object categories.
pub const FIRST_OBJECT_ID: CategoryId = 16;

pub fn is_background(id: CategoryId) -> bool {
    id < FIRST_OBJECT_ID
}
