//! Pinhole camera model.
//!
//! Camera frame: +z forward, +x right, +y down in the image. The pose maps
//! camera coordinates to world coordinates (`p_world = R * p_cam + t`).
//! Pixel `(u, v)` refers to the pixel whose center sits at integer
//! coordinates, so the principal point ray passes through pixel `(cx, cy)`.

use serde::{Deserialize, Serialize};

use super::{Mat3, Vec3};
use crate::error::{Error, Result};

const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Focal length `factor * width`, principal point at the image center.
    pub fn centered(width: usize, height: usize, factor: f64) -> Self {
        let f = factor * width as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }
}

/// Resolution plus intrinsics shared by every camera of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
}

impl CameraModel {
    /// `fx = fy = focal_factor * width`, principal point centered.
    pub fn centered(width: usize, height: usize, focal_factor: f64) -> Self {
        CameraModel {
            width,
            height,
            intrinsics: Intrinsics::centered(width, height, focal_factor),
        }
    }

    pub fn look_at(&self, eye: Vec3, target: Vec3) -> Result<Camera> {
        Camera::look_at(self.intrinsics, self.width, self.height, eye, target)
    }

    pub fn from_yaw_pitch(&self, eye: Vec3, yaw: f64, pitch: f64) -> Result<Camera> {
        Camera::from_yaw_pitch(self.intrinsics, self.width, self.height, eye, yaw, pitch)
    }

    pub fn with_pose(&self, pose: Pose) -> Result<Camera> {
        Camera::new(self.intrinsics, self.width, self.height, pose)
    }
}

/// Rigid world-from-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    fn check(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().any(|x| !x.is_finite()) || self.translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("camera pose", "non-finite entries"));
        }
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(Error::invalid(
                "camera pose",
                format!("rotation not orthonormal (deviation {ortho:e})"),
            ));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::invalid(
                "camera pose",
                format!("rotation determinant {det} != +1"),
            ));
        }
        Ok(())
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    /// Camera-frame depth is not positive.
    Behind { depth: f64 },
}

impl Projection {
    pub fn visible(self) -> Option<(f64, f64, f64)> {
        match self {
            Projection::Visible { u, v, depth } => Some((u, v, depth)),
            Projection::Behind { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
    pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, width: usize, height: usize, pose: Pose) -> Result<Self> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera", "zero resolution"));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::invalid(
                "camera",
                "principal point must lie strictly inside the image",
            ));
        }
        pose.check()?;
        Ok(Camera {
            intrinsics,
            width,
            height,
            pose,
        })
    }

    /// Camera at `eye` looking at `target` with zero roll (+Z world up).
    ///
    /// When the view direction is vertical the image x axis is taken along
    /// world +X.
    pub fn look_at(
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        eye: Vec3,
        target: Vec3,
    ) -> Result<Self> {
        let forward = target - eye;
        let norm = forward.norm();
        if !(norm > 1e-12) {
            return Err(Error::invalid("camera", "look-at target coincides with eye"));
        }
        let forward = forward / norm;
        let right = forward.cross(&Vec3::z());
        let right = if right.norm() < 1e-9 {
            // Vertical view: image x axis along world +X.
            Vec3::x()
        } else {
            right.normalize()
        };
        Self::from_axes(intrinsics, width, height, eye, forward, right)
    }

    /// Camera at `eye` with heading `yaw` (radians, about +Z from +X) and
    /// elevation `pitch` (radians, positive looks up). Zero roll.
    pub fn from_yaw_pitch(
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        eye: Vec3,
        yaw: f64,
        pitch: f64,
    ) -> Result<Self> {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let forward = Vec3::new(cp * cy, cp * sy, sp);
        let right = Vec3::new(sy, -cy, 0.0);
        Self::from_axes(intrinsics, width, height, eye, forward, right)
    }

    fn from_axes(
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        eye: Vec3,
        forward: Vec3,
        right: Vec3,
    ) -> Result<Self> {
        // Re-orthogonalize so the determinant check passes at 1e-9.
        let right = (right - forward * forward.dot(&right)).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, forward]);
        Camera::new(
            intrinsics,
            width,
            height,
            Pose {
                rotation,
                translation: eye,
            },
        )
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn origin(&self) -> Vec3 {
        self.pose.translation
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.pose.rotation.column(2).into_owned()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.pose.rotation.transpose() * (p - self.pose.translation)
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.pose.rotation * p + self.pose.translation
    }

    /// Camera-frame direction (not normalized, z = 1) through pixel `(u, v)`.
    pub fn pixel_direction_camera(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }

    /// Unit world-space ray through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        (self.pose.rotation * self.pixel_direction_camera(u, v)).normalize()
    }

    /// World point at camera depth `z` along pixel `(u, v)`.
    pub fn unproject_pixel(&self, u: f64, v: f64, z: f64) -> Vec3 {
        self.to_world(&(self.pixel_direction_camera(u, v) * z))
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let pc = self.to_camera(p);
        self.project_camera(&pc)
    }

    pub fn project_camera(&self, pc: &Vec3) -> Projection {
        if pc.z <= 0.0 {
            return Projection::Behind { depth: pc.z };
        }
        let k = &self.intrinsics;
        Projection::Visible {
            u: k.fx * pc.x / pc.z + k.cx,
            v: k.fy * pc.y / pc.z + k.cy,
            depth: pc.z,
        }
    }

    pub fn model(&self) -> CameraModel {
        CameraModel {
            width: self.width,
            height: self.height,
            intrinsics: self.intrinsics,
        }
    }
}

/// Plain serializable camera description used for camera files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-from-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Camera center in world coordinates.
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraRecord {
    fn from(cam: &Camera) -> Self {
        let k = cam.intrinsics();
        let r = cam.pose().rotation;
        CameraRecord {
            width: cam.width(),
            height: cam.height(),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: cam.origin().into(),
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        let rotation = Mat3::from_fn(|i, j| self.rotation[i][j]);
        Camera::new(
            Intrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy },
            self.width,
            self.height,
            Pose { rotation, translation: Vec3::from(self.translation) },
        )
    }
}
