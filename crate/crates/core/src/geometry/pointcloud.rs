use super::{Camera, DepthMap, Vec3};
use crate::error::{Error, Result};

/// Points back-projected from a depth map, each remembering its camera ray
/// and source pixel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit direction from the camera origin to the point.
    pub rays: Vec<Vec3>,
    pub pixels: Vec<(u32, u32)>,
    pub origin: Vec3,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points for which `keep(index)` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let mut out = PointCloud {
            origin: self.origin,
            ..Default::default()
        };
        for i in 0..self.len() {
            if keep(i) {
                out.points.push(self.points[i]);
                out.rays.push(self.rays[i]);
                out.pixels.push(self.pixels[i]);
            }
        }
        out
    }

    /// Distance of point `i` from its ray.
    pub fn off_ray_distance(&self, i: usize) -> f64 {
        (self.points[i] - self.origin).cross(&self.rays[i]).norm()
    }
}

/// Back-projects every valid pixel of `depth` through `cam`.
pub fn unproject(depth: &DepthMap, cam: &Camera) -> Result<PointCloud> {
    if depth.dims() != (cam.width(), cam.height()) {
        return Err(Error::Dimension(format!(
            "depth {}x{} vs camera {}x{}",
            depth.width(),
            depth.height(),
            cam.width(),
            cam.height()
        )));
    }
    let origin = cam.origin();
    let mut cloud = PointCloud {
        origin,
        ..Default::default()
    };
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let Some(z) = depth.get(x, y) else { continue };
            let ray = cam.pixel_ray(x as f64, y as f64);
            // Scale the unit ray so the point lies on it exactly; camera-z of the
            // unit ray is its cosine with the optical axis.
            let dir = cam.pixel_direction_camera(x as f64, y as f64);
            let dist = z * dir.norm();
            cloud.points.push(origin + ray * dist);
            cloud.rays.push(ray);
            cloud.pixels.push((x as u32, y as u32));
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose};

    fn cam() -> Camera {
        Camera::new(
            Intrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0 },
            200,
            100,
            Pose::identity(),
        )
        .unwrap()
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let mut d = DepthMap::invalid(200, 100);
        d.set(50, 50, 2.0);
        d.set(150, 50, 1.0);
        let pc = unproject(&d, &cam()).unwrap();
        assert_eq!(pc.len(), 2);
        assert!((pc.points[0] - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        assert!((pc.points[1] - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(pc.pixels, vec![(50, 50), (150, 50)]);
    }

    #[test]
    fn all_invalid_gives_empty_cloud() {
        let pc = unproject(&DepthMap::invalid(200, 100), &cam()).unwrap();
        assert!(pc.is_empty());
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        assert!(matches!(
            unproject(&DepthMap::invalid(10, 10), &cam()),
            Err(Error::Dimension(_))
        ));
    }
}
