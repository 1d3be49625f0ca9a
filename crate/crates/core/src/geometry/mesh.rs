use super::{CategoryId, Mat3, Rgb, Vec3};
use crate::error::{Error, Result};

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.extend(p);
        }
        b
    }

    pub fn extend(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn inflated(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Triangle mesh with per-vertex color and semantic label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub colors: Vec<Rgb>,
    pub labels: Vec<CategoryId>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Geometry-only mesh: vertices get a neutral gray and label 0.
    pub fn from_geometry(positions: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = positions.len();
        let mesh = TriangleMesh {
            positions,
            colors: vec![[0.5; 3]; n],
            labels: vec![0; n],
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n || self.labels.len() != n {
            return Err(Error::invalid("mesh", "per-vertex attribute length mismatch"));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("mesh", format!("vertex {i} is not finite")));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(Error::invalid("mesh", format!("triangle {t} index out of range")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid("mesh", format!("triangle {t} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn with_label(mut self, label: CategoryId) -> Self {
        self.labels.iter_mut().for_each(|l| *l = label);
        self
    }

    pub fn with_color(mut self, color: Rgb) -> Self {
        self.colors.iter_mut().for_each(|c| *c = color);
        self
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.positions[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal from the winding order (zero for degenerate triangles).
    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle_vertices(t);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area of the listed triangles (duplicates counted once per listing).
    pub fn subset_area(&self, ids: impl IntoIterator<Item = usize>) -> f64 {
        ids.into_iter().map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.positions)
    }

    /// Applies `p -> rotation * p + translation` to every vertex.
    pub fn transformed(&self, rotation: &Mat3, translation: &Vec3) -> TriangleMesh {
        let mut out = self.clone();
        for p in &mut out.positions {
            *p = rotation * *p + translation;
        }
        out
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.positions.len() as u32;
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        self.labels.extend_from_slice(&other.labels);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + offset)));
    }

    /// Axis-aligned box `[min, max]` as 12 outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { min.x } else { max.x },
                    if i & 2 == 0 { min.y } else { max.y },
                    if i & 4 == 0 { min.z } else { max.z },
                )
            })
            .collect();
        // Quads listed counter-clockwise seen from outside.
        const QUADS: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let triangles = QUADS
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh::from_geometry(corners, triangles).expect("cuboid is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn right_triangle_area() {
        let m = TriangleMesh::from_geometry(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!((m.surface_area() - 0.5).abs() < 1e-15);
        assert_eq!(m.subset_area([]), 0.0);
    }

    #[test]
    fn unit_cube_area_is_six() {
        let cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        assert_eq!(cube.triangle_count(), 12);
        assert!((cube.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn cuboid_normals_point_outward() {
        let cube = TriangleMesh::cuboid(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        for t in 0..cube.triangle_count() {
            let [a, b, c] = cube.triangle_vertices(t);
            let centroid = (a + b + c) / 3.0;
            assert!(cube.triangle_normal(t).dot(&centroid) > 0.0, "triangle {t}");
        }
    }

    #[test]
    fn area_invariant_under_rigid_motion() {
        let cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.5));
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let moved = cube.transformed(&r, &Vec3::new(5.0, -3.0, 1.0));
        let rel = (moved.surface_area() - cube.surface_area()).abs() / cube.surface_area();
        assert!(rel < 1e-9);
    }

    #[test]
    fn rejects_degenerate_and_out_of_range() {
        let p = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::from_geometry(p.clone(), vec![[0, 0, 1]]).is_err());
        assert!(TriangleMesh::from_geometry(p.clone(), vec![[0, 1, 3]]).is_err());
        let mut bad = p;
        bad[1].x = f64::NAN;
        assert!(TriangleMesh::from_geometry(bad, vec![[0, 1, 2]]).is_err());
    }
}
