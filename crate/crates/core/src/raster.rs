//! Z-buffer rasterization of labeled triangle meshes into depth, semantic,
//! normal, color and primitive-ID maps.
//!
//! Pixels are sampled at their centers (integer pixel coordinates). Coverage
//! comes from the near-plane-clipped screen polygon; depth and barycentrics
//! come from intersecting the pixel ray with the triangle's plane, which is
//! the perspective-correct value. Back faces are not culled.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::geometry::{Camera, CategoryId, ColorMap, DepthMap, Rgb, SemanticMap, TriangleMesh, Vec3};
use crate::layout::{ConditionScene, SHELL_INSTANCE};

const NEAR: f64 = 1e-4;
const BAND_ROWS: usize = 16;

/// One mesh to draw, tagged with the instance index written to the
/// primitive-ID map.
#[derive(Debug, Clone, Copy)]
pub struct RenderItem<'a> {
    pub mesh: &'a TriangleMesh,
    pub instance: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimId {
    pub instance: u32,
    pub triangle: u32,
}

#[derive(Debug, Clone)]
pub struct RenderMaps {
    pub depth: DepthMap,
    pub semantic: SemanticMap,
    /// World-space unit normals (winding order); zero on empty pixels.
    pub normal: Vec<Vec3>,
    pub color: Option<ColorMap>,
    pub prim_id: Vec<Option<PrimId>>,
}

impl RenderMaps {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn covered(&self) -> &[bool] {
        self.depth.mask()
    }
}

/// Items for every instance plus the room shell.
pub fn scene_items(scene: &ConditionScene) -> Vec<RenderItem<'_>> {
    let mut items: Vec<RenderItem> = scene
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| RenderItem {
            mesh: &inst.mesh,
            instance: i as u32,
        })
        .collect();
    items.push(RenderItem {
        mesh: &scene.shell,
        instance: SHELL_INSTANCE,
    });
    items
}

/// A triangle after camera transform and near-plane clipping.
struct Setup {
    item: u32,
    triangle: u32,
    /// Camera-frame vertices of the unclipped triangle.
    verts: [Vec3; 3],
    /// Plane `normal . p = offset` in the camera frame.
    plane_normal: Vec3,
    plane_offset: f64,
    world_normal: Vec3,
    /// Clipped screen polygon (convex, 3 or 4 vertices), counter-clockwise.
    poly: [(f64, f64); 4],
    poly_len: usize,
    bbox: (i64, i64, i64, i64),
}

fn clip_near(verts: &[Vec3; 3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = verts[i];
        let b = verts[(i + 1) % 3];
        let a_in = a.z >= NEAR;
        let b_in = b.z >= NEAR;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn setup_triangle(cam: &Camera, mesh: &TriangleMesh, item: u32, t: usize) -> Option<Setup> {
    let world = mesh.triangle_vertices(t);
    let verts = world.map(|p| cam.to_camera(&p));
    let n = (verts[1] - verts[0]).cross(&(verts[2] - verts[0]));
    let len = n.norm();
    if !(len > 0.0) {
        return None;
    }
    let plane_normal = n / len;
    let plane_offset = plane_normal.dot(&verts[0]);
    let clipped = clip_near(&verts);
    if clipped.len() < 3 {
        return None;
    }
    let k = cam.intrinsics();
    let mut poly = [(0.0, 0.0); 4];
    for (dst, p) in poly.iter_mut().zip(&clipped) {
        *dst = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    }
    let poly_len = clipped.len();
    let area2: f64 = (0..poly_len)
        .map(|i| {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % poly_len];
            x0 * y1 - x1 * y0
        })
        .sum();
    if area2.abs() < 1e-12 {
        return None;
    }
    if area2 < 0.0 {
        poly[..poly_len].reverse();
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &poly[..poly_len] {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let w = cam.width() as i64;
    let h = cam.height() as i64;
    let bbox = (
        (x0.ceil() as i64).max(0),
        (y0.ceil() as i64).max(0),
        (x1.floor() as i64).min(w - 1),
        (y1.floor() as i64).min(h - 1),
    );
    if bbox.0 > bbox.2 || bbox.1 > bbox.3 {
        return None;
    }
    Some(Setup {
        item,
        triangle: t as u32,
        verts,
        plane_normal,
        plane_offset,
        world_normal: mesh.triangle_normal(t),
        poly,
        poly_len,
        bbox,
    })
}

impl Setup {
    fn covers(&self, x: f64, y: f64) -> bool {
        let n = self.poly_len;
        (0..n).all(|i| {
            let (x0, y0) = self.poly[i];
            let (x1, y1) = self.poly[(i + 1) % n];
            let e = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
            // Pixel centers exactly on an edge count as covered.
            e >= -1e-9 * ((x1 - x0).abs() + (y1 - y0).abs())
        })
    }

    /// Camera depth of the plane along the pixel direction `(dx, dy, 1)`.
    fn depth_at(&self, dir: &Vec3) -> Option<f64> {
        let denom = self.plane_normal.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let z = self.plane_offset / denom;
        (z.is_finite() && z >= NEAR * 0.5).then_some(z)
    }

    /// Barycentric weights of camera-frame point `p` on the triangle.
    fn barycentric(&self, p: &Vec3) -> [f64; 3] {
        let [a, b, c] = self.verts;
        let n = self.plane_normal;
        let area = (b - a).cross(&(c - a)).dot(&n);
        let wa = (b - p).cross(&(c - p)).dot(&n) / area;
        let wb = (c - p).cross(&(a - p)).dot(&n) / area;
        [wa, wb, 1.0 - wa - wb]
    }
}

/// Renders `items` from `cam`. Color is interpolated from vertex colors when
/// `with_color` is set.
pub fn render(items: &[RenderItem], cam: &Camera, with_color: bool) -> RenderMaps {
    let (w, h) = (cam.width(), cam.height());
    let mut jobs: Vec<(u32, usize)> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        jobs.extend((0..item.mesh.triangle_count()).map(|t| (i as u32, t)));
    }
    let setups: Vec<Setup> = jobs
        .par_iter()
        .with_min_len(1024)
        .filter_map(|&(i, t)| setup_triangle(cam, items[i as usize].mesh, i, t))
        .collect();

    let n_bands = h.div_ceil(BAND_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_bands];
    for (s, setup) in setups.iter().enumerate() {
        let b0 = setup.bbox.1 as usize / BAND_ROWS;
        let b1 = setup.bbox.3 as usize / BAND_ROWS;
        for bin in &mut bins[b0..=b1] {
            bin.push(s as u32);
        }
    }

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut winner = vec![u32::MAX; w * h];
    zbuf.par_chunks_mut(BAND_ROWS * w)
        .zip(winner.par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .for_each(|(band, (zrow, wrow))| {
            let y_start = band * BAND_ROWS;
            let y_end = (y_start + BAND_ROWS).min(h);
            for &s in &bins[band] {
                let setup = &setups[s as usize];
                let (bx0, by0, bx1, by1) = setup.bbox;
                let ys = (by0 as usize).max(y_start);
                let ye = (by1 as usize + 1).min(y_end);
                for y in ys..ye {
                    for x in bx0 as usize..=bx1 as usize {
                        if !setup.covers(x as f64, y as f64) {
                            continue;
                        }
                        let dir = cam.pixel_direction_camera(x as f64, y as f64);
                        let Some(z) = setup.depth_at(&dir) else { continue };
                        let i = (y - y_start) * w + x;
                        if z < zrow[i] {
                            zrow[i] = z;
                            wrow[i] = s;
                        }
                    }
                }
            }
        });

    let mut depth = DepthMap::invalid(w, h);
    let mut semantic = SemanticMap::new(w, h);
    let mut normal = vec![Vec3::zeros(); w * h];
    let mut color = with_color.then(|| ColorMap::new(w, h));
    let mut prim_id = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if winner[i] == u32::MAX {
                continue;
            }
            let setup = &setups[winner[i] as usize];
            let item = &items[setup.item as usize];
            let mesh = item.mesh;
            let tri = mesh.triangles[setup.triangle as usize];
            let p = cam.pixel_direction_camera(x as f64, y as f64) * zbuf[i];
            let bary = setup.barycentric(&p);
            let dominant = (0..3).fold(0, |best, k| if bary[k] > bary[best] { k } else { best });
            let label: CategoryId = mesh.labels[tri[dominant] as usize];
            depth.set(x, y, zbuf[i]);
            semantic.set(x, y, label);
            normal[i] = setup.world_normal;
            prim_id[i] = Some(PrimId {
                instance: item.instance,
                triangle: setup.triangle,
            });
            if let Some(c) = color.as_mut() {
                let mut rgb: Rgb = [0.0; 3];
                for k in 0..3 {
                    let vc = mesh.colors[tri[k] as usize];
                    let wk = bary[k].clamp(0.0, 1.0);
                    for ch in 0..3 {
                        rgb[ch] += wk * vc[ch];
                    }
                }
                let sum: f64 = bary.iter().map(|b| b.clamp(0.0, 1.0)).sum();
                if sum > 0.0 {
                    rgb = rgb.map(|v| v / sum);
                }
                c.set(x, y, rgb);
            }
        }
    }
    RenderMaps {
        depth,
        semantic,
        normal,
        color,
        prim_id,
    }
}

/// Triangles of `instance` that own at least one pixel, and their total
/// area (each seen triangle counts in full).
pub fn visible_triangles(maps: &RenderMaps, scene: &ConditionScene, instance: u32) -> (BTreeSet<u32>, f64) {
    let set: BTreeSet<u32> = maps
        .prim_id
        .iter()
        .flatten()
        .filter(|p| p.instance == instance)
        .map(|p| p.triangle)
        .collect();
    let area = scene
        .instance(instance)
        .map_or(0.0, |inst| inst.mesh.subset_area(set.iter().map(|&t| t as usize)));
    (set, area)
}

/// Renders the full scene and returns the visible triangles of `instance`.
pub fn visible_triangles_from(scene: &ConditionScene, instance: u32, cam: &Camera) -> (BTreeSet<u32>, f64) {
    let maps = render(&scene_items(scene), cam, false);
    visible_triangles(&maps, scene, instance)
}
