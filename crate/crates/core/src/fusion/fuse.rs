use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_background, Aabb, Camera, CategoryId, ColorMap, DepthMap, Rgb, SemanticMap, TriangleMesh, Vec3, EMPTY};
use crate::raster::{render, PrimId, RenderItem};

/// Which generation stage produced a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Foreground,
    Background,
}

/// The growing output mesh with a stage tag per vertex.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneMesh {
    pub mesh: TriangleMesh,
    pub stages: Vec<Stage>,
}

impl SceneMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn triangle_count(&self) -> usize {
        self.mesh.triangle_count()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if self.stages.len() != self.mesh.vertex_count() {
            return Err(Error::invalid("scene mesh", "stage tag count differs from vertex count"));
        }
        Ok(())
    }

    pub fn push_vertex(&mut self, p: Vec3, color: Rgb, label: CategoryId, stage: Stage) -> u32 {
        self.mesh.positions.push(p);
        self.mesh.colors.push(color);
        self.mesh.labels.push(label);
        self.stages.push(stage);
        (self.mesh.positions.len() - 1) as u32
    }
}

/// Drops every vertex labeled wall, floor, ceiling or empty together with
/// its triangles; remaining vertices keep their order.
pub fn remove_background(mesh: &SceneMesh) -> SceneMesh {
    let m = &mesh.mesh;
    let mut remap = vec![u32::MAX; m.vertex_count()];
    let mut out = SceneMesh::new();
    for i in 0..m.vertex_count() {
        if !is_background(m.labels[i]) {
            remap[i] = out.push_vertex(m.positions[i], m.colors[i], m.labels[i], mesh.stages[i]);
        }
    }
    for tri in &m.triangles {
        let t = tri.map(|v| remap[v as usize]);
        if t.iter().all(|&v| v != u32::MAX) {
            out.mesh.triangles.push(t);
        }
    }
    out
}

/// The current mesh seen from a new camera.
#[derive(Debug, Clone)]
pub struct PartialView {
    pub color: ColorMap,
    pub depth: DepthMap,
    /// `true` where the mesh does not cover the pixel.
    pub mask: Vec<bool>,
    pub prim_id: Vec<Option<PrimId>>,
}

impl PartialView {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn render_partial(mesh: &SceneMesh, cam: &Camera) -> PartialView {
    let maps = render(&[RenderItem { mesh: &mesh.mesh, instance: 0 }], cam, true);
    PartialView {
        color: maps.color.expect("color requested"),
        mask: maps.depth.mask().iter().map(|v| !v).collect(),
        depth: maps.depth,
        prim_id: maps.prim_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Edge-stretch factor λ.
    pub edge_factor: f64,
    /// Maximum angle between a triangle normal and the view ray, degrees.
    pub grazing_deg: f64,
    /// Depth tolerance for reusing existing geometry at seams, meters.
    pub seam_tol: f64,
    /// Margin around the room box outside which no vertex is created.
    pub room_margin: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { edge_factor: 3.0, grazing_deg: 80.0, seam_tol: 0.02, room_margin: 0.1 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.edge_factor > 0.0 && self.grazing_deg > 0.0 && self.grazing_deg < 90.0 && self.seam_tol > 0.0 && self.room_margin >= 0.0;
        if !ok {
            return Err(Error::Config("fusion thresholds must be positive (grazing angle below 90°)".into()));
        }
        Ok(())
    }
}

/// One frame to fuse: synthesized color, warped depth and condition
/// semantics from `cam`, plus the pixels to fill.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a> {
    pub color: &'a ColorMap,
    pub depth: &'a DepthMap,
    pub semantic: &'a SemanticMap,
    pub cam: &'a Camera,
    pub mask: &'a [bool],
    pub stage: Stage,
    /// Vertices outside this box are not created.
    pub clip: Option<Aabb>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuseStats {
    pub vertices_added: usize,
    pub triangles_added: usize,
    pub filtered_edge: usize,
    pub filtered_grazing: usize,
    pub seam_reused: usize,
}

impl std::ops::AddAssign for FuseStats {
    fn add_assign(&mut self, o: FuseStats) {
        self.vertices_added += o.vertices_added;
        self.triangles_added += o.triangles_added;
        self.filtered_edge += o.filtered_edge;
        self.filtered_grazing += o.filtered_grazing;
        self.seam_reused += o.seam_reused;
    }
}

/// Renders the current mesh from the frame's camera, then fuses.
pub fn fuse(mesh: &mut SceneMesh, frame: &FrameInputs, params: &FusionParams) -> Result<FuseStats> {
    let existing = render_partial(mesh, frame.cam);
    fuse_with(mesh, &existing, frame, params)
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    Unset,
    Vertex(u32),
    /// Seam pixel resolved to a point but not yet materialized.
    Pending(Vec3),
    Unusable,
}

/// Triangulates the masked pixels of a frame into `mesh`.
///
/// Each 2×2 pixel quad whose pixels all carry a point and that touches the
/// mask yields two triangles facing the camera. Unmasked pixels of such a
/// quad are seams: they reuse the nearest vertex of the already rendered
/// triangle when depths agree within `seam_tol`, otherwise get a new vertex.
/// Triangles with an edge longer than `edge_factor` times the local point
/// spacing, or seen at a grazing angle, are dropped. In the foreground
/// stage only object-labeled vertices are tagged foreground.
pub fn fuse_with(mesh: &mut SceneMesh, existing: &PartialView, frame: &FrameInputs, params: &FusionParams) -> Result<FuseStats> {
    params.validate()?;
    let cam = frame.cam;
    let (w, h) = (cam.width(), cam.height());
    frame.color.ensure_dims((w, h))?;
    frame.semantic.ensure_dims((w, h))?;
    if frame.depth.dims() != (w, h) || existing.depth.dims() != (w, h) || frame.mask.len() != w * h {
        return Err(Error::Dimension("fusion inputs must share the camera resolution".into()));
    }
    let mut stats = FuseStats::default();
    if !frame.mask.iter().any(|&m| m) {
        return Ok(stats);
    }

    let point: Vec<Option<Vec3>> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let z = frame.depth.get_index(i)?;
            if frame.semantic.get(x, y) == EMPTY {
                return None;
            }
            let p = cam.unproject_pixel(x as f64, y as f64, z);
            frame.clip.is_none_or(|b| b.contains(&p)).then_some(p)
        })
        .collect();
    let usable = |i: usize| point[i].is_some() && (frame.mask[i] || existing.prim_id[i].is_some());

    let spacing: Vec<f64> = (0..w * h)
        .map(|i| {
            let Some(p) = point[i] else { return 0.0 };
            let (x, y) = (i % w, i / w);
            let mut lens = Vec::with_capacity(4);
            for (nx, ny) in [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)] {
                if nx < w && ny < h {
                    if let Some(q) = point[ny * w + nx] {
                        lens.push((q - p).norm());
                    }
                }
            }
            median(&mut lens)
        })
        .collect();

    let mut slots = vec![Slot::Unset; w * h];
    let cos_limit = params.grazing_deg.to_radians().cos();
    let origin = cam.origin();

    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let quad = [y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1];
            if !quad.iter().any(|&i| frame.mask[i]) || !quad.iter().all(|&i| usable(i)) {
                continue;
            }
            for slot in quad {
                resolve(slot, &mut slots, mesh, existing, frame, &point, params, &mut stats);
            }
            if quad.iter().any(|&i| slots[i] == Slot::Unusable) {
                continue;
            }
            let [a, b, c, d] = quad;
            for tri in [[a, c, b], [b, c, d]] {
                let pos = tri.map(|i| slot_position(slots[i], mesh));
                let scale = tri.iter().map(|&i| spacing[i]).fold(0.0, f64::max);
                let limit = params.edge_factor * scale;
                let longest = (0..3).map(|k| (pos[(k + 1) % 3] - pos[k]).norm()).fold(0.0, f64::max);
                if longest > limit {
                    stats.filtered_edge += 1;
                    continue;
                }
                let n = (pos[1] - pos[0]).cross(&(pos[2] - pos[0]));
                let view = (pos[0] + pos[1] + pos[2]) / 3.0 - origin;
                let (nn, vn) = (n.norm(), view.norm());
                if nn <= 1e-18 || vn <= 0.0 || (n.dot(&view) / (nn * vn)).abs() < cos_limit {
                    stats.filtered_grazing += 1;
                    continue;
                }
                let ids = tri.map(|i| materialize(i, &mut slots, mesh, frame, &mut stats));
                if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                    stats.filtered_grazing += 1;
                    continue;
                }
                mesh.mesh.triangles.push(ids);
                stats.triangles_added += 1;
            }
        }
    }
    Ok(stats)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[allow(clippy::too_many_arguments)]
fn resolve(
    i: usize,
    slots: &mut [Slot],
    mesh: &SceneMesh,
    existing: &PartialView,
    frame: &FrameInputs,
    point: &[Option<Vec3>],
    params: &FusionParams,
    stats: &mut FuseStats,
) {
    if slots[i] != Slot::Unset {
        return;
    }
    let p = point[i].expect("usable pixel");
    if frame.mask[i] {
        slots[i] = Slot::Pending(p);
        return;
    }
    let (Some(prim), Some(rendered), Some(warped)) = (existing.prim_id[i], existing.depth.get_index(i), frame.depth.get_index(i)) else {
        slots[i] = Slot::Unusable;
        return;
    };
    if (rendered - warped).abs() <= params.seam_tol {
        let w = frame.cam.width();
        let surface = frame.cam.unproject_pixel((i % w) as f64, (i / w) as f64, rendered);
        let tri = mesh.mesh.triangles[prim.triangle as usize];
        let nearest = tri
            .into_iter()
            .min_by(|&a, &b| {
                let da = (mesh.mesh.positions[a as usize] - surface).norm_squared();
                let db = (mesh.mesh.positions[b as usize] - surface).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("triangle has vertices");
        slots[i] = Slot::Vertex(nearest);
        stats.seam_reused += 1;
    } else {
        slots[i] = Slot::Pending(p);
    }
}

fn slot_position(slot: Slot, mesh: &SceneMesh) -> Vec3 {
    match slot {
        Slot::Vertex(v) => mesh.mesh.positions[v as usize],
        Slot::Pending(p) => p,
        Slot::Unset | Slot::Unusable => unreachable!("resolved before use"),
    }
}

fn materialize(i: usize, slots: &mut [Slot], mesh: &mut SceneMesh, frame: &FrameInputs, stats: &mut FuseStats) -> u32 {
    match slots[i] {
        Slot::Vertex(v) => v,
        Slot::Pending(p) => {
            let w = frame.cam.width();
            let (x, y) = (i % w, i / w);
            let label = frame.semantic.get(x, y);
            let stage = match frame.stage {
                Stage::Foreground if !is_background(label) => Stage::Foreground,
                _ => Stage::Background,
            };
            let v = mesh.push_vertex(p, frame.color.get(x, y), label, stage);
            slots[i] = Slot::Vertex(v);
            stats.vertices_added += 1;
            v
        }
        Slot::Unset | Slot::Unusable => unreachable!("resolved before use"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Pose, FIRST_OBJECT_ID, WALL};

    fn cam() -> Camera {
        CameraModel::centered(40, 32, 0.9).with_pose(Pose::identity()).unwrap()
    }

    fn frame_maps(depth: impl Fn(usize, usize) -> f64, label: CategoryId) -> (ColorMap, DepthMap, SemanticMap) {
        let mut color = ColorMap::new(40, 32);
        for i in 0..40 * 32 {
            color.set_index(i, [0.2, 0.4, 0.6]);
        }
        let depth = DepthMap::from_fn(40, 32, |x, y| Some(depth(x, y)));
        (color, depth, SemanticMap::from_vec(40, 32, vec![label; 40 * 32]).unwrap())
    }

    fn fuse_full(mesh: &mut SceneMesh, maps: &(ColorMap, DepthMap, SemanticMap), stage: Stage) -> FuseStats {
        let c = cam();
        let existing = render_partial(mesh, &c);
        let frame = FrameInputs {
            color: &maps.0,
            depth: &maps.1,
            semantic: &maps.2,
            cam: &c,
            mask: &existing.mask,
            stage,
            clip: None,
        };
        fuse_with(mesh, &existing, &frame, &FusionParams::default()).unwrap()
    }

    #[test]
    fn flat_wall_becomes_one_sheet() {
        let mut mesh = SceneMesh::new();
        let stats = fuse_full(&mut mesh, &frame_maps(|_, _| 2.0, WALL), Stage::Background);
        assert_eq!(stats.filtered_edge + stats.filtered_grazing, 0);
        assert_eq!(stats.vertices_added, 40 * 32);
        assert_eq!(stats.triangles_added, 2 * 39 * 31);
        mesh.validate().unwrap();
        let after = render_partial(&mesh, &cam());
        assert_eq!(after.masked_count(), 0);
        // Fused triangles face the camera.
        assert!(mesh.mesh.triangle_normal(0).z < 0.0);
    }

    #[test]
    fn second_pass_adds_nothing() {
        let mut mesh = SceneMesh::new();
        let maps = frame_maps(|_, _| 2.0, WALL);
        fuse_full(&mut mesh, &maps, Stage::Background);
        let again = fuse_full(&mut mesh, &maps, Stage::Background);
        assert_eq!(again, FuseStats::default());
    }

    #[test]
    fn depth_step_is_not_bridged() {
        let mut mesh = SceneMesh::new();
        let stats = fuse_full(&mut mesh, &frame_maps(|x, _| if x < 20 { 2.0 } else { 3.0 }, WALL), Stage::Background);
        assert_eq!(stats.filtered_edge, 2 * 31);
        for tri in &mesh.mesh.triangles {
            let zs = tri.map(|v| mesh.mesh.positions[v as usize].z);
            assert!(zs.iter().all(|z| (z - zs[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn foreground_stage_tags_objects_only() {
        let mut mesh = SceneMesh::new();
        fuse_full(&mut mesh, &frame_maps(|_, _| 2.0, FIRST_OBJECT_ID), Stage::Foreground);
        assert!(mesh.stages.iter().all(|s| *s == Stage::Foreground));
        let mut wall = SceneMesh::new();
        fuse_full(&mut wall, &frame_maps(|_, _| 2.0, WALL), Stage::Foreground);
        assert!(wall.stages.iter().all(|s| *s == Stage::Background));
    }

    #[test]
    fn remove_background_examples() {
        let mut fg = SceneMesh::new();
        fuse_full(&mut fg, &frame_maps(|_, _| 2.0, FIRST_OBJECT_ID), Stage::Foreground);
        assert_eq!(remove_background(&fg), fg);
        let mut bg = SceneMesh::new();
        fuse_full(&mut bg, &frame_maps(|_, _| 2.0, WALL), Stage::Background);
        assert!(remove_background(&bg).mesh.positions.is_empty());
        let mut mixed = fg.clone();
        let n_bg = bg.vertex_count();
        let offset = mixed.vertex_count() as u32;
        for i in 0..n_bg {
            mixed.push_vertex(bg.mesh.positions[i], bg.mesh.colors[i], bg.mesh.labels[i], bg.stages[i]);
        }
        mixed.mesh.triangles.extend(bg.mesh.triangles.iter().map(|t| t.map(|v| v + offset)));
        let kept = remove_background(&mixed);
        assert_eq!(kept.vertex_count(), mixed.vertex_count() - n_bg);
        kept.validate().unwrap();
    }

    #[test]
    fn seams_reuse_matching_geometry() {
        let mut mesh = SceneMesh::new();
        let maps = frame_maps(|_, _| 2.0, WALL);
        let c = cam();
        // Fuse the left half first, then the full frame.
        let half: Vec<bool> = (0..40 * 32).map(|i| i % 40 < 20).collect();
        let existing = render_partial(&mesh, &c);
        let frame = FrameInputs {
            color: &maps.0,
            depth: &maps.1,
            semantic: &maps.2,
            cam: &c,
            mask: &half,
            stage: Stage::Background,
            clip: None,
        };
        fuse_with(&mut mesh, &existing, &frame, &FusionParams::default()).unwrap();
        let before = mesh.vertex_count();
        let stats = fuse_full(&mut mesh, &maps, Stage::Background);
        assert!(stats.seam_reused > 0);
        assert_eq!(mesh.vertex_count() - before, stats.vertices_added);
        assert_eq!(render_partial(&mesh, &c).masked_count(), 0);
    }
}
