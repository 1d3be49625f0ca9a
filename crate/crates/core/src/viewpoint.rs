//! Adaptive viewpoint selection.
//!
//! Candidate cameras on a grid inside the room all look at the target
//! primitive's center. Each is scored by
//! `area * s_area + iou * s_iou + norm * s_norm` where
//!
//! * `s_area`: fraction of the target's surface area seen for the first
//!   time from this view (full-triangle attribution),
//! * `s_iou`: IoU between the target's projected bounding box and the image
//!   rectangle shrunk by a margin,
//! * `s_norm`: mean `max(0, n . -ray)` over the target's pixels.
//!
//! Views are picked greedily until the best candidate adds less than
//! `tau_new` of new area or the view cap is hit.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraModel, Projection, Vec3};
use crate::layout::{ConditionScene, PrimitiveInstance};
use crate::raster::{render, scene_items, visible_triangles, RenderMaps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    /// Weight of the new-area term; 1 unless rescaling all terms together.
    #[serde(default = "one")]
    pub area: f64,
    pub iou: f64,
    pub norm: f64,
    /// Framing margin in pixels.
    pub margin: f64,
}

fn one() -> f64 {
    1.0
}

impl ScoreWeights {
    /// `iou = 1`, `norm = 0.5`, margin `floor(width / 16)`.
    pub fn for_width(width: usize) -> Self {
        ScoreWeights {
            area: 1.0,
            iou: 1.0,
            norm: 0.5,
            margin: (width / 16) as f64,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.area >= 0.0 && self.iou >= 0.0 && self.norm >= 0.0) {
            return Err(Error::invalid("score weights", "weights must be non-negative"));
        }
        let limit = width.min(height) as f64 / 2.0;
        if !(self.margin >= 0.0 && self.margin < limit) {
            return Err(Error::invalid("score weights", format!("margin must lie in [0, {limit})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub s_area: f64,
    pub s_iou: f64,
    pub s_norm: f64,
    pub total: f64,
}

impl ViewScore {
    fn new(s_area: f64, s_iou: f64, s_norm: f64, w: &ScoreWeights) -> Self {
        ViewScore {
            s_area,
            s_iou,
            s_norm,
            total: w.area * s_area + w.iou * s_iou + w.norm * s_norm,
        }
    }
}

/// Triangles of one primitive already seen by selected views.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservedSet {
    pub triangles: BTreeSet<u32>,
}

impl ObservedSet {
    pub fn area(&self, target: &PrimitiveInstance) -> f64 {
        target.mesh.subset_area(self.triangles.iter().map(|&t| t as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub grid_step: f64,
    pub heights: Vec<f64>,
    pub wall_clearance: f64,
    pub obstacle_margin: f64,
    /// Minimum new-area fraction for a view after the first.
    pub tau_new: f64,
    pub max_views: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            grid_step: 0.25,
            heights: vec![1.2, 1.6, 2.0],
            wall_clearance: 0.2,
            obstacle_margin: 0.15,
            tau_new: 0.05,
            max_views: 6,
        }
    }
}

/// Grid positions over the room interior at each camera height, skipping
/// positions near walls or inside any inflated primitive box. Every camera
/// looks at the target's center. Order: height, then y, then x.
pub fn sample_candidates(
    scene: &ConditionScene,
    target: &PrimitiveInstance,
    model: &CameraModel,
    params: &SelectionParams,
) -> Result<Vec<Camera>> {
    let room = scene.room_bounds;
    let ext = room.extent();
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
        return Err(Error::Selection("room is empty".into()));
    }
    let obstacles: Vec<_> = scene
        .instances
        .iter()
        .map(|i| i.bounds().inflated(params.obstacle_margin))
        .collect();
    let eps = 1e-9;
    let axis = |len: f64| -> Vec<f64> {
        let mut v = Vec::new();
        let mut k = 1usize;
        loop {
            let t = k as f64 * params.grid_step;
            if t > len - params.wall_clearance + eps {
                break;
            }
            if t >= params.wall_clearance - eps {
                v.push(t);
            }
            k += 1;
        }
        v
    };
    let xs = axis(ext.x);
    let ys = axis(ext.y);
    let mut out = Vec::new();
    for &h in params.heights.iter().filter(|&&h| h > 0.0 && h < ext.z) {
        for &y in &ys {
            for &x in &xs {
                let eye = room.min + Vec3::new(x, y, h);
                if obstacles.iter().any(|b| b.contains(&eye)) {
                    continue;
                }
                if (eye - target.center).norm() < 1e-9 {
                    continue;
                }
                out.push(model.look_at(eye, target.center)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Selection(format!(
            "no free candidate position for primitive {}",
            target.record_id
        )));
    }
    Ok(out)
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, other: &PixelRect) -> f64 {
        let inter = PixelRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
        .area();
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            (inter / union).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Bounding box of the target's in-front vertices, clipped to the image.
pub fn projected_bbox(cam: &Camera, target: &PrimitiveInstance) -> Option<PixelRect> {
    let mut rect: Option<PixelRect> = None;
    for p in &target.mesh.positions {
        if let Projection::Visible { u, v, .. } = cam.project(p) {
            let r = rect.get_or_insert(PixelRect { x0: u, y0: v, x1: u, y1: v });
            r.x0 = r.x0.min(u);
            r.y0 = r.y0.min(v);
            r.x1 = r.x1.max(u);
            r.y1 = r.y1.max(v);
        }
    }
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    rect.map(|r| PixelRect {
        x0: r.x0.clamp(0.0, w),
        y0: r.y0.clamp(0.0, h),
        x1: r.x1.clamp(0.0, w),
        y1: r.y1.clamp(0.0, h),
    })
}

pub fn range_box(cam: &Camera, margin: f64) -> PixelRect {
    PixelRect {
        x0: margin,
        y0: margin,
        x1: cam.width() as f64 - margin,
        y1: cam.height() as f64 - margin,
    }
}

fn framing_score(cam: &Camera, target: &PrimitiveInstance, margin: f64) -> f64 {
    projected_bbox(cam, target).map_or(0.0, |b| b.iou(&range_box(cam, margin)))
}

fn normal_score(maps: &RenderMaps, cam: &Camera, instance: u32) -> f64 {
    let w = maps.width();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, id) in maps.prim_id.iter().enumerate() {
        if id.is_some_and(|p| p.instance == instance) {
            let ray = cam.pixel_ray((i % w) as f64, (i / w) as f64);
            sum += maps.normal[i].dot(&-ray).max(0.0);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).clamp(0.0, 1.0)
    }
}

/// View-dependent terms that do not change as the observed set grows.
#[derive(Debug, Clone)]
struct CandidateEval {
    visible: BTreeSet<u32>,
    s_iou: f64,
    s_norm: f64,
}

fn evaluate(cam: &Camera, scene: &ConditionScene, target_index: u32, margin: f64) -> CandidateEval {
    let target = &scene.instances[target_index as usize];
    let maps = render(&scene_items(scene), cam, false);
    let (visible, _) = visible_triangles(&maps, scene, target_index);
    CandidateEval {
        s_iou: framing_score(cam, target, margin),
        s_norm: normal_score(&maps, cam, target_index),
        visible,
    }
}

fn new_area_fraction(eval: &CandidateEval, target: &PrimitiveInstance, observed: &ObservedSet) -> f64 {
    let fresh = eval
        .visible
        .iter()
        .filter(|t| !observed.triangles.contains(t))
        .map(|&t| t as usize);
    if target.total_area > 0.0 {
        (target.mesh.subset_area(fresh) / target.total_area).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Scores one camera against the target, rendering the whole scene so other
/// primitives and the shell occlude.
pub fn score_view(
    cam: &Camera,
    target_index: u32,
    scene: &ConditionScene,
    observed: &ObservedSet,
    weights: &ScoreWeights,
) -> ViewScore {
    let target = &scene.instances[target_index as usize];
    let eval = evaluate(cam, scene, target_index, weights.margin);
    ViewScore::new(new_area_fraction(&eval, target, observed), eval.s_iou, eval.s_norm, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Best remaining candidate adds less than `tau_new`.
    Coverage,
    MaxViews,
}

#[derive(Debug, Clone)]
pub struct SelectedView {
    pub camera: Camera,
    pub candidate_index: usize,
    pub score: ViewScore,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub views: Vec<SelectedView>,
    pub stop: StopReason,
    pub observed: ObservedSet,
    /// Observed area over total area after the last view.
    pub coverage: f64,
    /// Cumulative observed area after each selected view.
    pub coverage_trace: Vec<f64>,
}

fn argmax(scores: &[ViewScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.total > scores[best].total {
            best = i;
        }
    }
    best
}

/// Greedy view selection for the primitive at `target_index`.
pub fn select_viewpoints(
    target_index: u32,
    scene: &ConditionScene,
    weights: &ScoreWeights,
    model: &CameraModel,
    params: &SelectionParams,
) -> Result<Selection> {
    weights.validate(model.width, model.height)?;
    let target = scene
        .instance(target_index)
        .ok_or_else(|| Error::Selection(format!("no primitive with index {target_index}")))?;
    let candidates = sample_candidates(scene, target, model, params)?;
    select_from_candidates(target_index, scene, weights, &candidates, params)
}

/// Greedy selection over a fixed candidate list.
pub fn select_from_candidates(
    target_index: u32,
    scene: &ConditionScene,
    weights: &ScoreWeights,
    candidates: &[Camera],
    params: &SelectionParams,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Selection("empty candidate list".into()));
    }
    let target = &scene.instances[target_index as usize];
    let evals: Vec<CandidateEval> = candidates
        .par_iter()
        .map(|cam| evaluate(cam, scene, target_index, weights.margin))
        .collect();

    let mut observed = ObservedSet::default();
    let mut views: Vec<SelectedView> = Vec::new();
    let mut trace = Vec::new();
    let max_views = params.max_views.max(1);
    let stop = loop {
        let scores: Vec<ViewScore> = evals
            .iter()
            .map(|e| ViewScore::new(new_area_fraction(e, target, &observed), e.s_iou, e.s_norm, weights))
            .collect();
        let best = argmax(&scores);
        if !views.is_empty() && scores[best].s_area < params.tau_new {
            break StopReason::Coverage;
        }
        observed.triangles.extend(evals[best].visible.iter().copied());
        trace.push(observed.area(target));
        views.push(SelectedView {
            camera: candidates[best],
            candidate_index: best,
            score: scores[best],
        });
        if views.len() >= max_views {
            break StopReason::MaxViews;
        }
    };
    let coverage = if target.total_area > 0.0 {
        observed.area(target) / target.total_area
    } else {
        0.0
    };
    Ok(Selection {
        views,
        stop,
        observed,
        coverage,
        coverage_trace: trace,
    })
}

/// Cameras from `poses` that see the target's center inside the image.
pub fn cameras_facing(poses: &[Camera], target: &PrimitiveInstance) -> Vec<Camera> {
    poses
        .iter()
        .filter(|cam| {
            cam.project(&target.center).visible().is_some_and(|(u, v, _)| {
                u >= 0.0 && v >= 0.0 && u <= cam.width() as f64 - 1.0 && v <= cam.height() as f64 - 1.0
            })
        })
        .copied()
        .collect()
}

/// Fraction of the target's area seen from any of `cams`.
pub fn coverage_of(cams: &[Camera], scene: &ConditionScene, target_index: u32) -> f64 {
    let target = &scene.instances[target_index as usize];
    let mut seen = ObservedSet::default();
    for cam in cams {
        let maps = render(&scene_items(scene), cam, false);
        seen.triangles.extend(visible_triangles(&maps, scene, target_index).0);
    }
    if target.total_area > 0.0 {
        seen.area(target) / target.total_area
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{bundled, parse_layout};

    fn scene(doc: &str) -> ConditionScene {
        ConditionScene::build(&parse_layout(doc).unwrap(), &bundled::database()).unwrap()
    }

    #[test]
    fn iou_of_half_range() {
        let range = PixelRect { x0: 32.0, y0: 32.0, x1: 480.0, y1: 352.0 };
        let b = PixelRect { x0: 32.0, y0: 32.0, x1: 256.0, y1: 352.0 };
        assert!((b.iou(&range) - 0.5).abs() < 1e-15);
        assert_eq!(range.iou(&range), 1.0);
    }

    #[test]
    fn four_by_three_room_has_495_candidates() {
        let s = scene(
            r#"{"room": {"width": 4, "depth": 3, "height": 2.5},
                "objects": [{"category": "nightstand", "center": [0.3, 0.3], "size": [0.1, 0.1], "height": 0.1}]}"#,
        );
        // The tiny target's inflated box only reaches (0.5, 0.5, 0.25): below every camera height.
        let model = CameraModel::centered(64, 48, 0.9);
        let cams = sample_candidates(&s, &s.instances[0], &model, &SelectionParams::default()).unwrap();
        assert_eq!(cams.len(), 15 * 11 * 3);
        for c in &cams {
            let (u, v, _) = c.project(&s.instances[0].center).visible().unwrap();
            assert!((u - 32.0).abs() < 1e-6 && (v - 24.0).abs() < 1e-6);
        }
    }

    #[test]
    fn room_filling_target_has_no_candidates() {
        let s = scene(
            r#"{"room": {"width": 4, "depth": 3, "height": 2.5},
                "objects": [{"category": "cabinet", "center": [2, 1.5], "size": [3.7, 2.7], "height": 2.4}]}"#,
        );
        let model = CameraModel::centered(64, 48, 0.9);
        let err = sample_candidates(&s, &s.instances[0], &model, &SelectionParams::default()).unwrap_err();
        assert!(matches!(err, Error::Selection(_)));
    }

    #[test]
    fn max_views_one_returns_global_argmax() {
        let s = scene(
            r#"{"room": {"width": 4, "depth": 3, "height": 2.5},
                "objects": [{"category": "cabinet", "center": [1.2, 1.0], "size": [0.8, 0.45]}]}"#,
        );
        let model = CameraModel::centered(64, 48, 0.9);
        let params = SelectionParams { max_views: 1, ..Default::default() };
        let w = ScoreWeights::for_width(64);
        let sel = select_viewpoints(0, &s, &w, &model, &params).unwrap();
        assert_eq!(sel.views.len(), 1);
        assert_eq!(sel.stop, StopReason::MaxViews);
        let cands = sample_candidates(&s, &s.instances[0], &model, &params).unwrap();
        let best = cands
            .iter()
            .map(|c| score_view(c, 0, &s, &ObservedSet::default(), &w).total)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sel.views[0].score.total, best);
    }
}
