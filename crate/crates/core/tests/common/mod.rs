#![allow(dead_code)]

use prim2room::geometry::{Camera, CameraModel, DepthMap, Pose, Vec3};
use prim2room::layout::bundled;
use rand::Rng;

/// Möller–Trumbore; the hit distance along `d` if positive.
pub fn ray_triangle(o: &Vec3, d: &Vec3, [a, b, c]: &[Vec3; 3]) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Nearest hit over all triangles: distance and triangle index.
pub fn cast(o: &Vec3, d: &Vec3, tris: &[[Vec3; 3]]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, tri) in tris.iter().enumerate() {
        if let Some(t) = ray_triangle(o, d, tri) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best
}

/// Distance from `p` to the closest point of a triangle.
pub fn point_triangle_distance(p: &Vec3, [a, b, c]: &[Vec3; 3]) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// Plane at 2 m seen head-on, estimate carrying a one-period horizontal
/// ripple of 5 cm.
pub fn ripple_pair() -> (Camera, DepthMap, DepthMap) {
    let (w, h) = (256, 192);
    let cam = CameraModel::centered(w, h, 0.9).with_pose(Pose::identity()).unwrap();
    let cond = DepthMap::from_fn(w, h, |_, _| Some(2.0));
    let est = DepthMap::from_fn(w, h, |u, _| {
        Some(2.0 + 0.05 * (2.0 * std::f64::consts::PI * u as f64 / w as f64).sin())
    });
    (cam, cond, est)
}

pub fn rmse(a: &DepthMap, b: &DepthMap) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if let (Some(x), Some(y)) = (a.get_index(i), b.get_index(i)) {
            sum += (x - y).powi(2);
            n += 1;
        }
    }
    (sum / n as f64).sqrt()
}

pub const BEDROOM: &str = r#"{
  "room": {"width": 4, "depth": 3.5, "height": 2.6}, "seed": 7, "prompt": "a bedroom",
  "objects": [
    {"category": "bed", "center": [1.3, 2.4], "size": [1.6, 2.0], "rotation": 0, "height": 0.5},
    {"category": "nightstand", "center": [2.5, 3.1], "size": [0.45, 0.4], "height": 0.55},
    {"category": "cabinet", "center": [3.4, 0.8], "size": [0.6, 1.0], "rotation": 90, "height": 1.4}
  ]
}"#;

/// Convex bundled primitives addressable by category alone.
pub const CONVEX_CATEGORIES: &[(&str, &str)] = &[
    ("bed", "box-bed"),
    ("cabinet", "box-cabinet"),
    ("nightstand", "box-nightstand"),
    ("shelf", "box-shelf"),
    ("tv", "panel-tv"),
];

/// A room with one convex primitive at its native size, placed at least a
/// meter from the room center and clear of the walls.
pub fn random_single_object_layout(rng: &mut impl Rng, category: &str, primitive: &str) -> String {
    let db = bundled::database();
    let bbox = db.records[db.index_of(primitive).unwrap()].bbox;
    let reach = 0.5 * bbox[0].hypot(bbox[1]) + 0.35;
    let (w, d, h): (f64, f64, f64) = (rng.random_range(3.5..5.5), rng.random_range(3.5..5.0), rng.random_range(2.4..3.0));
    let (w, d) = (w.max(2.0 * reach + 2.4), d.max(2.0 * reach + 2.4));
    let rotation: f64 = rng.random_range(0.0..360.0);
    let (x, y) = loop {
        let x = rng.random_range(reach..w - reach);
        let y = rng.random_range(reach..d - reach);
        if (x - w / 2.0).hypot(y - d / 2.0) >= 1.0 {
            break (x, y);
        }
    };
    format!(
        r#"{{"room": {{"width": {w}, "depth": {d}, "height": {h}}}, "seed": 1,
            "objects": [{{"category": "{category}", "center": [{x}, {y}], "size": [{}, {}],
                          "rotation": {rotation}, "height": {}}}]}}"#,
        bbox[0], bbox[1], bbox[2]
    )
}
