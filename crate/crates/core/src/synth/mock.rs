use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, DepthContext, SynthesisRequest};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CategoryId, ColorMap, DepthMap, Rgb, SemanticMap, Vec3, EMPTY, FIRST_OBJECT_ID};

const PALETTE_LEN: usize = 24;
const EMPTY_COLOR: Rgb = [0.5, 0.5, 0.5];

fn hsv(h_deg: f64, s: f64, v: f64) -> Rgb {
    let c = v * s;
    let h = h_deg / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// 24 colors with hues 15° apart; no channel exceeds 0.9.
pub fn palette() -> [Rgb; PALETTE_LEN] {
    std::array::from_fn(|i| hsv(15.0 * i as f64, 0.75, 0.9))
}

/// Shell categories take the first three entries, objects cycle through
/// the remaining 21. Empty pixels are neutral gray.
pub fn palette_color(id: CategoryId) -> Rgb {
    let idx = match id {
        EMPTY => return EMPTY_COLOR,
        1..=3 => id as usize - 1,
        id if id >= FIRST_OBJECT_ID => 3 + (id - FIRST_OBJECT_ID) as usize % (PALETTE_LEN - 3),
        _ => return EMPTY_COLOR,
    };
    palette()[idx]
}

fn hue(c: Rgb) -> Option<f64> {
    let max = c[0].max(c[1]).max(c[2]);
    let min = c[0].min(c[1]).min(c[2]);
    let d = max - min;
    if d <= 1e-9 {
        return None;
    }
    let h = if max == c[0] {
        ((c[1] - c[2]) / d).rem_euclid(6.0)
    } else if max == c[1] {
        (c[2] - c[0]) / d + 2.0
    } else {
        (c[0] - c[1]) / d + 4.0
    };
    Some(60.0 * h)
}

/// Whether `color` is `palette_color(id)` up to the mock's brightness
/// modulation: same hue within 7.5° (half the palette spacing) and a
/// brightness ratio in [0.3, 1.15].
pub fn palette_match(color: Rgb, id: CategoryId) -> bool {
    let p = palette_color(id);
    let (Some(hc), Some(hp)) = (hue(color), hue(p)) else {
        return false;
    };
    let dh = (hc - hp).rem_euclid(360.0);
    let dh = dh.min(360.0 - dh);
    let k = (color[0] * p[0] + color[1] * p[1] + color[2] * p[2]) / (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    dh <= 7.5 && (0.3..=1.15).contains(&k)
}

/// Per-pixel unit normals from depth by differencing neighbors of the same
/// semantic label (central where possible), oriented toward the camera.
pub fn depth_normals(depth: &DepthMap, semantic: &SemanticMap, cam: &Camera) -> Vec<Option<Vec3>> {
    let (w, h) = depth.dims();
    let point = |x: usize, y: usize| depth.get(x, y).map(|z| cam.unproject_pixel(x as f64, y as f64, z));
    let same = |x: usize, y: usize, id: CategoryId| semantic.get(x, y) == id && depth.is_valid(x, y);
    let diff = |x: usize, y: usize, dx: isize, dy: isize| -> Option<Vec3> {
        let id = semantic.get(x, y);
        let step = |s: isize| {
            let nx = x as isize + s * dx;
            let ny = y as isize + s * dy;
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && same(nx as usize, ny as usize, id))
                .then(|| point(nx as usize, ny as usize).expect("valid neighbor"))
        };
        let here = point(x, y)?;
        match (step(-1), step(1)) {
            (Some(a), Some(b)) => Some(b - a),
            (None, Some(b)) => Some(b - here),
            (Some(a), None) => Some(here - a),
            (None, None) => None,
        }
    };
    let mut out = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let (Some(du), Some(dv)) = (diff(x, y, 1, 0), diff(x, y, 0, 1)) else { continue };
            let n = du.cross(&dv);
            let len = n.norm();
            if len <= 1e-12 {
                continue;
            }
            let n = n / len;
            let ray = cam.pixel_ray(x as f64, y as f64);
            out[y * w + x] = Some(if n.dot(&ray) > 0.0 { -n } else { n });
        }
    }
    out
}

/// Two seeded plane waves per category over world position, in [-1, 1].
#[derive(Debug, Clone, Copy)]
struct Texture {
    waves: [(Vec3, f64); 2],
}

impl Texture {
    fn new(seed: u64, id: CategoryId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5851_F42D_4C95_7F2D_u64.wrapping_mul(id as u64 + 1)));
        let waves = std::array::from_fn(|_| {
            let dir = loop {
                let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let n = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n;
                }
            };
            let freq = rng.random_range(4.0..12.0);
            (dir * freq, rng.random_range(0.0..std::f64::consts::TAU))
        });
        Texture { waves }
    }

    fn eval(&self, p: &Vec3) -> f64 {
        0.5 * self.waves.iter().map(|(k, phi)| (k.dot(p) + phi).sin()).sum::<f64>()
    }
}

/// Parameters of the mock depth distortion
/// `d = cond + s * ((cond - beta) / gamma + A sin(2π n u / w + φ) - cond)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MockDepth {
    pub strength: f64,
    pub gamma: f64,
    pub beta: f64,
    pub amplitude: f64,
    pub periods: f64,
}

impl Default for MockDepth {
    fn default() -> Self {
        MockDepth { strength: 1.0, gamma: 1.25, beta: 0.2, amplitude: 0.03, periods: 2.0 }
    }
}

impl MockDepth {
    /// Ripple phase drawn from `seed`.
    pub fn phase(seed: u64) -> f64 {
        ChaCha8Rng::seed_from_u64(seed).random_range(0.0..std::f64::consts::TAU)
    }

    pub fn distort(&self, cond: &DepthMap, seed: u64) -> DepthMap {
        let phi = Self::phase(seed);
        let w = cond.width() as f64;
        DepthMap::from_fn(cond.width(), cond.height(), |u, v| {
            let c = cond.get(u, v)?;
            let ripple = self.amplitude * (std::f64::consts::TAU * self.periods * u as f64 / w + phi).sin();
            let d = (c - self.beta) / self.gamma + ripple;
            Some(if self.strength == 0.0 { c } else { c + self.strength * (d - c) })
        })
    }
}

/// Deterministic backend: palette colors shaded by the condition geometry,
/// and depth as a known distortion of the condition depth.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub depth: MockDepth,
}

impl MockBackend {
    pub fn new(depth: MockDepth) -> Self {
        MockBackend { depth }
    }
}

impl Backend for MockBackend {
    fn name(&self) -> String {
        "mock".into()
    }

    fn inpaint(&mut self, req: &SynthesisRequest) -> Result<ColorMap> {
        let cam = req.camera.as_ref().ok_or_else(|| Error::Config("mock inpainting needs the request camera".into()))?;
        let (w, h) = req.dims();
        let normals = depth_normals(&req.depth, &req.semantic, cam);
        let mut textures: Vec<Option<Texture>> = vec![None; 256];
        let mut out = req.color.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !req.mask[i] {
                    continue;
                }
                let id = req.semantic.get(x, y);
                let base = palette_color(id);
                let color = match (req.depth.get(x, y), normals[i]) {
                    (Some(z), Some(n)) if id != EMPTY => {
                        let p = cam.unproject_pixel(x as f64, y as f64, z);
                        let ray = cam.pixel_ray(x as f64, y as f64);
                        let lambert = 0.4 + 0.6 * n.dot(&-ray).max(0.0);
                        let tex = textures[id as usize].get_or_insert_with(|| Texture::new(req.seed, id));
                        let m = lambert * (1.0 + 0.1 * tex.eval(&p));
                        base.map(|c| (c * m).clamp(0.0, 1.0))
                    }
                    _ => base,
                };
                out.set_index(i, color);
            }
        }
        Ok(out)
    }

    fn estimate_depth(&mut self, _color: &ColorMap, context: Option<DepthContext<'_>>) -> Result<DepthMap> {
        let ctx = context.ok_or_else(|| Error::Config("mock depth estimation needs the condition depth".into()))?;
        Ok(self.depth.distort(ctx.condition, ctx.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Pose};

    #[test]
    fn palette_hues_are_distinct() {
        let p = palette();
        for (i, c) in p.iter().enumerate() {
            assert!(c.iter().all(|v| *v <= 0.9 + 1e-12));
            assert!((hue(*c).unwrap() - 15.0 * i as f64).abs() < 1e-9);
        }
        assert_eq!(palette_color(16), p[3]);
        assert_eq!(palette_color(16 + 21), p[3]);
        assert_eq!(palette_color(1), p[0]);
    }

    #[test]
    fn palette_match_accepts_shading_and_rejects_neighbors() {
        let p = palette_color(17);
        assert!(palette_match(p.map(|c| c * 0.4 * 0.9), 17));
        assert!(palette_match(p.map(|c| c * 1.1), 17));
        assert!(!palette_match(palette_color(18), 17));
        assert!(!palette_match(EMPTY_COLOR, 17));
    }

    #[test]
    fn zero_strength_is_identity() {
        let cond = DepthMap::from_fn(8, 6, |x, _| Some(1.0 + x as f64));
        let m = MockDepth { strength: 0.0, ..Default::default() };
        assert_eq!(m.distort(&cond, 9), cond);
    }

    #[test]
    fn default_distortion_closed_form() {
        let cond = DepthMap::from_fn(16, 4, |x, y| if x == 3 && y == 1 { None } else { Some(2.0 + 0.1 * y as f64) });
        let out = MockDepth::default().distort(&cond, 42);
        let phi = MockDepth::phase(42);
        for y in 0..4 {
            for x in 0..16 {
                let Some(c) = cond.get(x, y) else {
                    assert!(!out.is_valid(x, y));
                    continue;
                };
                let expect = (c - 0.2) / 1.25 + 0.03 * (2.0 * std::f64::consts::TAU * x as f64 / 16.0 + phi).sin();
                assert!((out.get(x, y).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frontal_wall_normals_face_camera() {
        let cam = CameraModel::centered(20, 16, 0.9).with_pose(Pose::identity()).unwrap();
        let depth = DepthMap::from_fn(20, 16, |_, _| Some(3.0));
        let sem = SemanticMap::from_vec(20, 16, vec![1; 320]).unwrap();
        for n in depth_normals(&depth, &sem, &cam) {
            assert!((n.unwrap() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn mock_without_context_is_a_config_error() {
        let err = MockBackend::default().estimate_depth(&ColorMap::new(2, 2), None);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
