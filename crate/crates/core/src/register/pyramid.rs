use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::chamfer::{chamfer_with_grad, Correspondences};
use super::kdtree::KdTree;
use super::mlp::{encode, Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::geometry::{unproject, Camera, DepthMap, Mat3, PointCloud, Projection, Vec3};

/// How a point may move: along its camera ray (`Ndr`) or by a free
/// per-point rigid motion (`Ndp`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpMode {
    Ndr,
    Ndp,
}

impl WarpMode {
    fn outputs(self) -> usize {
        match self {
            WarpMode::Ndr => 1,
            WarpMode::Ndp => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub levels: usize,
    pub max_iterations: usize,
    pub learning_rate: f64,
    /// Window (iterations) for the early-stopping test.
    pub patience: usize,
    /// Minimum relative loss improvement over `patience` iterations.
    pub min_improvement: f64,
    /// Chamfer truncation distance, meters.
    pub trunc: f64,
    /// Saturation bound on each level's displacement, meters.
    pub max_step: f64,
    /// Approximate cap on source points used for optimization.
    pub max_points: usize,
    pub init_std: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            levels: 6,
            max_iterations: 300,
            learning_rate: 0.01,
            patience: 20,
            min_improvement: 1e-4,
            trunc: 0.3,
            max_step: 0.5,
            max_points: 2048,
            init_std: 1e-4,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.min_improvement, self.trunc, self.max_step, self.init_std];
        if self.levels == 0 || self.patience == 0 || self.max_points == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("registration parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform map of world coordinates into a unit cube centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if !lo.x.is_finite() {
            return Normalization { center: Vec3::zeros(), scale: 1.0 };
        }
        let scale = (hi - lo).max();
        Normalization { center: (lo + hi) * 0.5, scale: if scale > 1e-9 { scale } else { 1.0 } }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.center
    }
}

/// `R(ω) x` (Rodrigues) and its Jacobian with respect to `ω`.
pub fn rotate_with_jacobian(w: &Vec3, x: &Vec3) -> (Vec3, Mat3) {
    let t2 = w.norm_squared();
    let t = t2.sqrt();
    let (a, b, ap, bp) = if t < 1e-2 {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = t.sin_cos();
        let one_minus_c = 2.0 * (0.5 * t).sin().powi(2);
        (s / t, one_minus_c / t2, (t * c - s) / (t2 * t), (t * s - 2.0 * one_minus_c) / (t2 * t2))
    };
    let c = 1.0 - t2 * b;
    let wx = w.cross(x);
    let wd = w.dot(x);
    let rx = x * c + wx * a + w * (b * wd);
    let jac = x * (-a * w).transpose() + wx * (ap * w).transpose() - x.cross_matrix() * a
        + (Mat3::identity() * wd + w * x.transpose()) * b
        + w * (wd * bp * w).transpose();
    (rx, jac)
}

/// One pyramid level: a warp network fed with the encoding at frequency
/// `2^level`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpLevel {
    pub level: usize,
    pub mode: WarpMode,
    /// False when the level failed to improve the loss and is skipped.
    pub active: bool,
    net: Mlp,
}

/// Forward-pass state needed for [`WarpLevel::backward`].
#[derive(Debug, Clone)]
pub struct LevelCache {
    mlp: MlpCache,
    out: DMatrix<f64>,
}

fn saturate(o: f64, c: f64) -> (f64, f64) {
    let t = (o / c).tanh();
    (c * t, 1.0 - t * t)
}

impl WarpLevel {
    pub fn new(level: usize, mode: WarpMode, std: f64, seed: u64) -> Self {
        let seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(level as u64);
        WarpLevel { level, mode, active: true, net: Mlp::new(mode.outputs(), std, seed) }
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn run(&self, pos: &[Vec3]) -> (DMatrix<f64>, MlpCache) {
        let rows: Vec<_> = pos.iter().map(|p| encode(p, self.level)).collect();
        self.net.forward(Mlp::input_matrix(&rows))
    }

    /// Signed along-ray offsets (NDR only), saturated to `±clamp`.
    pub fn ray_offsets(&self, pos: &[Vec3], clamp: f64) -> Vec<f64> {
        debug_assert_eq!(self.mode, WarpMode::Ndr);
        let (out, _) = self.run(pos);
        (0..pos.len()).map(|i| saturate(out[(i, 0)], clamp).0).collect()
    }

    /// Displaced positions. Coordinates are normalized; `clamp` bounds the
    /// displacement (NDR) or each translation component (NDP).
    pub fn forward(&self, pos: &[Vec3], rays: &[Vec3], clamp: f64) -> (Vec<Vec3>, LevelCache) {
        let (out, mlp) = self.run(pos);
        let moved = (0..pos.len())
            .map(|i| match self.mode {
                WarpMode::Ndr => pos[i] + rays[i] * saturate(out[(i, 0)], clamp).0,
                WarpMode::Ndp => {
                    let w = Vec3::new(out[(i, 0)], out[(i, 1)], out[(i, 2)]);
                    let t = Vec3::from_fn(|a, _| saturate(out[(i, 3 + a)], clamp).0);
                    rotate_with_jacobian(&w, &pos[i]).0 + t
                }
            })
            .collect();
        (moved, LevelCache { mlp, out })
    }

    /// Parameter gradient given the loss gradient at the displaced positions.
    pub fn backward(&self, pos: &[Vec3], rays: &[Vec3], cache: &LevelCache, clamp: f64, grad: &[Vec3]) -> Vec<f64> {
        let n = pos.len();
        let out = &cache.out;
        let d_out = match self.mode {
            WarpMode::Ndr => DMatrix::from_fn(n, 1, |i, _| grad[i].dot(&rays[i]) * saturate(out[(i, 0)], clamp).1),
            WarpMode::Ndp => {
                let mut d = DMatrix::zeros(n, 6);
                for i in 0..n {
                    let w = Vec3::new(out[(i, 0)], out[(i, 1)], out[(i, 2)]);
                    let (_, jac) = rotate_with_jacobian(&w, &pos[i]);
                    let dw = jac.transpose() * grad[i];
                    for a in 0..3 {
                        d[(i, a)] = dw[a];
                        d[(i, 3 + a)] = grad[i][a] * saturate(out[(i, 3 + a)], clamp).1;
                    }
                }
                d
            }
        };
        self.net.backward(&cache.mlp, &d_out)
    }

    /// Loss and parameter gradient of the truncated Chamfer objective with
    /// the correspondences held fixed.
    pub fn loss_and_grad(
        &self,
        pos: &[Vec3],
        rays: &[Vec3],
        tgt: &[Vec3],
        corr: &Correspondences,
        trunc: f64,
        clamp: f64,
    ) -> (f64, Vec<f64>) {
        let (moved, cache) = self.forward(pos, rays, clamp);
        let (loss, g) = chamfer_with_grad(&moved, tgt, corr, trunc);
        (loss, self.backward(pos, rays, &cache, clamp, &g))
    }
}

/// Composition of warp levels in a shared normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationPyramid {
    pub mode: WarpMode,
    pub levels: Vec<WarpLevel>,
    pub normalization: Normalization,
    /// Displacement bound in normalized units.
    pub clamp: f64,
}

const CHUNK: usize = 8192;

impl DeformationPyramid {
    /// Applies every active level in order to world points.
    ///
    /// In NDR mode each result is `origin + ray * s` with `s` the source
    /// distance plus the accumulated offsets, so it stays on its ray exactly.
    pub fn warp(&self, points: &[Vec3], rays: &[Vec3], origin: Vec3) -> Vec<Vec3> {
        let mut result = Vec::with_capacity(points.len());
        for (pts, rs) in points.chunks(CHUNK).zip(rays.chunks(CHUNK)) {
            let mut pos: Vec<Vec3> = pts.iter().map(|p| self.normalization.apply(p)).collect();
            match self.mode {
                WarpMode::Ndr => {
                    let mut total = vec![0.0; pts.len()];
                    for level in self.levels.iter().filter(|l| l.active) {
                        let off = level.ray_offsets(&pos, self.clamp);
                        for i in 0..pts.len() {
                            total[i] += off[i];
                            pos[i] += rs[i] * off[i];
                        }
                    }
                    for i in 0..pts.len() {
                        let dist = (pts[i] - origin).dot(&rs[i]);
                        let moved = dist + total[i] * self.normalization.scale;
                        // Never let a point cross the camera center.
                        let moved = if moved > 1e-3 * dist { moved } else { 1e-3 * dist };
                        result.push(origin + rs[i] * moved);
                    }
                }
                WarpMode::Ndp => {
                    for level in self.levels.iter().filter(|l| l.active) {
                        pos = level.forward(&pos, rs, self.clamp).0;
                    }
                    result.extend(pos.iter().map(|p| self.normalization.invert(p)));
                }
            }
        }
        result
    }
}

/// Output of [`register`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub mode: WarpMode,
    pub warped: DepthMap,
    /// Warped points in source order; `pixels` and `rays` are the source's.
    pub points: PointCloud,
    /// Linear index of the source pixel that supplied each output pixel.
    pub source_pixel: Vec<Option<u32>>,
    /// Loss before any level, m².
    pub initial_loss: f64,
    /// Loss at the end of each level, m².
    pub level_losses: Vec<f64>,
    pub level_accepted: Vec<bool>,
    pub iterations: Vec<usize>,
    /// Per-level loss history, m².
    pub loss_curves: Vec<Vec<f64>>,
    pub optimized_points: usize,
    /// Set when no target overlapped the source; the input is returned as is.
    pub noop: bool,
}

impl RegistrationResult {
    pub fn final_loss(&self) -> f64 {
        self.level_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn noop_result(est: &DepthMap, src: PointCloud, mode: WarpMode) -> RegistrationResult {
    let w = est.width();
    let mut source_pixel = vec![None; est.len()];
    for &(x, y) in &src.pixels {
        let i = y as usize * w + x as usize;
        source_pixel[i] = Some(i as u32);
    }
    RegistrationResult {
        mode,
        warped: est.clone(),
        points: src,
        source_pixel,
        initial_loss: 0.0,
        level_losses: Vec::new(),
        level_accepted: Vec::new(),
        iterations: Vec::new(),
        loss_curves: Vec::new(),
        optimized_points: 0,
        noop: true,
    }
}

/// Non-rigidly registers an (affinely aligned) depth estimate onto target
/// clouds through a deformation pyramid.
///
/// Targets are clouds unprojected from the same camera, so their `pixels`
/// index this image: only source pixels covered by some target take part
/// in the optimization, subsampled on a regular pixel grid shared with the
/// targets. The fitted field then moves every source pixel.
pub fn register(
    est_aligned: &DepthMap,
    cam: &Camera,
    targets: &[PointCloud],
    mode: WarpMode,
    params: &RegistrationParams,
    seed: u64,
) -> Result<RegistrationResult> {
    params.validate()?;
    let src = unproject(est_aligned, cam)?;
    if src.is_empty() {
        return Err(Error::invalid("registration source", "estimated depth has no valid pixels"));
    }
    let (w, h) = est_aligned.dims();
    let mut covered = vec![false; w * h];
    for t in targets {
        for &(x, y) in &t.pixels {
            if (x as usize) < w && (y as usize) < h {
                covered[y as usize * w + x as usize] = true;
            }
        }
    }
    let is_covered = |&(x, y): &(u32, u32)| covered[y as usize * w + x as usize];
    let n_covered = src.pixels.iter().filter(|p| is_covered(p)).count();
    if n_covered == 0 {
        return Ok(noop_result(est_aligned, src, mode));
    }
    let stride = ((n_covered as f64 / params.max_points as f64).sqrt().ceil() as u32).max(1);
    let on_grid = |&(x, y): &(u32, u32)| x % stride == 0 && y % stride == 0;

    let opt: Vec<usize> = (0..src.len()).filter(|&i| is_covered(&src.pixels[i]) && on_grid(&src.pixels[i])).collect();
    let mut tgt_world: Vec<Vec3> = Vec::new();
    for t in targets {
        tgt_world.extend((0..t.len()).filter(|&i| on_grid(&t.pixels[i])).map(|i| t.points[i]));
    }
    if opt.is_empty() || tgt_world.is_empty() {
        return Ok(noop_result(est_aligned, src, mode));
    }

    let norm = Normalization::fit(opt.iter().map(|&i| &src.points[i]).chain(&tgt_world));
    let s2 = norm.scale * norm.scale;
    let trunc = params.trunc / norm.scale;
    let clamp = params.max_step / norm.scale;
    let tgt: Vec<Vec3> = tgt_world.iter().map(|p| norm.apply(p)).collect();
    let tgt_tree = KdTree::new(&tgt);
    let rays: Vec<Vec3> = opt.iter().map(|&i| src.rays[i]).collect();
    let mut pos: Vec<Vec3> = opt.iter().map(|&i| norm.apply(&src.points[i])).collect();

    let current_loss = |pos: &[Vec3]| {
        let corr = Correspondences::find(pos, &tgt, &tgt_tree);
        chamfer_with_grad(pos, &tgt, &corr, trunc).0
    };
    let initial = current_loss(&pos);
    if !initial.is_finite() {
        return Err(Error::Optimization { level: 0 });
    }

    let mut pyramid = DeformationPyramid { mode, levels: Vec::new(), normalization: norm, clamp };
    let mut result = RegistrationResult {
        mode,
        warped: DepthMap::invalid(w, h),
        points: PointCloud::default(),
        source_pixel: Vec::new(),
        initial_loss: initial * s2,
        level_losses: Vec::new(),
        level_accepted: Vec::new(),
        iterations: Vec::new(),
        loss_curves: Vec::new(),
        optimized_points: opt.len(),
        noop: false,
    };
    let mut before = initial;
    for k in 0..params.levels {
        let mut level = WarpLevel::new(k, mode, params.init_std, seed);
        let mut curve = Vec::new();
        let mut best = (f64::INFINITY, level.params().to_vec());
        if before > 0.0 {
            let mut adam = Adam::new(level.params().len(), params.learning_rate);
            for it in 0..params.max_iterations {
                let (moved, cache) = level.forward(&pos, &rays, clamp);
                let corr = Correspondences::find(&moved, &tgt, &tgt_tree);
                let (loss, g) = chamfer_with_grad(&moved, &tgt, &corr, trunc);
                if !loss.is_finite() {
                    return Err(Error::Optimization { level: k });
                }
                curve.push(loss * s2);
                if loss < best.0 {
                    best = (loss, level.params().to_vec());
                }
                if it >= params.patience {
                    let past = curve[it - params.patience] / s2;
                    if past <= 0.0 || (past - loss) / past < params.min_improvement {
                        break;
                    }
                }
                let grad = level.backward(&pos, &rays, &cache, clamp, &g);
                if grad.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Optimization { level: k });
                }
                adam.step(level.params_mut(), &grad);
            }
        }
        result.iterations.push(curve.len());
        result.loss_curves.push(curve);
        level.active = best.0 < before;
        if level.active {
            level.params_mut().copy_from_slice(&best.1);
            pos = level.forward(&pos, &rays, clamp).0;
            before = best.0;
        }
        result.level_losses.push(before * s2);
        result.level_accepted.push(level.active);
        pyramid.levels.push(level);
    }

    let warped_points = pyramid.warp(&src.points, &src.rays, src.origin);
    let mut warped = DepthMap::invalid(w, h);
    let mut source_pixel = vec![None; w * h];
    match mode {
        WarpMode::Ndr => {
            for (i, p) in warped_points.iter().enumerate() {
                let (x, y) = src.pixels[i];
                let idx = y as usize * w + x as usize;
                let z0 = est_aligned.get_index(idx).expect("source pixel is valid");
                let d0 = (src.points[i] - src.origin).dot(&src.rays[i]);
                let d1 = (p - src.origin).dot(&src.rays[i]);
                warped.set_index(idx, z0 * d1 / d0);
                source_pixel[idx] = Some(idx as u32);
            }
        }
        WarpMode::Ndp => {
            for (i, p) in warped_points.iter().enumerate() {
                let Projection::Visible { u, v, depth } = cam.project(p) else { continue };
                let (px, py) = (u.round(), v.round());
                if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                    continue;
                }
                let idx = py as usize * w + px as usize;
                if !est_aligned.mask()[idx] {
                    continue;
                }
                if warped.get_index(idx).is_none_or(|z| depth < z) {
                    warped.set_index(idx, depth);
                    let (x, y) = src.pixels[i];
                    source_pixel[idx] = Some(y * w as u32 + x);
                }
            }
            // Pixels nobody landed on keep their own point's warped depth so
            // the valid mask is preserved.
            for (i, p) in warped_points.iter().enumerate() {
                let (x, y) = src.pixels[i];
                let idx = y as usize * w + x as usize;
                if source_pixel[idx].is_some() {
                    continue;
                }
                let z = cam.to_camera(p).z;
                let z = if z > 0.0 { z } else { est_aligned.get_index(idx).expect("source pixel is valid") };
                warped.set_index(idx, z);
                source_pixel[idx] = Some(idx as u32);
            }
        }
    }
    result.warped = warped;
    result.source_pixel = source_pixel;
    result.points = PointCloud { points: warped_points, rays: src.rays, pixels: src.pixels, origin: src.origin };
    Ok(result)
}
