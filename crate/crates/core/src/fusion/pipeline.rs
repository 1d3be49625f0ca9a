use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::config::{background_trajectory, Ablation, BackendSpec, PipelineConfig};
use super::fuse::{fuse_with, remove_background, render_partial, FrameInputs, FuseStats, SceneMesh, Stage};
use crate::error::{Error, Result};
use crate::geometry::{io, unproject, Camera, CameraRecord, ColorMap, DepthMap, EMPTY};
use crate::layout::{bundled, parse_layout, ConditionScene, Layout, PrimitiveDb};
use crate::raster::{render, scene_items, RenderMaps};
use crate::register::{apply_affine, fit_scale_shift_or_fallback, register, AffineDepthParams, RegistrationResult, WarpMode};
use crate::synth::{
    build_prompt, estimate_depth, synthesize_checked, Backend, DepthContext, MockBackend, ProtocolBackend,
    SynthesisRequest,
};
use crate::viewpoint::{cameras_facing, coverage_of, select_viewpoints, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationSummary {
    pub mode: WarpMode,
    pub noop: bool,
    pub optimized_points: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub level_losses: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl From<&RegistrationResult> for RegistrationSummary {
    fn from(r: &RegistrationResult) -> Self {
        RegistrationSummary {
            mode: r.mode,
            noop: r.noop,
            optimized_points: r.optimized_points,
            initial_loss: r.initial_loss,
            final_loss: r.final_loss(),
            level_losses: r.level_losses.clone(),
            iterations: r.iterations.clone(),
        }
    }
}

/// Per-frame images, kept only on request.
#[derive(Debug, Clone)]
pub struct FrameMaps {
    pub condition: RenderMaps,
    pub mask: Vec<bool>,
    pub synthesized: ColorMap,
    /// Color assigned to fused vertices (differs from `synthesized` only when
    /// the warp moves points between pixels).
    pub fused_color: ColorMap,
    pub estimated: DepthMap,
    pub aligned: DepthMap,
    pub warped: DepthMap,
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub stage: u8,
    pub object: Option<usize>,
    pub camera: Camera,
    pub prompt: String,
    pub masked_pixels: usize,
    /// Nothing left to fill from this view.
    pub skipped: bool,
    pub affine: Option<AffineDepthParams>,
    pub affine_fallback: bool,
    pub registration: Option<RegistrationSummary>,
    pub fuse: FuseStats,
    pub backend_violations: usize,
    pub maps: Option<FrameMaps>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub index: usize,
    pub stage: u8,
    pub object: Option<usize>,
    pub eye: [f64; 3],
    pub forward: [f64; 3],
    pub prompt: String,
    pub masked_pixels: usize,
    pub skipped: bool,
    pub affine: Option<AffineDepthParams>,
    pub affine_fallback: bool,
    pub registration: Option<RegistrationSummary>,
    pub fuse: FuseStats,
    pub backend_violations: usize,
}

impl From<&FrameRecord> for FrameReport {
    fn from(f: &FrameRecord) -> Self {
        FrameReport {
            index: f.index,
            stage: f.stage,
            object: f.object,
            eye: f.camera.origin().into(),
            forward: f.camera.forward().into(),
            prompt: f.prompt.clone(),
            masked_pixels: f.masked_pixels,
            skipped: f.skipped,
            affine: f.affine,
            affine_fallback: f.affine_fallback,
            registration: f.registration.clone(),
            fuse: f.fuse,
            backend_violations: f.backend_violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectReport {
    pub index: usize,
    pub category: String,
    pub primitive: String,
    pub views: usize,
    /// Fraction of the primitive's area seen by its stage-1 views.
    pub coverage: f64,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshCounts {
    pub vertices: usize,
    pub triangles: usize,
}

impl From<&SceneMesh> for MeshCounts {
    fn from(m: &SceneMesh) -> Self {
        MeshCounts { vertices: m.vertex_count(), triangles: m.triangle_count() }
    }
}

/// Machine-readable summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub backend: String,
    pub ablation: Option<Ablation>,
    pub resolution: [usize; 2],
    pub objects: Vec<ObjectReport>,
    pub frames: Vec<FrameReport>,
    /// Sum of all per-frame fusion stats.
    pub totals: FuseStats,
    pub stage1_mesh: Option<MeshCounts>,
    pub after_background_removal: Option<MeshCounts>,
    pub final_mesh: MeshCounts,
    pub error: Option<String>,
}

pub struct RunOutput {
    pub layout: Layout,
    pub scene: ConditionScene,
    pub mesh: SceneMesh,
    pub frames: Vec<FrameRecord>,
    pub report: Report,
}

/// Loads the configured primitive database (bundled when unset).
pub fn load_primitives(cfg: &PipelineConfig) -> Result<PrimitiveDb> {
    match &cfg.primitives {
        Some(path) => PrimitiveDb::load(path),
        None => Ok(bundled::database()),
    }
}

pub fn make_backend(cfg: &PipelineConfig) -> Result<Box<dyn Backend>> {
    Ok(match &cfg.backend {
        BackendSpec::Mock => Box::new(MockBackend::new(cfg.mock)),
        BackendSpec::Proto(cmd) => {
            Box::new(ProtocolBackend::from_command_line(cmd, Duration::from_secs_f64(cfg.backend_timeout_s))?)
        }
    })
}

/// Full two-stage generation from a layout document. Artifacts go to `out`
/// when given; on failure whatever exists so far is flushed there too.
pub fn run(layout_doc: &str, cfg: &PipelineConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let layout = parse_layout(layout_doc)?;
    let db = load_primitives(cfg)?;
    let scene = ConditionScene::build(&layout, &db)?;
    let mut backend = make_backend(cfg)?;
    run_scene(layout, scene, cfg, backend.as_mut(), out)
}

pub fn run_scene(
    layout: Layout,
    scene: ConditionScene,
    cfg: &PipelineConfig,
    backend: &mut dyn Backend,
    out: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let seed = cfg.seed.unwrap_or(layout.seed);
    let mut runner = Runner {
        cfg,
        seed,
        model_cams: Vec::new(),
        layout: &layout,
        scene: &scene,
        backend,
        out,
        mesh: SceneMesh::new(),
        frames: Vec::new(),
        objects: Vec::new(),
        stage1: None,
        after_removal: None,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("frames"))?;
    }
    let outcome = runner.stages();
    let report = runner.report(outcome.as_ref().err());
    if let Some(dir) = out {
        runner.write_outputs(dir, &report)?;
    }
    outcome?;
    let Runner { mesh, frames, .. } = runner;
    Ok(RunOutput { layout: layout.clone(), scene: scene.clone(), mesh, frames, report })
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    seed: u64,
    model_cams: Vec<Camera>,
    layout: &'a Layout,
    scene: &'a ConditionScene,
    backend: &'a mut dyn Backend,
    out: Option<&'a Path>,
    mesh: SceneMesh,
    frames: Vec<FrameRecord>,
    objects: Vec<ObjectReport>,
    stage1: Option<MeshCounts>,
    after_removal: Option<MeshCounts>,
}

/// Square dilation of a mask by `r` pixels.
fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    rows[y * w + xx] = true;
                }
            }
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if rows[y * w + x] {
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    out[yy * w + x] = true;
                }
            }
        }
    }
    out
}

fn frame_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x5851_F42D_4C95_7F2D).wrapping_add(index as u64 + 1)
}

impl Runner<'_> {
    fn stages(&mut self) -> Result<()> {
        let model = self.cfg.camera_model();
        self.model_cams = background_trajectory(&self.scene.room_bounds, &model, &self.cfg.ring)?;
        let weights = self.cfg.score_weights();

        for (i, inst) in self.scene.instances.iter().enumerate() {
            let (views, coverage, stop) = if self.cfg.ablation == Some(Ablation::NoAvs) {
                let cams = cameras_facing(&self.model_cams, inst);
                let coverage = coverage_of(&cams, self.scene, i as u32);
                (cams, coverage, None)
            } else {
                let sel = select_viewpoints(i as u32, self.scene, &weights, &model, &self.cfg.selection)
                    .map_err(|e| self.wrap(1, e))?;
                (sel.views.iter().map(|v| v.camera).collect(), sel.coverage, Some(sel.stop))
            };
            self.objects.push(ObjectReport {
                index: i,
                category: self.layout.objects[inst.object_index].category.clone(),
                primitive: inst.record_id.clone(),
                views: views.len(),
                coverage,
                stop,
            });
            for cam in views {
                self.frame(cam, 1, Some(i))?;
            }
        }
        self.stage1 = Some(MeshCounts::from(&self.mesh));
        self.mesh = remove_background(&self.mesh);
        self.after_removal = Some(MeshCounts::from(&self.mesh));

        for cam in self.model_cams.clone() {
            self.frame(cam, 2, None)?;
        }
        Ok(())
    }

    fn wrap(&self, stage: u8, e: Error) -> Error {
        Error::Pipeline { stage, frame: self.frames.len(), source: Box::new(e) }
    }

    fn frame(&mut self, cam: Camera, stage: u8, object: Option<usize>) -> Result<()> {
        match self.process(cam, stage, object) {
            Ok(rec) => {
                self.frames.push(rec);
                Ok(())
            }
            Err(e) => Err(self.wrap(stage, e)),
        }
    }

    fn process(&mut self, cam: Camera, stage: u8, object: Option<usize>) -> Result<FrameRecord> {
        let index = self.frames.len();
        let (w, h) = (cam.width(), cam.height());
        let cond = render(&scene_items(self.scene), &cam, false);
        let partial = render_partial(&self.mesh, &cam);
        let masked_pixels = (0..w * h)
            .filter(|&i| partial.mask[i] && cond.depth.mask()[i] && cond.semantic.ids()[i] != EMPTY)
            .count();
        let prompt = build_prompt(&cond.semantic, &self.scene.registry, &self.layout.prompt);
        let mut record = FrameRecord {
            index,
            stage,
            object,
            camera: cam,
            prompt: prompt.clone(),
            masked_pixels,
            skipped: masked_pixels == 0,
            affine: None,
            affine_fallback: false,
            registration: None,
            fuse: FuseStats::default(),
            backend_violations: 0,
            maps: None,
        };
        if record.skipped {
            return Ok(record);
        }

        let request = SynthesisRequest {
            color: partial.color.clone(),
            mask: partial.mask.clone(),
            semantic: cond.semantic.clone(),
            depth: cond.depth.clone(),
            prompt,
            seed: self.seed,
            camera: Some(cam),
        };
        let synth = synthesize_checked(&request, self.backend)?;
        record.backend_violations = synth.violations;
        let context = DepthContext { condition: &cond.depth, seed: frame_seed(self.seed, index) };
        let estimated = estimate_depth(&synth.color, self.backend, Some(context))?.depth;
        let (affine, fallback) = fit_scale_shift_or_fallback(&estimated, &cond.depth)?;
        record.affine = Some(affine);
        record.affine_fallback = fallback;
        let aligned = apply_affine(&estimated, affine);

        let mode = match self.cfg.ablation {
            Some(Ablation::NoNdr) => None,
            Some(Ablation::RawNdp) => Some(WarpMode::Ndp),
            _ => Some(WarpMode::Ndr),
        };
        let mut warped = aligned.clone();
        let mut fused_color = synth.color.clone();
        if let Some(mode) = mode {
            let region = dilate(&partial.mask, w, h, self.cfg.register_margin);
            let source = aligned.masked(&region)?;
            if source.valid_count() > 0 {
                let targets = [
                    unproject(&cond.depth.masked(&region)?, &cam)?,
                    unproject(&partial.depth.masked(&region)?, &cam)?,
                ];
                let reg = register(&source, &cam, &targets, mode, &self.cfg.registration, frame_seed(self.seed, index))?;
                record.registration = Some(RegistrationSummary::from(&reg));
                if mode == WarpMode::Ndp {
                    for (i, src) in reg.source_pixel.iter().enumerate() {
                        if let Some(s) = src {
                            fused_color.set_index(i, synth.color.pixels()[*s as usize]);
                        }
                    }
                }
                warped = reg.warped;
            }
        }

        let frame = FrameInputs {
            color: &fused_color,
            depth: &warped,
            semantic: &cond.semantic,
            cam: &cam,
            mask: &partial.mask,
            stage: if stage == 1 { Stage::Foreground } else { Stage::Background },
            clip: Some(self.scene.room_bounds.inflated(self.cfg.fusion.room_margin)),
        };
        record.fuse = fuse_with(&mut self.mesh, &partial, &frame, &self.cfg.fusion)?;

        if let Some(dir) = self.out {
            let base = dir.join("frames");
            io::write_bytes(&base.join(format!("{index:03}_color.png")), &io::color_to_png(&synth.color)?)?;
            io::write_bytes(&base.join(format!("{index:03}_depth.png")), &io::depth_to_png(&warped)?)?;
            io::write_bytes(&base.join(format!("{index:03}_semantic.png")), &io::semantic_to_png(&cond.semantic)?)?;
            io::write_bytes(&base.join(format!("{index:03}_mask.png")), &io::mask_to_png(&partial.mask, w, h)?)?;
        }
        if self.cfg.keep_frame_maps {
            record.maps = Some(FrameMaps {
                condition: cond,
                mask: partial.mask,
                synthesized: synth.color,
                fused_color,
                estimated,
                aligned,
                warped,
            });
        }
        Ok(record)
    }

    fn report(&self, error: Option<&Error>) -> Report {
        let mut totals = FuseStats::default();
        for f in &self.frames {
            totals += f.fuse;
        }
        Report {
            seed: self.seed,
            backend: self.backend.name(),
            ablation: self.cfg.ablation,
            resolution: [self.cfg.width, self.cfg.height],
            objects: self.objects.clone(),
            frames: self.frames.iter().map(FrameReport::from).collect(),
            totals,
            stage1_mesh: self.stage1.clone(),
            after_background_removal: self.after_removal.clone(),
            final_mesh: MeshCounts::from(&self.mesh),
            error: error.map(|e| e.to_string()),
        }
    }

    fn write_outputs(&self, dir: &Path, report: &Report) -> Result<()> {
        io::write_bytes(&dir.join("mesh.ply"), io::mesh_to_ply(&self.mesh.mesh).as_bytes())?;
        let mut json = serde_json::to_string_pretty(report)?;
        json.push('\n');
        io::write_bytes(&dir.join("report.json"), json.as_bytes())?;
        io::write_bytes(&dir.join("cameras.txt"), cameras_text(&self.frames).as_bytes())?;
        Ok(())
    }
}

/// One line per frame: index, stage, object (or `-`), intrinsics, size,
/// camera center and row-major world-from-camera rotation, at full
/// round-trip precision.
pub fn cameras_text(frames: &[FrameRecord]) -> String {
    let mut s = String::from("# index stage object fx fy cx cy width height tx ty tz r00 r01 r02 r10 r11 r12 r20 r21 r22\n");
    for f in frames {
        let c = CameraRecord::from(&f.camera);
        let object = f.object.map_or_else(|| "-".to_string(), |o| o.to_string());
        let _ = write!(s, "{} {} {object} {} {} {} {} {} {}", f.index, f.stage, c.fx, c.fy, c.cx, c.cy, c.width, c.height);
        for v in c.translation.iter().chain(c.rotation.iter().flatten()) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}
