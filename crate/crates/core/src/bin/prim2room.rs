use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use prim2room::fusion::{run, Ablation, BackendSpec, PipelineConfig};
use prim2room::geometry::{io, unproject, Camera, CameraRecord, ColorMap, Vec3};
use prim2room::layout::{bundled, parse_layout, ConditionScene};
use prim2room::raster::{render, scene_items};
use prim2room::register::{apply_affine, fit_scale_shift_or_fallback, register, WarpMode};
use prim2room::synth::palette_color;
use prim2room::viewpoint::{sample_candidates, score_view, select_viewpoints, ObservedSet};

#[derive(Parser)]
#[command(name = "prim2room", about = "Room mesh generation from box layouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a room mesh from a layout.
    Run {
        layout: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `mock` or `proto:<command>`.
        #[arg(long)]
        backend: Option<BackendSpec>,
        #[arg(long)]
        ablate: Option<Ablation>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render the condition maps of a layout from one camera.
    Render {
        layout: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Camera JSON; overrides --eye/--look.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        eye: Option<Vec3>,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        look: Option<Vec3>,
        #[arg(long, default_value = "render")]
        out: PathBuf,
    },
    /// Select viewpoints for every object of a layout.
    SelectViews {
        layout: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "views.txt")]
        out: PathBuf,
        /// Also write the first-step score of every candidate.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Align an estimated depth map to a condition depth map.
    Register {
        estimated: PathBuf,
        condition: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_enum, default_value = "ndr")]
        mode: RegisterMode,
        #[arg(long, default_value = "warped.png")]
        out: PathBuf,
        #[arg(long, default_value = "loss.log")]
        log: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the bundled primitive database (manifest plus PLY meshes).
    ExportDb { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegisterMode {
    Ndr,
    Ndp,
    Linear,
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z but got `{s}`")),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_depth(path: &Path) -> Result<prim2room::geometry::DepthMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(io::depth_from_png(&bytes)?)
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::from_json(&read(p)?)?,
        None => PipelineConfig::default(),
    })
}

fn load_scene(layout: &Path, cfg: &PipelineConfig) -> Result<(prim2room::layout::Layout, ConditionScene)> {
    let layout = parse_layout(&read(layout)?)?;
    let db = prim2room::fusion::load_primitives(cfg)?;
    let scene = ConditionScene::build(&layout, &db)?;
    Ok((layout, scene))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { layout, config, backend, ablate, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(b) = backend {
                cfg.backend = b;
            }
            if ablate.is_some() {
                cfg.ablation = ablate;
            }
            if seed.is_some() {
                cfg.seed = seed;
            }
            let result = run(&read(&layout)?, &cfg, Some(&out))?;
            let r = &result.report;
            println!(
                "{} frames, {} vertices, {} triangles -> {}",
                r.frames.len(),
                r.final_mesh.vertices,
                r.final_mesh.triangles,
                out.display()
            );
        }
        Command::Render { layout, config, camera, eye, look, out } => {
            let cfg = load_config(config.as_deref())?;
            let (_, scene) = load_scene(&layout, &cfg)?;
            let cam = match (camera, eye, look) {
                (Some(path), _, _) => serde_json::from_str::<CameraRecord>(&read(&path)?)?.to_camera()?,
                (None, Some(eye), Some(look)) => cfg.camera_model().look_at(eye, look)?,
                _ => bail!("give either --camera or both --eye and --look"),
            };
            let maps = render(&scene_items(&scene), &cam, false);
            let mut color = ColorMap::new(cam.width(), cam.height());
            for (i, &id) in maps.semantic.ids().iter().enumerate() {
                color.set_index(i, palette_color(id));
            }
            fs::create_dir_all(&out)?;
            io::write_bytes(&out.join("color.png"), &io::color_to_png(&color)?)?;
            io::write_bytes(&out.join("depth.png"), &io::depth_to_png(&maps.depth)?)?;
            io::write_bytes(&out.join("semantic.png"), &io::semantic_to_png(&maps.semantic)?)?;
            io::write_bytes(&out.join("mask.png"), &io::mask_to_png(maps.covered(), cam.width(), cam.height())?)?;
        }
        Command::SelectViews { layout, config, out, scores } => {
            let cfg = load_config(config.as_deref())?;
            let (layout, scene) = load_scene(&layout, &cfg)?;
            let (model, weights) = (cfg.camera_model(), cfg.score_weights());
            let mut text = String::from("# object category view x y z look_x look_y look_z fx fy cx cy width height s_area s_iou s_norm total\n");
            let mut table = String::from("# object candidate x y z s_area s_iou s_norm total\n");
            for (i, inst) in scene.instances.iter().enumerate() {
                let category = &layout.objects[inst.object_index].category;
                let sel = select_viewpoints(i as u32, &scene, &weights, &model, &cfg.selection)?;
                let look = inst.bounds().center();
                for (k, v) in sel.views.iter().enumerate() {
                    let (p, c, s) = (v.camera.origin(), CameraRecord::from(&v.camera), v.score);
                    writeln!(
                        text,
                        "{i} {category} {k} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {} {} {} {} {} {} {:.6} {:.6} {:.6} {:.6}",
                        p.x, p.y, p.z, look.x, look.y, look.z, c.fx, c.fy, c.cx, c.cy, c.width, c.height, s.s_area, s.s_iou, s.s_norm, s.total
                    )?;
                }
                if scores.is_some() {
                    for (k, cam) in sample_candidates(&scene, inst, &model, &cfg.selection)?.iter().enumerate() {
                        let (p, s) = (cam.origin(), score_view(cam, i as u32, &scene, &ObservedSet::default(), &weights));
                        writeln!(table, "{i} {k} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", p.x, p.y, p.z, s.s_area, s.s_iou, s.s_norm, s.total)?;
                    }
                }
                println!("{category}: {} views, coverage {:.3}", sel.views.len(), sel.coverage);
            }
            fs::write(&out, text)?;
            if let Some(path) = scores {
                fs::write(path, table)?;
            }
        }
        Command::Register { estimated, condition, camera, mode, out, log, seed } => {
            let est = read_depth(&estimated)?;
            let cond = read_depth(&condition)?;
            let cam: Camera = serde_json::from_str::<CameraRecord>(&read(&camera)?)?.to_camera()?;
            if est.dims() != (cam.width(), cam.height()) {
                bail!("depth is {:?} but the camera is {}x{}", est.dims(), cam.width(), cam.height());
            }
            let (affine, fallback) = fit_scale_shift_or_fallback(&est, &cond)?;
            let aligned = apply_affine(&est, affine);
            let mut text = format!("affine gamma {:.6} beta {:.6} fallback {fallback}\n", affine.gamma, affine.beta);
            let warped = match mode {
                RegisterMode::Linear => aligned,
                RegisterMode::Ndr | RegisterMode::Ndp => {
                    let warp = if mode == RegisterMode::Ndr { WarpMode::Ndr } else { WarpMode::Ndp };
                    let cfg = PipelineConfig::default();
                    let r = register(&aligned, &cam, &[unproject(&cond, &cam)?], warp, &cfg.registration, seed)?;
                    writeln!(text, "initial {:.9}", r.initial_loss)?;
                    for (k, curve) in r.loss_curves.iter().enumerate() {
                        writeln!(text, "level {k} accepted {} final {:.9}", r.level_accepted[k], r.level_losses[k])?;
                        for (it, loss) in curve.iter().enumerate() {
                            writeln!(text, "  {k} {it} {loss:.9}")?;
                        }
                    }
                    r.warped
                }
            };
            io::write_bytes(&out, &io::depth_to_png(&warped)?)?;
            fs::write(&log, text)?;
        }
        Command::ExportDb { dir } => bundled::export(&dir)?,
    }
    Ok(())
}
