//! The generation loop: render conditions, inpaint, estimate and align
//! depth, fuse into the scene mesh; foreground stage first, then the room
//! background.

mod config;
mod fuse;
mod pipeline;

pub use config::{background_trajectory, Ablation, BackendSpec, PipelineConfig, RingParams};
pub use fuse::{
    fuse, fuse_with, remove_background, render_partial, FrameInputs, FuseStats, FusionParams, PartialView, SceneMesh,
    Stage,
};
pub use pipeline::{
    cameras_text, load_primitives, make_backend, run, run_scene, FrameMaps, FrameRecord, FrameReport, MeshCounts,
    ObjectReport, RegistrationSummary, Report, RunOutput,
};
