use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FusionParams;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera, CameraModel, Vec3};
use crate::register::RegistrationParams;
use crate::synth::MockDepth;
use crate::viewpoint::{ScoreWeights, SelectionParams};

/// Which synthesis backend drives a run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BackendSpec {
    #[default]
    Mock,
    /// External process command line, whitespace separated.
    Proto(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mock" => Ok(BackendSpec::Mock),
            other => match other.strip_prefix("proto:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(BackendSpec::Proto(cmd.trim().to_string())),
                _ => Err(Error::Config(format!("unknown backend `{s}` (expected mock or proto:<command>)"))),
            },
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock => write!(f, "mock"),
            BackendSpec::Proto(cmd) => write!(f, "proto:{cmd}"),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Background-ring poses facing each object instead of view selection.
    NoAvs,
    /// Scale-shift alignment only, no non-rigid registration.
    NoNdr,
    /// Unconstrained per-point rigid warps instead of ray-constrained ones.
    RawNdp,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-avs" => Ok(Ablation::NoAvs),
            "no-ndr" => Ok(Ablation::NoNdr),
            "raw-ndp" => Ok(Ablation::RawNdp),
            _ => Err(Error::Config(format!("unknown ablation `{s}` (expected no-avs, no-ndr or raw-ndp)"))),
        }
    }
}

/// Fixed-pivot background trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingParams {
    pub height: f64,
    pub yaw_steps: usize,
    /// Pitch of the first ring (floor and walls), degrees.
    pub pitch_low_deg: f64,
    /// Pitch of the second ring (ceiling and walls), degrees.
    pub pitch_high_deg: f64,
    /// Append straight-down and straight-up views.
    pub poles: bool,
}

impl Default for RingParams {
    fn default() -> Self {
        RingParams { height: 1.5, yaw_steps: 18, pitch_low_deg: -15.0, pitch_high_deg: 25.0, poles: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length as a multiple of the image width (fx = fy).
    pub focal_factor: f64,
    /// Defaults to [`ScoreWeights::for_width`].
    pub weights: Option<ScoreWeights>,
    pub selection: SelectionParams,
    pub registration: RegistrationParams,
    pub fusion: FusionParams,
    pub ring: RingParams,
    /// Overrides the layout's seed.
    pub seed: Option<u64>,
    pub backend: BackendSpec,
    pub backend_timeout_s: f64,
    pub mock: MockDepth,
    pub ablation: Option<Ablation>,
    /// Pixels around the inpaint mask that take part in registration.
    pub register_margin: usize,
    /// Primitive manifest; the bundled primitives when absent.
    pub primitives: Option<PathBuf>,
    /// Keep every frame's maps in memory (they are always written to disk
    /// when an output directory is given).
    pub keep_frame_maps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            width: 512,
            height: 384,
            focal_factor: 0.9,
            weights: None,
            selection: SelectionParams::default(),
            registration: RegistrationParams::default(),
            fusion: FusionParams::default(),
            ring: RingParams::default(),
            seed: None,
            backend: BackendSpec::Mock,
            backend_timeout_s: 300.0,
            mock: MockDepth::default(),
            ablation: None,
            register_margin: 8,
            primitives: None,
            keep_frame_maps: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn camera_model(&self) -> CameraModel {
        CameraModel::centered(self.width, self.height, self.focal_factor)
    }

    pub fn score_weights(&self) -> ScoreWeights {
        self.weights.unwrap_or_else(|| ScoreWeights::for_width(self.width))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(4) || !self.height.is_multiple_of(4) {
            return Err(Error::Config(format!("resolution {}x{} must be a positive multiple of 4", self.width, self.height)));
        }
        if !(self.focal_factor > 0.0) || !(self.backend_timeout_s > 0.0) {
            return Err(Error::Config("focal factor and backend timeout must be positive".into()));
        }
        if self.ring.yaw_steps == 0 || !(self.ring.height > 0.0) {
            return Err(Error::Config("background ring needs a positive height and at least one yaw step".into()));
        }
        if self.selection.max_views == 0 || !(self.selection.grid_step > 0.0) || !(self.selection.tau_new > 0.0) {
            return Err(Error::Config("selection parameters must be positive".into()));
        }
        self.score_weights().validate(self.width, self.height).map_err(|e| Error::Config(e.to_string()))?;
        self.registration.validate()?;
        self.fusion.validate()?;
        Ok(())
    }
}

/// Cameras at the room center: a ring pitched down, a ring pitched up, then
/// optionally straight down and straight up. Rooms lower than the ring
/// height get a pivot at half their height.
pub fn background_trajectory(room: &Aabb, model: &CameraModel, ring: &RingParams) -> Result<Vec<Camera>> {
    let c = room.center();
    let top = room.max.z - room.min.z;
    let z = room.min.z + if ring.height < top { ring.height } else { 0.5 * top };
    let eye = Vec3::new(c.x, c.y, z);
    let mut cams = Vec::with_capacity(2 * ring.yaw_steps + 2);
    for pitch in [ring.pitch_low_deg, ring.pitch_high_deg] {
        for k in 0..ring.yaw_steps {
            let yaw = 360.0 * k as f64 / ring.yaw_steps as f64;
            cams.push(model.from_yaw_pitch(eye, yaw.to_radians(), pitch.to_radians())?);
        }
    }
    if ring.poles {
        cams.push(model.from_yaw_pitch(eye, 0.0, -std::f64::consts::FRAC_PI_2)?);
        cams.push(model.from_yaw_pitch(eye, 0.0, std::f64::consts::FRAC_PI_2)?);
    }
    Ok(cams)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
        let partial = PipelineConfig::from_json(r#"{"width": 256, "height": 192, "backend": "proto:echo-backend --mode echo"}"#).unwrap();
        assert_eq!(partial.backend, BackendSpec::Proto("echo-backend --mode echo".into()));
        assert_eq!(partial.fusion, FusionParams::default());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"width": 250}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"fusion": {"edge_factor": 0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"backend": "gpu"}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"colour": 1}"#).is_err());
    }

    #[test]
    fn trajectory_layout() {
        let room = Aabb { min: Vec3::zeros(), max: Vec3::new(4.0, 3.0, 2.5) };
        let model = CameraModel::centered(64, 48, 0.9);
        let cams = background_trajectory(&room, &model, &RingParams::default()).unwrap();
        assert_eq!(cams.len(), 38);
        for (k, cam) in cams[..18].iter().enumerate() {
            let f = cam.forward();
            assert!((f.y.atan2(f.x).to_degrees().rem_euclid(360.0) - 20.0 * k as f64).abs() < 1e-9);
            assert!((f.z.asin().to_degrees() + 15.0).abs() < 1e-9);
        }
        assert!((cams[18].forward().z.asin().to_degrees() - 25.0).abs() < 1e-9);
        assert!((cams[36].forward().z + 1.0).abs() < 1e-12);
        assert!((cams[37].forward().z - 1.0).abs() < 1e-12);
        assert!(cams.iter().all(|c| (c.origin() - Vec3::new(2.0, 1.5, 1.5)).norm() < 1e-12));
    }
}
