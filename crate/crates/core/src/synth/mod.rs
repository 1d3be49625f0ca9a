//! Inpainting and depth-estimation backends.
//!
//! [`synthesize`] and [`estimate_depth`] wrap any [`Backend`] and enforce the
//! contract the pipeline relies on. [`MockBackend`] is a deterministic
//! stand-in; [`ProtocolBackend`] talks to an external process.

mod mock;
pub mod protocol;

pub use mock::{depth_normals, palette, palette_color, palette_match, MockBackend, MockDepth};
pub use protocol::ProtocolBackend;

use crate::error::{Error, Result};
use crate::geometry::{is_background, Camera, CategoryId, ColorMap, DepthMap, SemanticMap, EMPTY};
use crate::layout::CategoryRegistry;

/// Everything an inpainting model gets for one frame.
#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    /// Current mesh rendered from this view; only meaningful outside `mask`.
    pub color: ColorMap,
    /// `true` = pixel to generate.
    pub mask: Vec<bool>,
    pub semantic: SemanticMap,
    pub depth: DepthMap,
    pub prompt: String,
    pub seed: u64,
    /// View the maps were rendered from. Not sent over the wire protocol.
    pub camera: Option<Camera>,
}

impl SynthesisRequest {
    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        self.semantic.ensure_dims(dims)?;
        if self.depth.dims() != dims {
            return Err(Error::Dimension("request depth vs color".into()));
        }
        if self.mask.len() != dims.0 * dims.1 {
            return Err(Error::Dimension(format!("mask has {} entries for {}x{}", self.mask.len(), dims.0, dims.1)));
        }
        if let Some(cam) = &self.camera {
            if (cam.width(), cam.height()) != dims {
                return Err(Error::Dimension("request camera vs color".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub depth: DepthMap,
}

/// Optional side information for depth estimation.
#[derive(Debug, Clone, Copy)]
pub struct DepthContext<'a> {
    pub condition: &'a DepthMap,
    pub seed: u64,
}

/// A generative model pair: masked color inpainting and metric depth.
pub trait Backend {
    fn name(&self) -> String;

    fn inpaint(&mut self, req: &SynthesisRequest) -> Result<ColorMap>;

    fn estimate_depth(&mut self, color: &ColorMap, context: Option<DepthContext<'_>>) -> Result<DepthMap>;
}

/// Inpainted color plus how many outside-mask pixels the backend altered
/// (they are restored before returning).
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub color: ColorMap,
    pub violations: usize,
}

pub fn synthesize(req: &SynthesisRequest, backend: &mut dyn Backend) -> Result<ColorMap> {
    synthesize_checked(req, backend).map(|s| s.color)
}

/// Runs the backend and restores every pixel outside the mask bit-exactly.
pub fn synthesize_checked(req: &SynthesisRequest, backend: &mut dyn Backend) -> Result<Synthesized> {
    req.validate()?;
    if !req.mask.iter().any(|&m| m) {
        return Ok(Synthesized { color: req.color.clone(), violations: 0 });
    }
    let mut out = backend.inpaint(req)?;
    if out.dims() != req.dims() {
        return Err(Error::Backend {
            message: format!(
                "{} returned {}x{} for a {}x{} request",
                backend.name(),
                out.width(),
                out.height(),
                req.dims().0,
                req.dims().1
            ),
            transcript: Vec::new(),
        });
    }
    let mut violations = 0;
    for (i, &m) in req.mask.iter().enumerate() {
        if !m && out.pixels()[i] != req.color.pixels()[i] {
            violations += 1;
            out.set_index(i, req.color.pixels()[i]);
        }
    }
    if violations > 0 {
        eprintln!("warning: backend {} altered {violations} pixels outside the inpaint mask", backend.name());
    }
    Ok(Synthesized { color: out, violations })
}

pub fn estimate_depth(
    color: &ColorMap,
    backend: &mut dyn Backend,
    context: Option<DepthContext<'_>>,
) -> Result<DepthEstimate> {
    let depth = backend.estimate_depth(color, context)?;
    if depth.dims() != color.dims() {
        return Err(Error::Backend {
            message: format!("{} returned depth of the wrong size", backend.name()),
            transcript: Vec::new(),
        });
    }
    Ok(DepthEstimate { depth })
}

/// `"<prompt>, containing a, b"` listing visible object categories by
/// descending pixel share (ties by id); categories under 1% of labeled
/// pixels are dropped. Views without objects get `", walls and floor"`.
pub fn build_prompt(semantic: &SemanticMap, registry: &CategoryRegistry, global: &str) -> String {
    let mut counts = [0usize; 256];
    for &id in semantic.ids() {
        counts[id as usize] += 1;
    }
    let labeled: usize = counts[1..].iter().sum();
    let mut visible: Vec<(usize, CategoryId)> = (0..=255u8)
        .filter(|&id| id != EMPTY && !is_background(id) && counts[id as usize] > 0)
        .filter(|&id| counts[id as usize] as f64 >= 0.01 * labeled as f64)
        .map(|id| (counts[id as usize], id))
        .collect();
    visible.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let tail = if visible.is_empty() {
        "walls and floor".to_string()
    } else {
        let names: Vec<String> = visible
            .iter()
            .map(|&(_, id)| registry.name(id).map_or_else(|| format!("category {id}"), str::to_string))
            .collect();
        format!("containing {}", names.join(", "))
    };
    if global.trim().is_empty() {
        tail
    } else {
        format!("{global}, {tail}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::parse_layout;

    fn registry() -> CategoryRegistry {
        let doc = r#"{"room":{"width":4,"depth":4,"height":2.5},"objects":[
            {"category":"table","center":[1,1],"size":[0.5,0.5]},
            {"category":"chair","center":[2,2],"size":[0.5,0.5]}]}"#;
        CategoryRegistry::from_layout(&parse_layout(doc).unwrap()).unwrap()
    }

    fn map_with(counts: &[(CategoryId, usize)]) -> SemanticMap {
        let mut ids = Vec::new();
        for &(id, n) in counts {
            ids.extend(std::iter::repeat_n(id, n));
        }
        SemanticMap::from_vec(ids.len(), 1, ids).unwrap()
    }

    #[test]
    fn prompt_examples() {
        let reg = registry();
        assert_eq!(build_prompt(&SemanticMap::new(4, 4), &reg, "a bedroom"), "a bedroom, walls and floor");
        let m = map_with(&[(17, 60), (16, 30), (1, 10)]);
        assert_eq!(build_prompt(&m, &reg, "a bedroom"), "a bedroom, containing chair, table");
        let tie = map_with(&[(17, 50), (16, 50)]);
        assert_eq!(build_prompt(&tie, &reg, "x"), "x, containing table, chair");
    }

    #[test]
    fn rare_categories_are_dropped() {
        let m = map_with(&[(1, 990), (16, 9), (17, 1)]);
        assert_eq!(build_prompt(&m, &registry(), "room"), "room, walls and floor");
        let m = map_with(&[(1, 990), (16, 10)]);
        assert_eq!(build_prompt(&m, &registry(), "room"), "room, containing table");
    }

    struct Scribbler;

    impl Backend for Scribbler {
        fn name(&self) -> String {
            "scribbler".into()
        }

        fn inpaint(&mut self, req: &SynthesisRequest) -> Result<ColorMap> {
            let mut c = ColorMap::new(req.dims().0, req.dims().1);
            for i in 0..req.mask.len() {
                c.set_index(i, [0.5, 0.25, 0.125]);
            }
            Ok(c)
        }

        fn estimate_depth(&mut self, color: &ColorMap, _: Option<DepthContext<'_>>) -> Result<DepthMap> {
            Ok(DepthMap::from_fn(color.width(), color.height(), |_, _| Some(1.0)))
        }
    }

    fn request(mask: Vec<bool>) -> SynthesisRequest {
        let mut color = ColorMap::new(3, 2);
        color.set(0, 0, [0.1, 0.2, 0.3]);
        SynthesisRequest {
            color,
            mask,
            semantic: SemanticMap::new(3, 2),
            depth: DepthMap::invalid(3, 2),
            prompt: String::new(),
            seed: 0,
            camera: None,
        }
    }

    #[test]
    fn empty_mask_returns_input() {
        let req = request(vec![false; 6]);
        assert_eq!(synthesize(&req, &mut Scribbler).unwrap(), req.color);
    }

    #[test]
    fn outside_mask_is_restored() {
        let req = request(vec![false, true, true, true, true, true]);
        let out = synthesize_checked(&req, &mut Scribbler).unwrap();
        assert_eq!(out.violations, 1);
        assert_eq!(out.color.get(0, 0), [0.1, 0.2, 0.3]);
        assert_eq!(out.color.get(1, 0), [0.5, 0.25, 0.125]);
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        assert!(synthesize(&request(vec![true; 5]), &mut Scribbler).is_err());
    }
}
