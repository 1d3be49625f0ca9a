//! Room layouts: parsing the user's 2D box specification, retrieving and
//! placing primitive meshes, and assembling the condition scene.
//!
//! Room coordinates span `[0, width] x [0, depth]` on the floor plane with
//! the floor at `z = 0` and the ceiling at `z = height`.

pub mod bundled;
mod primitive;
mod scene;

pub use primitive::{place_primitive, retrieve_primitive, PrimitiveDb, PrimitiveInstance, PrimitiveRecord};
pub use scene::{assemble_scene, CategoryRegistry, ConditionScene, SHELL_INSTANCE};

use serde_json::Value;

use crate::error::{Error, Result};

const ROOM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBox {
    pub category: String,
    /// Footprint center on the floor plane.
    pub center: [f64; 2],
    /// Footprint `(width, depth)` before rotation.
    pub footprint: [f64; 2],
    /// Counter-clockwise rotation about +Z, degrees.
    pub rotation: f64,
    pub height: Option<f64>,
    pub tags: Vec<String>,
}

impl ObjectBox {
    /// Footprint rectangle corners after rotation.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let [hw, hd] = [self.footprint[0] / 2.0, self.footprint[1] / 2.0];
        [[-hw, -hd], [hw, -hd], [hw, hd], [-hw, hd]]
            .map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    fn validate(&self, at: &str) -> Result<()> {
        if self.category.trim().is_empty() {
            return Err(Error::invalid(format!("{at}.category"), "must be nonempty"));
        }
        let [w, d] = self.footprint;
        if !(w > 0.0 && w.is_finite() && d > 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("{at}.size"), format!("footprint {w}x{d} must be positive")));
        }
        if let Some(h) = self.height {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!("{at}.height"), format!("{h} must be positive")));
            }
        }
        if !self.center.iter().chain([&self.rotation]).all(|v| v.is_finite()) {
            return Err(Error::invalid(at.to_string(), "center/rotation must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub room: Room,
    pub objects: Vec<ObjectBox>,
    pub seed: u64,
    pub prompt: String,
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        let Room { width, depth, height } = self.room;
        for (name, v) in [("room.width", width), ("room.depth", depth), ("room.height", height)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let at = format!("objects[{i}]");
            obj.validate(&at)?;
            for [x, y] in obj.corners() {
                if x < -ROOM_TOL || x > width + ROOM_TOL || y < -ROOM_TOL || y > depth + ROOM_TOL {
                    return Err(Error::invalid(
                        at,
                        format!("footprint corner ({x:.3}, {y:.3}) lies outside the {width}x{depth} room"),
                    ));
                }
            }
            if let Some(h) = obj.height {
                if h > height + ROOM_TOL {
                    return Err(Error::invalid(format!("{at}.height"), "taller than the room"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a JSON layout document:
///
/// ```json
/// { "room": {"width": 4, "depth": 3, "height": 2.5}, "seed": 1,
///   "prompt": "a cozy bedroom",
///   "objects": [{"category": "bed", "center": [2, 1], "size": [2, 1.6],
///                "rotation": 0, "height": 0.5, "tags": ["wooden"]}] }
/// ```
///
/// `seed`, `prompt`, `objects`, `rotation`, `height` and `tags` are optional.
pub fn parse_layout(document: &str) -> Result<Layout> {
    let root: Value = serde_json::from_str(document).map_err(|e| Error::parse("<document>", e.to_string()))?;
    let root = as_object(&root, "<document>")?;
    let room = as_object(field(root, "room", "room")?, "room")?;
    let room = Room {
        width: number(field(room, "width", "room.width")?, "room.width")?,
        depth: number(field(room, "depth", "room.depth")?, "room.depth")?,
        height: number(field(room, "height", "room.height")?, "room.height")?,
    };
    let seed = match root.get("seed") {
        None | Some(Value::Null) => 0,
        Some(v) => v.as_u64().ok_or_else(|| Error::parse("seed", "expected a non-negative integer"))?,
    };
    let prompt = match root.get("prompt") {
        None | Some(Value::Null) => String::new(),
        Some(v) => v.as_str().ok_or_else(|| Error::parse("prompt", "expected a string"))?.to_string(),
    };
    let mut objects = Vec::new();
    if let Some(list) = root.get("objects").filter(|v| !v.is_null()) {
        let list = list.as_array().ok_or_else(|| Error::parse("objects", "expected an array"))?;
        for (i, obj) in list.iter().enumerate() {
            objects.push(parse_object(obj, &format!("objects[{i}]"))?);
        }
    }
    let layout = Layout { room, objects, seed, prompt };
    layout.validate()?;
    Ok(layout)
}

fn parse_object(v: &Value, at: &str) -> Result<ObjectBox> {
    let obj = as_object(v, at)?;
    let category = field(obj, "category", &format!("{at}.category"))?
        .as_str()
        .ok_or_else(|| Error::parse(format!("{at}.category"), "expected a string"))?
        .to_string();
    let center = pair(field(obj, "center", &format!("{at}.center"))?, &format!("{at}.center"))?;
    let footprint = pair(field(obj, "size", &format!("{at}.size"))?, &format!("{at}.size"))?;
    let rotation = match obj.get("rotation") {
        None | Some(Value::Null) => 0.0,
        Some(r) => number(r, &format!("{at}.rotation"))?,
    };
    let height = match obj.get("height") {
        None | Some(Value::Null) => None,
        Some(h) => Some(number(h, &format!("{at}.height"))?),
    };
    let tags = match obj.get("tags") {
        None | Some(Value::Null) => Vec::new(),
        Some(t) => t
            .as_array()
            .ok_or_else(|| Error::parse(format!("{at}.tags"), "expected an array of strings"))?
            .iter()
            .map(|w| {
                w.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::parse(format!("{at}.tags"), "expected an array of strings"))
            })
            .collect::<Result<_>>()?,
    };
    Ok(ObjectBox { category, center, footprint, rotation, height, tags })
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::parse(at, "expected an object"))
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::parse(at, "missing"))
}

fn number(v: &Value, at: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::parse(at, "expected a number"))
}

fn pair(v: &Value, at: &str) -> Result<[f64; 2]> {
    match v.as_array().map(Vec::as_slice) {
        Some([a, b]) => Ok([number(a, at)?, number(b, at)?]),
        _ => Err(Error::parse(at, "expected a two-element array")),
    }
}
