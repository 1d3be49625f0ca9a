use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use super::ObjectBox;
use crate::error::{Error, Result};
use crate::geometry::{io, Aabb, CategoryId, TriangleMesh, Vec3};

/// One entry of the primitive manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
    /// Mesh path relative to the manifest.
    pub mesh: PathBuf,
    /// Native bounding box `[w, d, h]` in meters.
    pub bbox: [f64; 3],
}

/// Primitive records with their loaded meshes (same order).
#[derive(Debug, Clone, Default)]
pub struct PrimitiveDb {
    pub records: Vec<PrimitiveRecord>,
    pub meshes: Vec<TriangleMesh>,
}

impl PrimitiveDb {
    pub fn new(records: Vec<PrimitiveRecord>, meshes: Vec<TriangleMesh>) -> Result<Self> {
        if records.len() != meshes.len() {
            return Err(Error::invalid("primitive db", "one mesh per record required"));
        }
        for (rec, mesh) in records.iter().zip(&meshes) {
            if !rec.bbox.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("primitive {}", rec.id), "bbox must be strictly positive"));
            }
            mesh.validate()?;
            if mesh.is_empty() {
                return Err(Error::invalid(format!("primitive {}", rec.id), "mesh has no triangles"));
            }
            let ext = mesh.bounds().extent();
            if ext.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::invalid(format!("primitive {}", rec.id), "mesh is flat along an axis"));
            }
        }
        Ok(PrimitiveDb { records, meshes })
    }

    /// Loads a JSON manifest (list of records) and every referenced mesh.
    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest)?;
        let records: Vec<PrimitiveRecord> =
            serde_json::from_str(&text).map_err(|e| Error::parse("manifest", e.to_string()))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let meshes = records
            .iter()
            .map(|r| io::load_mesh(&base.join(&r.mesh)))
            .collect::<Result<Vec<_>>>()?;
        PrimitiveDb::new(records, meshes)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn mesh(&self, id: &str) -> Option<&TriangleMesh> {
        self.index_of(id).map(|i| &self.meshes[i])
    }
}

/// A primitive mesh placed in the room.
#[derive(Debug, Clone)]
pub struct PrimitiveInstance {
    pub record_id: String,
    pub mesh: TriangleMesh,
    pub object_index: usize,
    pub category_id: CategoryId,
    /// Center of the placed mesh's bounding box.
    pub center: Vec3,
    pub total_area: f64,
}

impl PrimitiveInstance {
    pub fn bounds(&self) -> Aabb {
        self.mesh.bounds()
    }
}

fn normalized_words(words: &[String]) -> BTreeSet<String> {
    words
        .iter()
        .map(|w| w.trim().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Retrieval score (lower is better): log-aspect distance, minus half the
/// fraction of the box's tags the record carries.
fn retrieval_score(bx: &ObjectBox, rec: &PrimitiveRecord) -> f64 {
    let want = (bx.footprint[0] / bx.footprint[1]).ln();
    let have = (rec.bbox[0] / rec.bbox[1]).ln();
    let mut score = (want - have).abs();
    let tags = normalized_words(&bx.tags);
    if !tags.is_empty() {
        let rec_tags = normalized_words(&rec.tags);
        let overlap = tags.intersection(&rec_tags).count() as f64 / tags.len() as f64;
        score -= 0.5 * overlap;
    }
    score
}

/// Picks the record of the box's category whose footprint aspect ratio is
/// closest in log space (tag overlap as a bonus); ties go to the smaller id.
///
/// The ranking is deterministic; `seed` is accepted so embedding-based
/// backends can share the signature.
pub fn retrieve_primitive<'a>(bx: &ObjectBox, db: &'a [PrimitiveRecord], _seed: u64) -> Result<&'a PrimitiveRecord> {
    db.iter()
        .filter(|r| r.category == bx.category)
        .map(|r| (retrieval_score(bx, r), r))
        .min_by(|(sa, ra), (sb, rb)| sa.total_cmp(sb).then_with(|| ra.id.cmp(&rb.id)))
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Retrieval(bx.category.clone()))
}

/// Scales the primitive mesh to the box footprint, rotates it about +Z and
/// rests it on the floor at the box center.
///
/// Height follows `bx.height` when given, otherwise the native height times
/// the mean footprint scale. Vertices get `category_id` as label.
pub fn place_primitive(
    bx: &ObjectBox,
    record: &PrimitiveRecord,
    mesh: &TriangleMesh,
    object_index: usize,
    category_id: CategoryId,
) -> PrimitiveInstance {
    let native = mesh.bounds();
    let ext = native.extent();
    let sx = bx.footprint[0] / ext.x;
    let sy = bx.footprint[1] / ext.y;
    let sz = match bx.height {
        Some(h) => h / ext.z,
        None => 0.5 * (sx + sy),
    };
    let pivot = Vec3::new(native.center().x, native.center().y, native.min.z);
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), bx.rotation.to_radians());
    let offset = Vec3::new(bx.center[0], bx.center[1], 0.0);
    let mut placed = mesh.clone().with_label(category_id);
    for p in &mut placed.positions {
        let local = *p - pivot;
        let scaled = Vec3::new(local.x * sx, local.y * sy, local.z * sz);
        *p = rot * scaled + offset;
    }
    let bounds = placed.bounds();
    PrimitiveInstance {
        record_id: record.id.clone(),
        total_area: placed.surface_area(),
        center: bounds.center(),
        mesh: placed,
        object_index,
        category_id,
    }
}
