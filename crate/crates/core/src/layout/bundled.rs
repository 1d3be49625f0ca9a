//! Procedurally generated primitive database used by tests and desk-scale
//! runs. Every primitive is a union of axis-aligned cuboids.

use std::path::{Path, PathBuf};

use super::{PrimitiveDb, PrimitiveRecord};
use crate::error::Result;
use crate::geometry::{io, TriangleMesh, Vec3};

struct Spec {
    id: &'static str,
    category: &'static str,
    tags: &'static [&'static str],
    /// Cuboids as `(min, max)` corners.
    parts: &'static [([f64; 3], [f64; 3])],
}

const SPECS: &[Spec] = &[
    Spec {
        id: "box-bed",
        category: "bed",
        tags: &["double", "simple"],
        parts: &[([0.0, 0.0, 0.0], [2.0, 1.6, 0.5])],
    },
    Spec {
        id: "box-cabinet",
        category: "cabinet",
        tags: &["wooden", "tall"],
        parts: &[([0.0, 0.0, 0.0], [0.8, 0.45, 1.0])],
    },
    Spec {
        id: "box-chair",
        category: "chair",
        tags: &["wooden", "simple"],
        parts: &[
            ([0.0, 0.0, 0.0], [0.5, 0.5, 0.45]),
            ([0.0, 0.42, 0.45], [0.5, 0.5, 0.9]),
        ],
    },
    Spec {
        id: "box-armchair",
        category: "chair",
        tags: &["soft", "arm"],
        parts: &[
            ([0.0, 0.0, 0.0], [0.8, 0.75, 0.4]),
            ([0.0, 0.6, 0.4], [0.8, 0.75, 0.85]),
            ([0.0, 0.0, 0.4], [0.12, 0.6, 0.6]),
            ([0.68, 0.0, 0.4], [0.8, 0.6, 0.6]),
        ],
    },
    Spec {
        id: "box-desk",
        category: "desk",
        tags: &["office", "wooden"],
        parts: &[
            ([0.0, 0.0, 0.7], [1.4, 0.7, 0.75]),
            ([0.0, 0.0, 0.0], [0.05, 0.7, 0.7]),
            ([1.35, 0.0, 0.0], [1.4, 0.7, 0.7]),
        ],
    },
    Spec {
        id: "box-nightstand",
        category: "nightstand",
        tags: &["small", "wooden"],
        parts: &[([0.0, 0.0, 0.0], [0.45, 0.4, 0.55])],
    },
    Spec {
        id: "box-shelf",
        category: "shelf",
        tags: &["tall", "book"],
        parts: &[([0.0, 0.0, 0.0], [0.9, 0.35, 1.8])],
    },
    Spec {
        id: "box-sofa",
        category: "sofa",
        tags: &["soft", "fabric"],
        parts: &[
            ([0.0, 0.0, 0.0], [2.0, 0.9, 0.42]),
            ([0.0, 0.7, 0.42], [2.0, 0.9, 0.85]),
            ([0.0, 0.0, 0.42], [0.2, 0.7, 0.62]),
            ([1.8, 0.0, 0.42], [2.0, 0.7, 0.62]),
        ],
    },
    Spec {
        id: "box-table",
        category: "table",
        tags: &["dining", "wooden"],
        parts: &[
            ([0.0, 0.0, 0.7], [1.2, 0.8, 0.75]),
            ([0.0, 0.0, 0.0], [0.06, 0.06, 0.7]),
            ([1.14, 0.0, 0.0], [1.2, 0.06, 0.7]),
            ([0.0, 0.74, 0.0], [0.06, 0.8, 0.7]),
            ([1.14, 0.74, 0.0], [1.2, 0.8, 0.7]),
        ],
    },
    Spec {
        id: "box-coffee-table",
        category: "table",
        tags: &["coffee", "low"],
        parts: &[([0.0, 0.0, 0.0], [1.0, 0.5, 0.4])],
    },
    Spec {
        id: "panel-tv",
        category: "tv",
        tags: &["flat", "screen"],
        parts: &[([0.0, 0.0, 0.0], [1.2, 0.04, 0.7])],
    },
];

/// Identifiers of the bundled primitives that are convex (single cuboid).
pub const CONVEX_IDS: &[&str] = &["box-bed", "box-cabinet", "box-coffee-table", "box-nightstand", "box-shelf", "panel-tv"];

fn build_mesh(spec: &Spec) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    for (lo, hi) in spec.parts {
        mesh.append(&TriangleMesh::cuboid(Vec3::from(*lo), Vec3::from(*hi)));
    }
    mesh
}

/// Builds the bundled database in memory. Mesh paths point to
/// `<id>.ply`, matching [`export`].
pub fn database() -> PrimitiveDb {
    let mut records = Vec::new();
    let mut meshes = Vec::new();
    for spec in SPECS {
        let mesh = build_mesh(spec);
        let e = mesh.bounds().extent();
        records.push(PrimitiveRecord {
            id: spec.id.to_string(),
            category: spec.category.to_string(),
            tags: spec.tags.iter().map(|s| s.to_string()).collect(),
            mesh: PathBuf::from(format!("{}.ply", spec.id)),
            bbox: [e.x, e.y, e.z],
        });
        meshes.push(mesh);
    }
    PrimitiveDb::new(records, meshes).expect("bundled primitives are valid")
}

/// Writes `manifest.json` and one PLY per primitive into `dir`.
pub fn export(dir: &Path) -> Result<()> {
    let db = database();
    std::fs::create_dir_all(dir)?;
    for (rec, mesh) in db.records.iter().zip(&db.meshes) {
        io::write_bytes(&dir.join(&rec.mesh), io::mesh_to_ply(mesh).as_bytes())?;
    }
    let manifest = serde_json::to_string_pretty(&db.records)?;
    io::write_bytes(&dir.join("manifest.json"), manifest.as_bytes())?;
    Ok(())
}
