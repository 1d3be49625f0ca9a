use super::{place_primitive, retrieve_primitive, Layout, PrimitiveDb, PrimitiveInstance};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, CategoryId, TriangleMesh, Vec3, CEILING, EMPTY, FIRST_OBJECT_ID, FLOOR, WALL};

/// Instance index used for shell triangles in primitive-ID maps.
pub const SHELL_INSTANCE: u32 = u32::MAX;

/// Bidirectional category name <-> identifier map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRegistry {
    entries: Vec<(CategoryId, String)>,
}

impl CategoryRegistry {
    /// Shell categories plus the layout's object categories in order of first
    /// appearance, numbered from 16.
    pub fn from_layout(layout: &Layout) -> Result<Self> {
        let mut reg = CategoryRegistry {
            entries: vec![
                (WALL, "wall".to_string()),
                (FLOOR, "floor".to_string()),
                (CEILING, "ceiling".to_string()),
            ],
        };
        for obj in &layout.objects {
            reg.intern(&obj.category)?;
        }
        Ok(reg)
    }

    fn intern(&mut self, name: &str) -> Result<CategoryId> {
        if let Some(id) = self.id(name) {
            return Ok(id);
        }
        let next = self
            .entries
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| *id >= FIRST_OBJECT_ID)
            .max()
            .map_or(Some(FIRST_OBJECT_ID), |m| m.checked_add(1))
            .ok_or_else(|| Error::invalid("layout", "more than 240 object categories"))?;
        self.entries.push((next, name.to_string()));
        Ok(next)
    }

    pub fn id(&self, name: &str) -> Option<CategoryId> {
        self.entries.iter().find(|(_, n)| n == name).map(|(id, _)| *id)
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        if id == EMPTY {
            return Some("empty");
        }
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, n)| n.as_str())
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        self.entries.iter().any(|(i, _)| *i == id)
    }

    pub fn entries(&self) -> &[(CategoryId, String)] {
        &self.entries
    }
}

/// Placed primitives plus the room shell; the source of all condition maps.
#[derive(Debug, Clone)]
pub struct ConditionScene {
    pub instances: Vec<PrimitiveInstance>,
    pub shell: TriangleMesh,
    pub registry: CategoryRegistry,
    pub room_bounds: Aabb,
}

impl ConditionScene {
    /// Retrieves and places one primitive per layout object, then assembles
    /// the scene.
    pub fn build(layout: &Layout, db: &PrimitiveDb) -> Result<Self> {
        let registry = CategoryRegistry::from_layout(layout)?;
        let mut instances = Vec::with_capacity(layout.objects.len());
        for (i, obj) in layout.objects.iter().enumerate() {
            let rec = retrieve_primitive(obj, &db.records, layout.seed)?;
            let mesh = db.mesh(&rec.id).expect("record belongs to db");
            let cat = registry.id(&obj.category).expect("registry built from layout");
            instances.push(place_primitive(obj, rec, mesh, i, cat));
        }
        assemble_scene(layout, instances)
    }

    pub fn instance(&self, index: u32) -> Option<&PrimitiveInstance> {
        self.instances.get(index as usize)
    }
}

/// Builds the six inward-facing shell rectangles and the category registry.
pub fn assemble_scene(layout: &Layout, instances: Vec<PrimitiveInstance>) -> Result<ConditionScene> {
    if instances.len() != layout.objects.len() {
        return Err(Error::invalid(
            "scene",
            format!("{} instances for {} layout objects", instances.len(), layout.objects.len()),
        ));
    }
    let registry = CategoryRegistry::from_layout(layout)?;
    for inst in &instances {
        let name = &layout.objects[inst.object_index].category;
        if registry.id(name) != Some(inst.category_id) {
            return Err(Error::invalid("scene", format!("instance {} has a mismatched category id", inst.object_index)));
        }
    }
    let (w, d, h) = (layout.room.width, layout.room.depth, layout.room.height);
    let shell = room_shell(w, d, h);
    Ok(ConditionScene {
        instances,
        shell,
        registry,
        room_bounds: Aabb {
            min: Vec3::zeros(),
            max: Vec3::new(w, d, h),
        },
    })
}

fn room_shell(w: f64, d: f64, h: f64) -> TriangleMesh {
    let c = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    // Each quad is wound counter-clockwise as seen from inside the room.
    let quads: [([Vec3; 4], CategoryId); 6] = [
        ([c(0., 0., 0.), c(w, 0., 0.), c(w, d, 0.), c(0., d, 0.)], FLOOR),
        ([c(0., 0., h), c(0., d, h), c(w, d, h), c(w, 0., h)], CEILING),
        ([c(0., 0., 0.), c(0., 0., h), c(w, 0., h), c(w, 0., 0.)], WALL),
        ([c(0., d, 0.), c(w, d, 0.), c(w, d, h), c(0., d, h)], WALL),
        ([c(0., 0., 0.), c(0., d, 0.), c(0., d, h), c(0., 0., h)], WALL),
        ([c(w, 0., 0.), c(w, 0., h), c(w, d, h), c(w, d, 0.)], WALL),
    ];
    let mut shell = TriangleMesh::default();
    for (corners, label) in quads {
        let base = shell.positions.len() as u32;
        for p in corners {
            shell.positions.push(p);
            shell.colors.push([0.5; 3]);
            shell.labels.push(label);
        }
        shell.triangles.push([base, base + 1, base + 2]);
        shell.triangles.push([base, base + 2, base + 3]);
    }
    shell
}
