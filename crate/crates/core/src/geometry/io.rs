//! Image and mesh serialization.
//!
//! * color: 8-bit RGB PNG
//! * depth: 16-bit grayscale PNG in millimeters, 0 = invalid
//! * semantic: 8-bit grayscale PNG of category identifiers
//! * meshes: ASCII PLY with `red green blue` and an integer `semantic`
//!   vertex property; ASCII PLY and OBJ are accepted on input.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb as PixelRgb};

use super::{ColorMap, DepthMap, SemanticMap, TriangleMesh, Vec3};
use crate::error::{Error, Result};

pub fn color_to_png(map: &ColorMap) -> Result<Vec<u8>> {
    let img = ImageBuffer::<PixelRgb<u8>, _>::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        PixelRgb(map.get(x as usize, y as usize).map(quantize_unit))
    });
    encode(img)
}

pub fn color_from_png(bytes: &[u8]) -> Result<ColorMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let mut map = ColorMap::new(img.width() as usize, img.height() as usize);
    for (x, y, p) in img.enumerate_pixels() {
        map.set(x as usize, y as usize, p.0.map(|c| c as f64 / 255.0));
    }
    Ok(map)
}

/// Millimeter encoding of a depth value; 0 encodes "invalid".
pub fn depth_to_mm(d: Option<f64>) -> u16 {
    match d {
        Some(d) => (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16,
        None => 0,
    }
}

pub fn depth_to_png(map: &DepthMap) -> Result<Vec<u8>> {
    let img = ImageBuffer::<Luma<u16>, _>::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        Luma([depth_to_mm(map.get(x as usize, y as usize))])
    });
    encode(img)
}

pub fn depth_from_png(bytes: &[u8]) -> Result<DepthMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma16();
    let mut map = DepthMap::invalid(img.width() as usize, img.height() as usize);
    for (x, y, p) in img.enumerate_pixels() {
        if p.0[0] > 0 {
            map.set(x as usize, y as usize, p.0[0] as f64 / 1000.0);
        }
    }
    Ok(map)
}

pub fn semantic_to_png(map: &SemanticMap) -> Result<Vec<u8>> {
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(
        map.width() as u32,
        map.height() as u32,
        map.ids().to_vec(),
    )
    .ok_or_else(|| Error::Dimension("semantic buffer".into()))?;
    encode(img)
}

pub fn semantic_from_png(bytes: &[u8]) -> Result<SemanticMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    SemanticMap::from_vec(w, h, img.into_raw())
}

/// Boolean mask as an 8-bit PNG (255 = true).
pub fn mask_to_png(mask: &[bool], width: usize, height: usize) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::Dimension("mask buffer".into()))?;
    encode(img)
}

pub fn mask_from_png(bytes: &[u8]) -> Result<(Vec<bool>, usize, usize)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.into_raw().into_iter().map(|v| v >= 128).collect(), w, h))
}

fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode<P, C>(img: ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Serializes a mesh as ASCII PLY. Output is a pure function of the mesh.
pub fn mesh_to_ply(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(64 * (mesh.vertex_count() + mesh.triangle_count()) + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertex_count());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str("property int semantic\n");
    let _ = writeln!(s, "element face {}", mesh.triangle_count());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for i in 0..mesh.vertex_count() {
        let p = mesh.positions[i];
        let [r, g, b] = mesh.colors[i].map(quantize_unit);
        let _ = writeln!(
            s,
            "{:.6} {:.6} {:.6} {r} {g} {b} {}",
            p.x, p.y, p.z, mesh.labels[i]
        );
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

/// Parses ASCII PLY. Recognized vertex properties: `x y z`, optional
/// `red green blue` and `semantic`; others are skipped. Polygon faces are
/// fan-triangulated.
pub fn mesh_from_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse("ply", "missing magic"));
    }
    let mut n_vertices = None;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::parse("ply.format", format!("unsupported format {fmt}")))
            }
            ["element", "vertex", n] => {
                n_vertices = Some(parse_num::<usize>(n, "ply.element vertex")?);
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = parse_num(n, "ply.element face")?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n_vertices = n_vertices.ok_or_else(|| Error::parse("ply.element vertex", "missing"))?;
    let col = |name: &str| vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse("ply.vertex", "x/y/z properties required")),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let sem = col("semantic");

    let mut mesh = TriangleMesh::default();
    let mut body = lines.filter(|l| !l.trim().is_empty());
    for i in 0..n_vertices {
        let line = body
            .next()
            .ok_or_else(|| Error::parse("ply.vertex", format!("expected {n_vertices} vertices, got {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| parse_num::<f64>(w, "ply.vertex"))
            .collect::<Result<_>>()?;
        if vals.len() < vertex_props.len() {
            return Err(Error::parse("ply.vertex", format!("vertex {i} has too few values")));
        }
        mesh.positions.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
        mesh.colors
            .push(rgb.map_or([0.5; 3], |c| c.map(|k| vals[k] / 255.0)));
        mesh.labels.push(sem.map_or(0, |k| vals[k] as u8));
    }
    for i in 0..n_faces {
        let line = body
            .next()
            .ok_or_else(|| Error::parse("ply.face", format!("expected {n_faces} faces, got {i}")))?;
        let idx: Vec<u32> = line
            .split_whitespace()
            .map(|w| parse_num::<u32>(w, "ply.face"))
            .collect::<Result<_>>()?;
        let (&count, rest) = idx
            .split_first()
            .ok_or_else(|| Error::parse("ply.face", "empty face line"))?;
        if rest.len() < count as usize || count < 3 {
            return Err(Error::parse("ply.face", format!("face {i} malformed")));
        }
        push_fan(&mut mesh, &rest[..count as usize]);
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Parses Wavefront OBJ (`v` and `f` records only; 1-based and negative
/// indices supported).
pub fn mesh_from_obj(text: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let c: Vec<f64> = words
                    .take(3)
                    .map(|w| parse_num::<f64>(w, "obj.v"))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::parse("obj.v", format!("line {}", lineno + 1)));
                }
                mesh.positions.push(Vec3::new(c[0], c[1], c[2]));
                mesh.colors.push([0.5; 3]);
                mesh.labels.push(0);
            }
            Some("f") => {
                let n = mesh.positions.len() as i64;
                let idx: Vec<u32> = words
                    .map(|w| {
                        let head = w.split('/').next().unwrap_or("");
                        let i: i64 = parse_num(head, "obj.f")?;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(Error::parse("obj.f", format!("index out of range on line {}", lineno + 1)));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse("obj.f", format!("line {}", lineno + 1)));
                }
                push_fan(&mut mesh, &idx);
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => mesh_from_ply(&text),
        Some("obj") => mesh_from_obj(&text),
        other => Err(Error::parse(
            "mesh",
            format!("unsupported mesh extension {other:?} for {}", path.display()),
        )),
    }
}

fn push_fan(mesh: &mut TriangleMesh, poly: &[u32]) {
    for k in 1..poly.len() - 1 {
        mesh.triangles.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(field, format!("cannot parse `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_roundtrip_at_mm() {
        let d = DepthMap::from_fn(5, 3, |x, y| {
            (x + y > 0).then(|| 0.5 + 0.3217 * x as f64 + 1.1 * y as f64)
        });
        let back = depth_from_png(&depth_to_png(&d).unwrap()).unwrap();
        assert_eq!(back.mask(), d.mask());
        for (a, b) in back.values().iter().zip(d.values()) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
    }

    #[test]
    fn ply_roundtrip_keeps_labels_and_topology() {
        let mut cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)).with_label(17);
        cube.colors[3] = [1.0, 0.0, 0.2];
        let back = mesh_from_ply(&mesh_to_ply(&cube)).unwrap();
        assert_eq!(back.triangles, cube.triangles);
        assert_eq!(back.labels, cube.labels);
        assert_eq!(back.colors[3][0], 1.0);
    }

    #[test]
    fn obj_quads_are_triangulated() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let m = mesh_from_obj(obj).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!((m.surface_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_ply_is_rejected() {
        assert!(mesh_from_ply("ply\nformat ascii 1.0\nend_header\n").is_err());
        assert!(mesh_from_ply("nope").is_err());
    }
}
