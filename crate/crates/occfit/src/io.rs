//! Point-cloud and mesh files: `.xyz`, ASCII PLY and OBJ.
//!
//! Readers report malformed input with its 1-based line number. Writers print
//! coordinates with the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use occfit_core::cloud::Normalization;
use occfit_core::mesher::{CoordinateSpace, TriangleMesh};
use occfit_core::Vec3;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MeshFormat {
    Obj,
    Ply,
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match extension(path).as_str() {
            "xyz" | "txt" => Ok(CloudFormat::Xyz),
            "ply" => Ok(CloudFormat::PlyAscii),
            _ => Err(Error::Usage(format!(
                "cannot infer the point-cloud format of {} (expected .xyz or .ply)",
                path.display()
            ))),
        }
    }
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match extension(path).as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            _ => Err(Error::Usage(format!(
                "cannot infer the mesh format of {} (expected .obj or .ply)",
                path.display()
            ))),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(token: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a number, found {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite coordinate {token:?}")));
    }
    Ok(v)
}

/// Points from `.xyz` text: one `x y z` triple per line, further columns ignored,
/// `#` starts a comment.
pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 coordinates, found {}", tokens.len())));
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = parse_f64(tokens[k], path, i + 1)?;
        }
        points.push(p);
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names in order; `None` marks a list property.
    properties: Vec<Option<String>>,
}

struct PlyHeader {
    elements: Vec<PlyElement>,
    /// Index of the first body line.
    body_start: usize,
}

fn parse_ply_header(lines: &[&str], path: &Path) -> Result<PlyHeader> {
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(parse_err(path, 1, "missing 'ply' magic line"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut ascii = false;
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let n = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, _] => {
                if *kind != "ascii" {
                    return Err(parse_err(path, n, format!("unsupported PLY format {kind:?}, only ascii is read")));
                }
                ascii = true;
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, n, format!("bad element count {count:?}")))?;
                elements.push(PlyElement {
                    name: (*name).to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, _] => match elements.last_mut() {
                Some(e) => e.properties.push(None),
                None => return Err(parse_err(path, n, "property before any element")),
            },
            ["property", _, name] => match elements.last_mut() {
                Some(e) => e.properties.push(Some((*name).to_string())),
                None => return Err(parse_err(path, n, "property before any element")),
            },
            ["end_header"] => {
                if !ascii {
                    return Err(parse_err(path, n, "missing 'format ascii 1.0' line"));
                }
                return Ok(PlyHeader {
                    elements,
                    body_start: i + 1,
                });
            }
            _ => return Err(parse_err(path, n, format!("unrecognized header line {:?}", raw.trim()))),
        }
    }
    Err(parse_err(path, lines.len(), "header has no 'end_header' line"))
}

/// Walks the body of an ASCII PLY file, handing every record of every element to `visit`
/// as `(element, tokens, line number)`.
fn walk_ply_body(
    text: &str,
    path: &Path,
    mut visit: impl FnMut(&PlyElement, &[&str], usize) -> Result<()>,
) -> Result<()> {
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_ply_header(&lines, path)?;
    let mut cursor = header.body_start;
    for element in &header.elements {
        let mut seen = 0;
        while seen < element.count {
            let Some(raw) = lines.get(cursor) else {
                return Err(parse_err(
                    path,
                    lines.len(),
                    format!("file ends after {seen} of {} {} records", element.count, element.name),
                ));
            };
            cursor += 1;
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            visit(element, &tokens, cursor)?;
            seen += 1;
        }
    }
    Ok(())
}

fn vertex_columns(element: &PlyElement, path: &Path, line: usize) -> Result<[usize; 3]> {
    let mut cols = [usize::MAX; 3];
    for (c, p) in element.properties.iter().enumerate() {
        match p.as_deref() {
            Some("x") => cols[0] = c,
            Some("y") => cols[1] = c,
            Some("z") => cols[2] = c,
            Some(_) => {}
            None => return Err(parse_err(path, line, "list properties on vertices are not supported")),
        }
    }
    if cols.contains(&usize::MAX) {
        return Err(parse_err(path, line, "vertex element lacks x, y or z"));
    }
    Ok(cols)
}

fn parse_ply_vertex(element: &PlyElement, tokens: &[&str], path: &Path, line: usize) -> Result<Vec3> {
    let cols = vertex_columns(element, path, line)?;
    if tokens.len() != element.properties.len() {
        return Err(parse_err(
            path,
            line,
            format!("expected {} vertex values, found {}", element.properties.len(), tokens.len()),
        ));
    }
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = parse_f64(tokens[cols[k]], path, line)?;
    }
    Ok(p)
}

/// Vertex positions of an ASCII PLY file; other properties and elements are skipped.
pub fn parse_ply_points(text: &str, path: &Path) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    walk_ply_body(text, path, |element, tokens, line| {
        if element.name == "vertex" {
            points.push(parse_ply_vertex(element, tokens, path, line)?);
        }
        Ok(())
    })?;
    Ok(points)
}

/// Raw (un-normalized) points in file order.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<Vec<Vec3>> {
    let text = read_text(path)?;
    match format {
        CloudFormat::Xyz => parse_xyz(&text, path),
        CloudFormat::PlyAscii => parse_ply_points(&text, path),
    }
}

pub fn write_xyz(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut out = String::with_capacity(points.len() * 64);
    for p in points {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 64 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn ply_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 64 + mesh.triangles.len() * 24);
    let _ = write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

/// Writes `mesh`, first mapping normalized vertices back to raw coordinates when a
/// normalization record is given.
pub fn write_mesh(mesh: &TriangleMesh, normalization: Option<&Normalization>, path: &Path, format: MeshFormat) -> Result<()> {
    let raw;
    let mesh = match (mesh.space, normalization) {
        (CoordinateSpace::Normalized, Some(n)) => {
            raw = mesh.to_raw(n);
            &raw
        }
        _ => mesh,
    };
    let text = match format {
        MeshFormat::Obj => obj_string(mesh),
        MeshFormat::Ply => ply_string(mesh),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn push_polygon(
    triangles: &mut Vec<[u32; 3]>,
    polygon: &[usize],
    vertex_count: usize,
    path: &Path,
    line: usize,
) -> Result<()> {
    if polygon.len() < 3 {
        return Err(parse_err(path, line, "face with fewer than 3 vertices"));
    }
    if let Some(&bad) = polygon.iter().find(|&&v| v >= vertex_count) {
        return Err(parse_err(path, line, format!("vertex index {bad} out of range")));
    }
    for w in 1..polygon.len() - 1 {
        triangles.push([polygon[0] as u32, polygon[w] as u32, polygon[w + 1] as u32]);
    }
    Ok(())
}

/// OBJ `v` and `f` records; polygons are fan-triangulated, other records ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(Vec<i64>, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 {
                    return Err(parse_err(path, i + 1, "vertex record needs 3 coordinates"));
                }
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = parse_f64(coords[k], path, i + 1)?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let v: i64 = head
                        .parse()
                        .map_err(|_| parse_err(path, i + 1, format!("bad face index {t:?}")))?;
                    idx.push(v);
                }
                faces.push((idx, i + 1));
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mut triangles = Vec::new();
    for (idx, line) in faces {
        // 1-based, negative values count back from the end
        let resolved: Vec<usize> = idx
            .iter()
            .map(|&v| match v {
                v if v > 0 => Ok(v as usize - 1),
                v if v < 0 && (-v) as usize <= n => Ok(n - (-v) as usize),
                _ => Err(parse_err(path, line, format!("vertex index {v} out of range"))),
            })
            .collect::<Result<_>>()?;
        push_polygon(&mut triangles, &resolved, n, path, line)?;
    }
    Ok((vertices, triangles))
}

/// Vertices and faces of an ASCII PLY mesh.
pub fn parse_ply_mesh(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    walk_ply_body(text, path, |element, tokens, line| {
        match element.name.as_str() {
            "vertex" => vertices.push(parse_ply_vertex(element, tokens, path, line)?),
            "face" => {
                let count: usize = tokens[0]
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("bad face size {:?}", tokens[0])))?;
                if tokens.len() < count + 1 {
                    return Err(parse_err(path, line, "face record shorter than its size"));
                }
                let polygon = tokens[1..=count]
                    .iter()
                    .map(|t| t.parse::<usize>().map_err(|_| parse_err(path, line, format!("bad face index {t:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                push_polygon(&mut triangles, &polygon, vertices.len(), path, line)?;
            }
            _ => {}
        }
        Ok(())
    })?;
    Ok((vertices, triangles))
}

/// Reads a mesh in raw coordinates. Degenerate triangles are dropped.
pub fn read_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let text = read_text(path)?;
    let (vertices, triangles) = match format {
        MeshFormat::Obj => parse_obj(&text, path)?,
        MeshFormat::Ply => parse_ply_mesh(&text, path)?,
    };
    let mut mesh = TriangleMesh::new(vertices, Vec::new(), CoordinateSpace::Raw)?;
    mesh.triangles = triangles;
    let keep: Vec<[u32; 3]> = (0..mesh.triangles.len())
        .filter(|&t| mesh.area(t) > occfit_core::mesher::MIN_TRIANGLE_AREA)
        .map(|t| mesh.triangles[t])
        .collect();
    Ok(TriangleMesh::new(mesh.vertices, keep, CoordinateSpace::Raw)?)
}
