//! Surface extraction: sample the margin on a lattice and run marching cubes at `U = 0`.
//!
//! The 256-entry case table is generated from face-local rules instead of being typed
//! in. On each cube face the iso-segments connect every entry crossing to the next exit
//! crossing when walking the face boundary counter-clockwise as seen from outside, which
//! separates the inside corners on ambiguous faces. Neighbouring cells see the same face
//! configuration, so shared faces always agree and closed level sets give closed meshes.
//! Chaining the segments of the six faces yields closed polygons that are fanned into
//! triangles whose winding makes normals point to the outside (`U < iso`).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::cloud::Normalization;
use crate::field::OccupancyField;
use crate::geom::{self, Aabb, Vec3};
use crate::{Error, Result};

/// Triangles with area at or below this are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Cells per axis; the lattice has `resolution + 1` corners per axis.
    pub resolution: usize,
    pub bounds: Aabb,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::Config(alloc::format!(
                "grid resolution must be at least 8, got {}",
                self.resolution
            )));
        }
        if self.bounds.is_degenerate() || !geom::is_finite(self.bounds.min) || !geom::is_finite(self.bounds.max) {
            return Err(Error::Config("grid bounds are degenerate".into()));
        }
        Ok(())
    }

    pub fn corners_per_axis(&self) -> usize {
        self.resolution + 1
    }

    /// Position of lattice corner `(i, j, k)`.
    pub fn corner(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let ext = self.bounds.extent();
        let n = self.resolution as f64;
        [
            self.bounds.min[0] + ext[0] * (i as f64 / n),
            self.bounds.min[1] + ext[1] * (j as f64 / n),
            self.bounds.min[2] + ext[2] * (k as f64 / n),
        ]
    }

    pub fn spacing(&self) -> Vec3 {
        geom::scale(self.bounds.extent(), 1.0 / self.resolution as f64)
    }

    /// All corner positions, `i` fastest.
    pub fn corners(&self) -> Vec<Vec3> {
        let c = self.corners_per_axis();
        let mut out = Vec::with_capacity(c * c * c);
        for k in 0..c {
            for j in 0..c {
                for i in 0..c {
                    out.push(self.corner(i, j, k));
                }
            }
        }
        out
    }
}

/// Scalar values on the lattice corners, `i` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Lattice {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let c = self.grid.corners_per_axis();
        (k * c + j) * c + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }
}

/// Lattice of an arbitrary scalar function.
pub fn sample_fn(grid: &GridSpec, f: impl Fn(Vec3) -> f64) -> Result<Lattice> {
    grid.validate()?;
    let values = grid.corners().into_iter().map(f).collect();
    Ok(Lattice { grid: *grid, values })
}

/// Lattice of the margin of `field`.
pub fn sample_grid(field: &OccupancyField, grid: &GridSpec) -> Result<Lattice> {
    grid.validate()?;
    let c = grid.corners_per_axis();
    let mut values = Vec::with_capacity(c * c * c);
    // One z-slab at a time keeps the batch buffers bounded.
    let mut slab = Vec::with_capacity(c * c);
    for k in 0..c {
        slab.clear();
        for j in 0..c {
            for i in 0..c {
                slab.push(grid.corner(i, j, k));
            }
        }
        values.extend(field.margin_batch(&slab));
    }
    Ok(Lattice { grid: *grid, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateSpace {
    Normalized,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub space: CoordinateSpace,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, space: CoordinateSpace) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().position(|t| t.iter().any(|&v| v >= n)) {
            return Err(Error::Argument(alloc::format!("triangle {t} references a missing vertex")));
        }
        if vertices.iter().any(|v| !geom::is_finite(*v)) {
            return Err(Error::Argument("mesh has non-finite vertex coordinates".into()));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            space,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// `(b - a) × (c - a)`; its length is twice the area.
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        geom::cross(geom::sub(b, a), geom::sub(c, a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * geom::norm(self.face_cross(t))
    }

    pub fn face_normal(&self, t: usize) -> Option<Vec3> {
        geom::normalized(self.face_cross(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Volume enclosed by a closed mesh, positive for outward normals.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge is shared by exactly two triangles that traverse it in
    /// opposite directions.
    pub fn is_closed_manifold(&self) -> bool {
        let mut directed: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *directed.entry((t[e], t[(e + 1) % 3])).or_insert(0) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn to_raw(&self, normalization: &Normalization) -> TriangleMesh {
        match self.space {
            CoordinateSpace::Raw => self.clone(),
            CoordinateSpace::Normalized => TriangleMesh {
                vertices: self.vertices.iter().map(|v| normalization.invert(*v)).collect(),
                triangles: self.triangles.clone(),
                space: CoordinateSpace::Raw,
            },
        }
    }
}

/// Corner `c` of the unit cube sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const EDGES: [(u8, u8); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_between(a: u8, b: u8) -> u8 {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    EDGES.iter().position(|&e| e == (a, b)).expect("adjacent corners") as u8
}

fn corner_pos(c: u8) -> Vec3 {
    [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
}

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
fn faces() -> [[u8; 4]; 6] {
    let mut out = [[0u8; 4]; 6];
    let mut f = 0;
    for axis in 0..3u8 {
        for side in 0..2u8 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let base = side << axis;
            let mut cyc = [base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)];
            let p: Vec<Vec3> = cyc.iter().map(|&c| corner_pos(c)).collect();
            let n = geom::cross(geom::sub(p[1], p[0]), geom::sub(p[2], p[1]));
            let outward = if side == 1 { 1.0 } else { -1.0 };
            if n[axis as usize] * outward < 0.0 {
                cyc.reverse();
            }
            out[f] = cyc;
            f += 1;
        }
    }
    out
}

/// Triangles (as cube-edge triples) for each of the 256 inside/outside corner masks.
#[derive(Debug, Clone)]
pub struct CaseTable {
    cases: Vec<Vec<[u8; 3]>>,
}

impl Default for CaseTable {
    fn default() -> Self {
        Self::new()
    }
}

impl CaseTable {
    pub fn new() -> Self {
        let faces = faces();
        let mut cases = Vec::with_capacity(256);
        for mask in 0u16..256 {
            let inside = |c: u8| (mask >> c) & 1 == 1;
            // next[e] = edge where the iso-line leaving edge e ends
            let mut next = [u8::MAX; 12];
            for face in &faces {
                let crossing = |i: usize| inside(face[i]) != inside(face[(i + 1) % 4]);
                for i in 0..4 {
                    let is_entry = crossing(i) && !inside(face[i]);
                    if !is_entry {
                        continue;
                    }
                    let exit = (1..4)
                        .map(|s| (i + s) % 4)
                        .find(|&j| crossing(j) && inside(face[j]))
                        .expect("every entry has an exit on the same face");
                    let from = edge_between(face[i], face[(i + 1) % 4]);
                    let to = edge_between(face[exit], face[(exit + 1) % 4]);
                    next[from as usize] = to;
                }
            }
            let mut used = [false; 12];
            let mut tris = Vec::new();
            for start in 0..12u8 {
                if next[start as usize] == u8::MAX || used[start as usize] {
                    continue;
                }
                let mut poly = Vec::new();
                let mut e = start;
                while !used[e as usize] {
                    used[e as usize] = true;
                    poly.push(e);
                    e = next[e as usize];
                }
                debug_assert_eq!(e, start);
                for w in 1..poly.len() - 1 {
                    tris.push([poly[0], poly[w], poly[w + 1]]);
                }
            }
            cases.push(tris);
        }
        CaseTable { cases }
    }

    pub fn triangles(&self, mask: u8) -> &[[u8; 3]] {
        &self.cases[mask as usize]
    }
}

/// Iso-surface of the lattice at `iso`; corners with value `> iso` count as inside.
/// Returns an empty mesh when the lattice does not change sign.
pub fn marching_cubes(lattice: &Lattice, iso: f64) -> Result<TriangleMesh> {
    if let Some(i) = lattice.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(alloc::format!("lattice value {i} is not finite")));
    }
    let grid = &lattice.grid;
    grid.validate()?;
    let table = CaseTable::new();
    let c = grid.corners_per_axis();
    let res = grid.resolution;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: BTreeMap<u64, u32> = BTreeMap::new();

    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let corner_ijk = |cn: u8| {
                    (
                        i + (cn & 1) as usize,
                        j + ((cn >> 1) & 1) as usize,
                        k + ((cn >> 2) & 1) as usize,
                    )
                };
                let mut mask = 0u8;
                let mut vals = [0.0; 8];
                for cn in 0..8u8 {
                    let (a, b, d) = corner_ijk(cn);
                    vals[cn as usize] = lattice.get(a, b, d);
                    if vals[cn as usize] > iso {
                        mask |= 1 << cn;
                    }
                }
                let case = table.triangles(mask);
                if case.is_empty() {
                    continue;
                }
                let mut vertex_of = |e: u8| -> u32 {
                    let (ca, cb) = EDGES[e as usize];
                    let (a0, a1, a2) = corner_ijk(ca);
                    let axis = (ca ^ cb).trailing_zeros() as u64;
                    let key = (((a2 * c + a1) * c + a0) as u64) * 3 + axis;
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let (b0, b1, b2) = corner_ijk(cb);
                        let (fa, fb) = (vals[ca as usize], vals[cb as usize]);
                        let t = (iso - fa) / (fb - fa);
                        let pa = grid.corner(a0, a1, a2);
                        let pb = grid.corner(b0, b1, b2);
                        vertices.push(geom::add(pa, geom::scale(geom::sub(pb, pa), t)));
                        (vertices.len() - 1) as u32
                    })
                };
                for tri in case {
                    let t = [vertex_of(tri[0]), vertex_of(tri[1]), vertex_of(tri[2])];
                    triangles.push(t);
                }
            }
        }
    }

    let mut mesh = TriangleMesh {
        vertices,
        triangles,
        space: CoordinateSpace::Normalized,
    };
    let keep: Vec<bool> = (0..mesh.triangles.len()).map(|t| mesh.area(t) > MIN_TRIANGLE_AREA).collect();
    let mut it = keep.iter();
    mesh.triangles.retain(|_| *it.next().unwrap());
    Ok(mesh)
}

/// Margin lattice of `field` followed by marching cubes at `U = 0`.
pub fn extract(field: &OccupancyField, grid: &GridSpec) -> Result<TriangleMesh> {
    marching_cubes(&sample_grid(field, grid)?, 0.0)
}
