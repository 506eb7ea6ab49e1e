//! Analytic test shapes: uniform surface samples with Gaussian noise, plus a fine
//! ground-truth triangulation of the same surface.

use std::f64::consts::PI;

use occfit_core::mesher::{CoordinateSpace, TriangleMesh};
use occfit_core::{geom, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, clap::ValueEnum)]
pub enum Shape {
    /// Sphere of radius 0.25 at the origin.
    Sphere,
    /// Torus around the z axis, major radius 0.25, tube radius 0.1.
    Torus,
    /// Axis-aligned box with half extents (0.2, 0.15, 0.1).
    Box,
}

pub const SPHERE_RADIUS: f64 = 0.25;
pub const TORUS_MAJOR: f64 = 0.25;
pub const TORUS_MINOR: f64 = 0.1;
pub const BOX_HALF: Vec3 = [0.2, 0.15, 0.1];

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    [0, 1, 2].map(|_| StandardNormal.sample(rng))
}

fn on_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        if let Some(n) = geom::normalized(gaussian3(rng)) {
            return geom::scale(n, SPHERE_RADIUS);
        }
    }
}

fn torus_point(u: f64, v: f64) -> Vec3 {
    let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
    [ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()]
}

/// Area density on the torus is proportional to `R + r·cos v`; `v` is drawn by rejection.
fn on_torus<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let u = 2.0 * PI * rng.random::<f64>();
    loop {
        let v = 2.0 * PI * rng.random::<f64>();
        let accept = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if rng.random::<f64>() < accept {
            return torus_point(u, v);
        }
    }
}

fn on_box<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let [a, b, c] = BOX_HALF;
    // face pairs normal to x, y, z with areas 4bc, 4ac, 4ab
    let areas = [b * c, a * c, a * b];
    let pick = rng.random::<f64>() * areas.iter().sum::<f64>();
    let axis = if pick < areas[0] {
        0
    } else if pick < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = BOX_HALF[k] * (2.0 * rng.random::<f64>() - 1.0);
    }
    p[axis] = if rng.random::<bool>() { BOX_HALF[axis] } else { -BOX_HALF[axis] };
    p
}

/// `n` area-uniform surface points, each displaced by isotropic Gaussian noise.
pub fn sample<R: Rng + ?Sized>(shape: Shape, n: usize, noise_sigma: f64, rng: &mut R) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let p = match shape {
                Shape::Sphere => on_sphere(rng),
                Shape::Torus => on_torus(rng),
                Shape::Box => on_box(rng),
            };
            if noise_sigma > 0.0 {
                geom::add(p, geom::scale(gaussian3(rng), noise_sigma))
            } else {
                p
            }
        })
        .collect()
}

/// Icosahedron refined `levels` times with every vertex pushed onto the sphere.
fn icosphere(radius: f64, levels: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| geom::normalized(*v).expect("nonzero"))
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut midpoints = std::collections::HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = geom::scale(geom::add(vertices[a as usize], vertices[b as usize]), 0.5);
                vertices.push(geom::normalized(m).expect("nonzero"));
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| geom::scale(v, radius)).collect();
    TriangleMesh::new(vertices, faces, CoordinateSpace::Raw).expect("valid icosphere")
}

/// Quad grid over the torus parameters, split into outward-facing triangles.
fn torus_mesh(nu: usize, nv: usize) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let u = 2.0 * PI * i as f64 / nu as f64;
            let v = 2.0 * PI * j as f64 / nv as f64;
            vertices.push(torus_point(u, v));
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, faces, CoordinateSpace::Raw).expect("valid torus")
}

fn box_mesh() -> TriangleMesh {
    let [a, b, c] = BOX_HALF;
    // corner k has coordinates (±a, ±b, ±c) by bits x|y<<1|z<<2
    let vertices: Vec<Vec3> = (0..8)
        .map(|k| {
            [
                if k & 1 == 0 { -a } else { a },
                if k & 2 == 0 { -b } else { b },
                if k & 4 == 0 { -c } else { c },
            ]
        })
        .collect();
    let quads = [
        [0, 2, 6, 4], // -x, listed clockwise seen from outside
        [1, 5, 7, 3], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 1, 3, 2], // -z
        [4, 6, 7, 5], // +z
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[2], q[1]], [q[0], q[3], q[2]]])
        .collect();
    TriangleMesh::new(vertices, faces, CoordinateSpace::Raw).expect("valid box")
}

/// Ground-truth mesh with outward normals. The box is exact; the sphere and torus
/// tessellations deviate from the analytic surface by less than 1e-4.
pub fn ground_truth(shape: Shape) -> TriangleMesh {
    match shape {
        Shape::Sphere => icosphere(SPHERE_RADIUS, 6),
        Shape::Torus => torus_mesh(512, 256),
        Shape::Box => box_mesh(),
    }
}
