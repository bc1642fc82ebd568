//! Analytic shapes used as initial meshes and test fixtures.

use std::collections::HashMap;

use crate::math::{v3, Vec3};
use crate::scene::ColoredMesh;

/// Subdivided icosahedron projected onto a sphere, wound outward.
pub fn icosphere(subdivisions: usize, radius: f64, color: [f64; 3]) -> ColoredMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
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
    .map(|p| v3(*p).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let vertices: Vec<[f64; 3]> = verts
        .iter()
        .map(|v| [v.x * radius, v.y * radius, v.z * radius])
        .collect();
    let colors = vec![color; vertices.len()];
    ColoredMesh::new(vertices, colors, tris)
}

/// Axis-aligned box centered at the origin, each face split into `n × n` quads.
pub fn box_mesh(half: [f64; 3], n: usize, color: [f64; 3]) -> ColoredMesh {
    let n = n.max(1);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut index: HashMap<[i64; 3], u32> = HashMap::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut ids = vec![vec![0u32; n + 1]; n + 1];
            for (i, row) in ids.iter_mut().enumerate() {
                for (j, id) in row.iter_mut().enumerate() {
                    let mut key = [0i64; 3];
                    key[axis] = if sign > 0.0 { n as i64 } else { -(n as i64) };
                    key[u] = 2 * i as i64 - n as i64;
                    key[v] = 2 * j as i64 - n as i64;
                    *id = *index.entry(key).or_insert_with(|| {
                        let p: [f64; 3] =
                            std::array::from_fn(|k| key[k] as f64 / n as f64 * half[k]);
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    });
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]);
                    if sign > 0.0 {
                        triangles.extend([[a, b, c], [a, c, d]]);
                    } else {
                        triangles.extend([[a, c, b], [a, d, c]]);
                    }
                }
            }
        }
    }
    let colors = vec![color; vertices.len()];
    ColoredMesh::new(vertices, colors, triangles)
}

/// Evenly spread points on a sphere (Fibonacci lattice) with outward normals.
pub fn sphere_points(n: usize, radius: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        let nrm = [r * phi.cos(), r * phi.sin(), z];
        normals.push(nrm);
        points.push(nrm.map(|c| c * radius));
    }
    (points, normals)
}

/// Regular samples on the surface of an axis-aligned cube of side `side`,
/// `m × m` per face, with outward normals.
pub fn cube_points(m: usize, side: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let h = side / 2.0;
    let mut points = Vec::with_capacity(6 * m * m);
    let mut normals = Vec::with_capacity(6 * m * m);
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..m {
                for j in 0..m {
                    let mut p = [0.0; 3];
                    p[axis] = sign * h;
                    p[u] = -h + side * (i as f64 + 0.5) / m as f64;
                    p[v] = -h + side * (j as f64 + 0.5) / m as f64;
                    let mut nrm = [0.0; 3];
                    nrm[axis] = sign;
                    points.push(p);
                    normals.push(nrm);
                }
            }
        }
    }
    (points, normals)
}
