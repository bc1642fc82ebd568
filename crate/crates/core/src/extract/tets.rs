//! Iso-surface extraction by marching tetrahedra over a Kuhn split of each cell.
//!
//! Every cube is cut into six tetrahedra sharing the main diagonal. The split
//! is the same for all cells, so neighbouring cells agree on their shared
//! face diagonals and the output is watertight. Vertices are welded by the
//! grid edge they lie on.

use std::collections::HashMap;

use crate::exec::{map_range, Execution};
use crate::math::Vec3;

use super::IndicatorGrid;

const EDGE_EPS: f64 = 1e-6;

/// Tetrahedra as corner indices (bit 0 = +x, bit 1 = +y, bit 2 = +z).
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Triangle soup for one z-slab of cells; vertices are keyed by grid edge.
struct Slab {
    /// Edge keys plus an inside-to-outside direction for winding.
    triangles: Vec<([(u32, u32); 3], Vec3)>,
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

fn slab_triangles(grid: &IndicatorGrid, k: usize) -> Slab {
    let res = grid.resolution;
    let iso = grid.iso;
    let mut triangles = Vec::new();
    for j in 0..res - 1 {
        for i in 0..res - 1 {
            let ids: [u32; 8] = std::array::from_fn(|c| {
                grid.index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2)) as u32
            });
            let vals = ids.map(|id| grid.values[id as usize]);
            let inside = vals.map(|v| v > iso);
            if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                continue;
            }
            for tet in KUHN {
                let ins: Vec<usize> = tet.iter().copied().filter(|&c| inside[c]).collect();
                let outs: Vec<usize> = tet.iter().copied().filter(|&c| !inside[c]).collect();
                if ins.is_empty() || outs.is_empty() {
                    continue;
                }
                let corner =
                    |c: usize| Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, (c >> 2) as f64);
                let mean =
                    |cs: &[usize]| cs.iter().map(|&c| corner(c)).sum::<Vec3>() / cs.len() as f64;
                let dir = mean(&outs) - mean(&ins);
                let e = |a: usize, b: usize| edge_key(ids[a], ids[b]);
                match (ins.len(), outs.len()) {
                    (1, 3) => triangles.push((
                        [e(ins[0], outs[0]), e(ins[0], outs[1]), e(ins[0], outs[2])],
                        dir,
                    )),
                    (3, 1) => triangles.push((
                        [e(outs[0], ins[0]), e(outs[0], ins[1]), e(outs[0], ins[2])],
                        dir,
                    )),
                    (2, 2) => {
                        let (a, b, c, d) = (
                            e(ins[0], outs[0]),
                            e(ins[0], outs[1]),
                            e(ins[1], outs[1]),
                            e(ins[1], outs[0]),
                        );
                        triangles.push(([a, b, c], dir));
                        triangles.push(([a, c, d], dir));
                    }
                    _ => {}
                }
            }
        }
    }
    Slab { triangles }
}

/// Extracts the `iso` level set. Triangles are wound so their normals point
/// from the `> iso` side towards the `≤ iso` side.
pub(crate) fn marching_tetrahedra(
    grid: &IndicatorGrid,
    exec: Execution,
) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let res = grid.resolution;
    let slabs = map_range(exec, res - 1, |k| slab_triangles(grid, k));
    let node_pos = |id: u32| {
        let id = id as usize;
        grid.node(id % res, (id / res) % res, id / (res * res))
    };
    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles = Vec::new();
    for slab in slabs {
        for (tri, dir) in slab.triangles {
            let ids = tri.map(|key| {
                let (fa, fb) = (grid.values[key.0 as usize], grid.values[key.1 as usize]);
                // keep crossings off the nodes so no triangle collapses to zero area
                let t = ((grid.iso - fa) / (fb - fa)).clamp(EDGE_EPS, 1.0 - EDGE_EPS);
                *index.entry(key).or_insert_with(|| {
                    let p = node_pos(key.0) + (node_pos(key.1) - node_pos(key.0)) * t;
                    vertices.push([p.x, p.y, p.z]);
                    (vertices.len() - 1) as u32
                })
            });
            if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                continue;
            }
            let [a, b, c] = ids.map(|i| Vec3::from(vertices[i as usize]));
            let n = (b - a).cross(&(c - a));
            triangles.push(if n.dot(&dir) >= 0.0 {
                ids
            } else {
                [ids[0], ids[2], ids[1]]
            });
        }
    }
    (vertices, triangles)
}
