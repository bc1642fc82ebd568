use std::collections::HashMap;

use super::{check_finite, SceneError};
use crate::math::{v3, Vec3};

/// Triangle mesh with per-vertex RGB colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredMesh {
    pub vertices: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Edge-sharing statistics; non-manifold meshes are allowed but reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ManifoldReport {
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
}

impl ManifoldReport {
    pub fn is_manifold(&self) -> bool {
        self.non_manifold_edges == 0
    }
}

/// Smallest admissible triangle area after scaling the mesh into a unit box.
pub const DEGENERATE_AREA: f64 = 1e-12;

impl ColoredMesh {
    pub fn new(vertices: Vec<[f64; 3]>, colors: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            colors,
            triangles,
        }
    }

    pub fn vertex(&self, i: u32) -> Vec3 {
        v3(self.vertices[i as usize])
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertex(i))
    }

    /// Checks index ranges, finiteness and color range, and logs a warning
    /// for non-manifold edges.
    pub fn validate(&self) -> Result<(), SceneError> {
        super::check_len("vertex colors", self.vertices.len(), self.colors.len())?;
        check_finite("vertices", &self.vertices)?;
        check_finite("vertex colors", &self.colors)?;
        if let Some(index) = self
            .colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(SceneError::Invalid(format!(
                "vertex color {index} outside [0, 1]: {:?}",
                self.colors[index]
            )));
        }
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &index in tri {
                if index as usize >= n {
                    return Err(SceneError::IndexOutOfRange {
                        triangle: t,
                        index,
                        vertices: n,
                    });
                }
            }
        }
        let report = self.manifold_report();
        if !report.is_manifold() {
            log::warn!("mesh has {} non-manifold edges", report.non_manifold_edges);
        }
        Ok(())
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            let p = v3(*v);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        (lo, hi)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn mean_edge_length(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0
    }

    /// Indices of triangles whose area, measured after scaling the mesh so
    /// its largest bounding-box side is 1, does not exceed [`DEGENERATE_AREA`].
    /// Triangles that repeat a vertex index are always degenerate.
    pub fn degenerate_triangles(&self) -> Vec<usize> {
        let (lo, hi) = self.bounds();
        let extent = (hi - lo).max().max(f64::MIN_POSITIVE);
        let inv2 = 1.0 / (extent * extent);
        (0..self.triangles.len())
            .filter(|&t| {
                let [i, j, k] = self.triangles[t];
                i == j || j == k || i == k || self.triangle_area(t) * inv2 <= DEGENERATE_AREA
            })
            .collect()
    }

    pub fn manifold_report(&self) -> ManifoldReport {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut report = ManifoldReport::default();
        for &c in counts.values() {
            if c == 1 {
                report.boundary_edges += 1;
            } else if c > 2 {
                report.non_manifold_edges += 1;
            }
        }
        report
    }

    /// Signed enclosed volume; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let [a, b, c] = tri.map(|i| self.vertex(i));
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Area-weighted vertex normals (unit length, zero for isolated vertices).
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertex(i));
            let n = (b - a).cross(&(c - a));
            for &i in tri {
                normals[i as usize] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Sorted, de-duplicated one-ring neighbours of every vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<u32>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                nbrs[a as usize].push(b);
                nbrs[b as usize].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// Drops vertices no triangle references, remapping indices.
    pub fn remove_unreferenced_vertices(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &i in tri {
                used[i as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = vertices.len() as u32;
                vertices.push(self.vertices[i]);
                colors.push(self.colors[i]);
            }
        }
        for tri in &mut self.triangles {
            *tri = tri.map(|i| remap[i as usize]);
        }
        self.vertices = vertices;
        self.colors = colors;
    }

    /// Applies `x ↦ rot·x + trans` to every vertex.
    pub fn transformed(&self, rot: &crate::math::Mat3, trans: &Vec3) -> ColoredMesh {
        let mut out = self.clone();
        for v in &mut out.vertices {
            let p = rot * v3(*v) + trans;
            *v = [p.x, p.y, p.z];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> ColoredMesh {
        ColoredMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0.5; 3]; 4],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
    }

    #[test]
    fn tetra_volume_is_positive() {
        let m = tetra();
        assert!((m.signed_volume() - 1.0 / 6.0).abs() < 1e-12);
        assert!(m.manifold_report().is_manifold());
        assert_eq!(m.manifold_report().boundary_edges, 0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut m = tetra();
        m.triangles.push([0, 1, 7]);
        assert!(matches!(
            m.validate(),
            Err(SceneError::IndexOutOfRange { index: 7, .. })
        ));
    }

    #[test]
    fn degenerate_triangles_are_found() {
        let mut m = tetra();
        m.vertices.push([0.5, 0.0, 0.0]);
        m.colors.push([0.5; 3]);
        m.triangles.push([0, 1, 4]);
        m.triangles.push([2, 2, 3]);
        assert_eq!(m.degenerate_triangles(), vec![4, 5]);
    }

    #[test]
    fn non_manifold_edge_is_flagged_not_rejected() {
        let mut m = tetra();
        m.vertices.push([1.0, 1.0, 1.0]);
        m.colors.push([0.5; 3]);
        m.triangles.push([0, 1, 4]);
        assert!(m.validate().is_ok());
        assert_eq!(m.manifold_report().non_manifold_edges, 1);
    }
}
