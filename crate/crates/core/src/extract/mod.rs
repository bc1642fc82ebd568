//! Surfel cloud to colored mesh.
//!
//! Pipeline: oriented points from surfel centers and normals, a screened
//! Poisson indicator on a regular grid, marching tetrahedra at the iso
//! level, largest connected component, optional quadric decimation, then
//! per-vertex colors from nearby surfels.

mod color;
mod decimate;
mod poisson;
mod tets;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::math::Vec3;
use crate::scene::{ColoredMesh, SurfelCloud2D};
use crate::spatial::KdTree;

pub use color::color_vertices;
pub use decimate::decimate;
pub use poisson::{IndicatorGrid, SolveStats};

pub const MIN_POINTS: usize = 100;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("need at least {min} oriented points, got {got}")]
    TooFewPoints { got: usize, min: usize },
    #[error("point set is degenerate (coplanar within {0:e})")]
    Coplanar(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("iso-surface is empty")]
    EmptySurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    /// Grid nodes per axis.
    pub resolution: usize,
    pub iso: f64,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    /// Weight pulling the field towards `iso` at the sample points.
    pub screening: f64,
    /// Relative padding of the grid around the points.
    pub margin: f64,
    /// Surfels below this opacity are ignored.
    pub prune_opacity: f64,
    /// Triangle budget; `None` keeps the full-resolution surface. Written
    /// as `0` in config files.
    #[serde(with = "budget")]
    pub max_triangles: Option<usize>,
    pub color_neighbors: usize,
    pub execution: Execution,
}

mod budget {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let n = usize::deserialize(d)?;
        Ok((n > 0).then_some(n))
    }
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            resolution: 128,
            iso: 0.5,
            cg_tolerance: 1e-6,
            cg_max_iterations: 500,
            screening: 4.0,
            margin: 0.05,
            prune_opacity: 0.05,
            max_triangles: Some(20_000),
            color_neighbors: 8,
            execution: Execution::Parallel,
        }
    }
}

/// Points with unit normals and per-point confidence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrientedPointSet {
    pub points: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub confidences: Vec<f64>,
}

impl OrientedPointSet {
    pub fn new(points: Vec<[f64; 3]>, normals: Vec<[f64; 3]>) -> Result<Self, ExtractError> {
        let confidences = vec![1.0; points.len()];
        Self::with_confidences(points, normals, confidences)
    }

    pub fn with_confidences(
        points: Vec<[f64; 3]>,
        normals: Vec<[f64; 3]>,
        confidences: Vec<f64>,
    ) -> Result<Self, ExtractError> {
        if points.len() != normals.len() || points.len() != confidences.len() {
            return Err(ExtractError::Invalid(format!(
                "{} points, {} normals, {} confidences",
                points.len(),
                normals.len(),
                confidences.len()
            )));
        }
        let mut unit = Vec::with_capacity(normals.len());
        for (i, n) in normals.iter().enumerate() {
            let v = Vec3::from(*n);
            let len = v.norm();
            if !(len.is_finite() && len > 0.0) || !points[i].iter().all(|c| c.is_finite()) {
                return Err(ExtractError::Invalid(format!(
                    "point {i} has a non-finite position or zero normal"
                )));
            }
            unit.push((v / len).into());
        }
        if confidences.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(ExtractError::Invalid(
                "confidences must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            points,
            normals: unit,
            confidences,
        })
    }

    /// Centers, normals and opacities of the surfels at or above `prune`.
    pub fn from_surfels(surfels: &SurfelCloud2D, prune: f64) -> Result<Self, ExtractError> {
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        let mut conf = Vec::new();
        for i in 0..surfels.len() {
            let o = surfels.opacity(i);
            if o >= prune {
                pts.push(surfels.positions[i]);
                let n = surfels.normal(i);
                nrm.push([n.x, n.y, n.z]);
                conf.push(o);
            }
        }
        Self::with_confidences(pts, nrm, conf)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            for k in 0..3 {
                p[k] += t[k];
            }
        }
        out
    }

    fn check_degenerate(&self) -> Result<(), ExtractError> {
        if self.len() < MIN_POINTS {
            return Err(ExtractError::TooFewPoints {
                got: self.len(),
                min: MIN_POINTS,
            });
        }
        let n = self.len() as f64;
        let mean = self.points.iter().map(|p| Vec3::from(*p)).sum::<Vec3>() / n;
        let mut cov = crate::math::Mat3::zeros();
        for p in &self.points {
            let d = Vec3::from(*p) - mean;
            cov += d * d.transpose();
        }
        cov /= n;
        let eig = cov.symmetric_eigenvalues();
        let (lo, hi) = (eig.min().max(0.0).sqrt(), eig.max().max(0.0).sqrt());
        if hi == 0.0 || lo <= 1e-6 * hi {
            return Err(ExtractError::Coplanar(1e-6));
        }
        Ok(())
    }

    /// Area each point stands for, from the distance to its k-th neighbour.
    fn sample_areas(&self, tree: &KdTree, exec: Execution) -> Vec<f64> {
        const K: usize = 8;
        crate::exec::map_range(exec, self.len(), |i| {
            let nn = tree.knn(&self.points[i], K + 1);
            let d2 = nn.last().map(|x| x.1).unwrap_or(0.0);
            std::f64::consts::PI * d2 / K as f64
        })
    }
}

/// Result of a surface extraction.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub mesh: ColoredMesh,
    /// Signed volume came out negative: the normals point inwards.
    pub inverted: bool,
    pub solve: SolveStats,
    pub grid_spacing: f64,
}

/// Solves the indicator field for an oriented point set.
pub fn indicator_field(
    points: &OrientedPointSet,
    opts: &ExtractOptions,
) -> Result<(IndicatorGrid, SolveStats), ExtractError> {
    points.check_degenerate()?;
    if opts.resolution < 4 {
        return Err(ExtractError::Invalid(format!(
            "grid resolution {} too small",
            opts.resolution
        )));
    }
    let tree = KdTree::new(&points.points);
    let areas = points.sample_areas(&tree, opts.execution);
    let (lo, hi) = bounds_of(&points.points);
    let extent = (hi - lo).max();
    let center = (lo + hi) * 0.5;
    // cubic grid: margin on every side plus two cells for the splat kernel
    let inner = extent * (1.0 + 2.0 * opts.margin);
    let size = inner * (opts.resolution - 1) as f64 / (opts.resolution - 5) as f64;
    let origin = center - Vec3::repeat(size / 2.0);
    let settings = poisson::SolveSettings {
        screening: opts.screening,
        tolerance: opts.cg_tolerance,
        max_iterations: opts.cg_max_iterations,
        execution: opts.execution,
    };
    let (mut grid, stats) =
        poisson::solve_indicator(points, &areas, opts.resolution, &origin, size, &settings);
    grid.iso = opts.iso;
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(ExtractError::Invalid("indicator solve diverged".into()));
    }
    Ok((grid, stats))
}

/// Reconstructs a mesh (gray vertex colors) from oriented points.
pub fn reconstruct_surface(
    points: &OrientedPointSet,
    opts: &ExtractOptions,
) -> Result<Extraction, ExtractError> {
    let (grid, solve) = indicator_field(points, opts)?;
    let (vertices, triangles) = tets::marching_tetrahedra(&grid, opts.execution);
    let triangles = largest_component(vertices.len(), &triangles);
    if triangles.is_empty() {
        return Err(ExtractError::EmptySurface);
    }
    // collapse slivers (and decimate to the budget) without opening cracks
    let (lo, hi) = bounds_of(&vertices);
    let extent = (hi - lo).max();
    let min_area2 = 2.0 * crate::scene::DEGENERATE_AREA * extent * extent;
    let budget = opts.max_triangles.unwrap_or(usize::MAX);
    let (vertices, triangles) = decimate(&vertices, &triangles, budget, min_area2);
    let mut mesh = ColoredMesh::new(vertices.clone(), vec![[0.5; 3]; vertices.len()], triangles);
    let degenerate = mesh.degenerate_triangles();
    if !degenerate.is_empty() {
        log::warn!(
            "dropping {} degenerate triangles that could not be collapsed",
            degenerate.len()
        );
        let mut skip = degenerate.into_iter().peekable();
        let mut kept = Vec::with_capacity(mesh.triangles.len());
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if skip.peek() == Some(&t) {
                skip.next();
            } else {
                kept.push(*tri);
            }
        }
        mesh.triangles = kept;
    }
    mesh.remove_unreferenced_vertices();
    let inverted = mesh.signed_volume() < 0.0;
    if inverted {
        log::warn!("extracted surface is inside-out (negative signed volume); normals likely point inwards");
    }
    Ok(Extraction {
        mesh,
        inverted,
        solve,
        grid_spacing: grid.spacing,
    })
}

fn bounds_of(vertices: &[[f64; 3]]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        lo = lo.inf(&Vec3::from(*v));
        hi = hi.sup(&Vec3::from(*v));
    }
    (lo, hi)
}

/// Exports surfels as a colored mesh.
pub fn extract_mesh(
    surfels: &SurfelCloud2D,
    opts: &ExtractOptions,
) -> Result<Extraction, ExtractError> {
    surfels
        .validate()
        .map_err(|e| ExtractError::Invalid(e.to_string()))?;
    let points = OrientedPointSet::from_surfels(surfels, opts.prune_opacity)?;
    let mut out = reconstruct_surface(&points, opts)?;
    out.mesh.colors = color_vertices(
        &out.mesh.vertices,
        surfels,
        opts.color_neighbors,
        opts.execution,
    );
    Ok(out)
}

/// Triangles of the connected component with the most triangles (ties go
/// to the component containing the lowest triangle index).
pub fn largest_component(vertex_count: usize, triangles: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let mut parent: Vec<u32> = (0..vertex_count as u32).collect();
    fn find(p: &mut [u32], mut x: u32) -> u32 {
        while p[x as usize] != x {
            p[x as usize] = p[p[x as usize] as usize];
            x = p[x as usize];
        }
        x
    }
    for t in triangles {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            if a != b {
                parent[a.max(b) as usize] = a.min(b);
            }
        }
    }
    let mut counts = std::collections::HashMap::new();
    let mut first = std::collections::HashMap::new();
    for (i, t) in triangles.iter().enumerate() {
        let r = find(&mut parent, t[0]);
        *counts.entry(r).or_insert(0usize) += 1;
        first.entry(r).or_insert(i);
    }
    let Some(best) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(first[b.0].cmp(&first[a.0])))
        .map(|(r, _)| *r)
    else {
        return Vec::new();
    };
    triangles
        .iter()
        .copied()
        .filter(|t| find(&mut parent, t[0]) == best)
        .collect()
}

#[cfg(test)]
mod tests;
