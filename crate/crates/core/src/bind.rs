//! Binding Gaussians to mesh triangles and posing them under deformation.

use thiserror::Error;

use crate::exec::{map_range, Execution};
use crate::math::{logit, matrix_to_quat, v3, Mat3};
use crate::scene::{
    compose_in_plane, realize_bound_colors, triangle_frame, weight_template, BoundAsset,
    ColoredMesh, GaussianCloud3D, SceneError,
};

pub const INITIAL_OPACITY: f64 = 0.9;
/// In-plane scale as a fraction of the host triangle's mean edge length.
pub const INITIAL_SCALE: f64 = 0.5;
/// Normal-axis scale as a fraction of the mean edge length.
pub const INITIAL_THICKNESS: f64 = 0.1;
/// Scales are clamped to this multiple of the host mean edge length.
pub const SCALE_CLAMP: f64 = 2.0;

#[derive(Debug, Error)]
pub enum BindError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{degenerate} of {total} triangles are degenerate")]
    TooManyDegenerate { degenerate: usize, total: usize },
    #[error("mesh has no triangles")]
    Empty,
    #[error("frame {frame} has {actual} vertices, the bound mesh has {expected}")]
    VertexCount {
        frame: usize,
        expected: usize,
        actual: usize,
    },
    #[error("frame {frame} has a non-finite vertex {vertex}")]
    NonFinite { frame: usize, vertex: usize },
    #[error("deformation stream: {0}")]
    Stream(String),
}

/// Binds `n` Gaussians to every non-degenerate triangle of `mesh`.
///
/// Degenerate triangles are dropped with a warning; more than half of them
/// being degenerate is an error. Vertices are kept as-is so deformation
/// streams for the original mesh still apply.
pub fn build_bound_asset(mesh: &ColoredMesh, n: usize) -> Result<BoundAsset, BindError> {
    mesh.validate()?;
    let weights = weight_template(n)?;
    if mesh.triangles.is_empty() {
        return Err(BindError::Empty);
    }
    let degenerate = mesh.degenerate_triangles();
    let mut bad: Vec<bool> = vec![false; mesh.triangles.len()];
    for &t in &degenerate {
        bad[t] = true;
    }
    // a frame is also needed for rotations
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let v = tri.map(|k| v3(mesh.vertices[k as usize]));
        if triangle_frame(&v[0], &v[1], &v[2]).is_none() {
            bad[t] = true;
        }
    }
    let n_bad = bad.iter().filter(|&&b| b).count();
    if 2 * n_bad > mesh.triangles.len() {
        return Err(BindError::TooManyDegenerate {
            degenerate: n_bad,
            total: mesh.triangles.len(),
        });
    }
    if n_bad > 0 {
        log::warn!("skipping {n_bad} degenerate triangles while binding");
    }
    let mut bound_mesh = mesh.clone();
    bound_mesh.triangles = mesh
        .triangles
        .iter()
        .zip(&bad)
        .filter(|(_, &b)| !b)
        .map(|(t, _)| *t)
        .collect();

    let count = bound_mesh.triangles.len() * n;
    let mut log_scales = Vec::with_capacity(count);
    for t in 0..bound_mesh.triangles.len() {
        let l = bound_mesh.mean_edge_length(t);
        for _ in 0..n {
            log_scales.push([
                (INITIAL_SCALE * l).ln(),
                (INITIAL_SCALE * l).ln(),
                (INITIAL_THICKNESS * l).ln(),
            ]);
        }
    }
    let mut asset = BoundAsset {
        mesh: bound_mesh,
        weights,
        colors: Vec::new(),
        opacity_logits: vec![logit(INITIAL_OPACITY); count],
        rotations: vec![[1.0, 0.0]; count],
        log_scales,
    };
    asset.colors = realize_bound_colors(&asset, true);
    asset.validate()?;
    Ok(asset)
}

/// Shape of one learnable parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupShape {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

pub const BOUND_GROUPS: [&str; 5] = ["vertices", "colors", "opacities", "rotations", "scales"];

/// The five groups a bound asset exposes to the optimizer. The barycentric
/// template is frozen and never listed.
pub fn learnable_views(asset: &BoundAsset) -> Vec<GroupShape> {
    let g = asset.len();
    vec![
        GroupShape {
            name: "vertices",
            rows: asset.mesh.vertices.len(),
            cols: 3,
        },
        GroupShape {
            name: "colors",
            rows: g,
            cols: 3,
        },
        GroupShape {
            name: "opacities",
            rows: g,
            cols: 1,
        },
        GroupShape {
            name: "rotations",
            rows: g,
            cols: 2,
        },
        GroupShape {
            name: "scales",
            rows: g,
            cols: 3,
        },
    ]
}

fn check_frame(asset: &BoundAsset, vertices: &[[f64; 3]], frame: usize) -> Result<(), BindError> {
    if vertices.len() != asset.mesh.vertices.len() {
        return Err(BindError::VertexCount {
            frame,
            expected: asset.mesh.vertices.len(),
            actual: vertices.len(),
        });
    }
    if let Some(vertex) = vertices
        .iter()
        .position(|v| !v.iter().all(|c| c.is_finite()))
    {
        return Err(BindError::NonFinite { frame, vertex });
    }
    Ok(())
}

/// Free Gaussians for `asset` posed on `vertices`.
///
/// Positions follow the barycentric template; rotations are the deformed
/// triangle frame composed with the learned in-plane rotation. Gaussians on
/// a collapsed triangle take their rotation from `fallback` (one quaternion
/// per Gaussian, usually the previous frame's pose).
pub fn apply_deformation(
    asset: &BoundAsset,
    vertices: &[[f64; 3]],
    fallback: Option<&[[f64; 4]]>,
) -> Result<GaussianCloud3D, BindError> {
    check_frame(asset, vertices, 0)?;
    let n = asset.gaussians_per_triangle();
    let mut cloud = GaussianCloud3D {
        positions: Vec::with_capacity(asset.len()),
        colors: asset.colors.clone(),
        opacity_logits: asset.opacity_logits.clone(),
        log_scales: asset.log_scales.clone(),
        rotations: Vec::with_capacity(asset.len()),
    };
    for (t, tri) in asset.mesh.triangles.iter().enumerate() {
        let v = tri.map(|k| v3(vertices[k as usize]));
        let frame = triangle_frame(&v[0], &v[1], &v[2]);
        for (k, w) in asset.weights.iter().enumerate() {
            let i = t * n + k;
            let p = v[0] * w[0] + v[1] * w[1] + v[2] * w[2];
            cloud.positions.push([p.x, p.y, p.z]);
            let q = match (&frame, fallback) {
                (Some(f), _) => matrix_to_quat(&compose_in_plane(f, asset.rotations[i])),
                (None, Some(prev)) => prev[i],
                (None, None) => [1.0, 0.0, 0.0, 0.0],
            };
            cloud.rotations.push(q);
        }
    }
    Ok(cloud)
}

/// Sequence of vertex-position frames for a bound mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeformationStream {
    pub vertex_count: usize,
    pub timestamps: Vec<f32>,
    pub frames: Vec<Vec<[f32; 3]>>,
}

pub const STREAM_MAGIC: &[u8; 4] = b"GDPD";

impl DeformationStream {
    pub fn new(vertex_count: usize) -> Self {
        Self {
            vertex_count,
            ..Default::default()
        }
    }

    pub fn push(&mut self, timestamp: f32, vertices: &[[f64; 3]]) -> Result<(), BindError> {
        let frame = self.frames.len();
        if vertices.len() != self.vertex_count {
            return Err(BindError::VertexCount {
                frame,
                expected: self.vertex_count,
                actual: vertices.len(),
            });
        }
        let v: Vec<[f32; 3]> = vertices.iter().map(|p| p.map(|c| c as f32)).collect();
        if let Some(vertex) = v.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(BindError::NonFinite { frame, vertex });
        }
        self.timestamps.push(timestamp);
        self.frames.push(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> Vec<[f64; 3]> {
        self.frames[i].iter().map(|p| p.map(|c| c as f64)).collect()
    }

    /// `magic "GDPD"`, `u32` vertex count, `u32` frame count, then per frame
    /// an `f32` timestamp and the vertex triples, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.frames.len() * (4 + 12 * self.vertex_count));
        out.extend_from_slice(STREAM_MAGIC);
        out.extend_from_slice(&(self.vertex_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for (t, f) in self.timestamps.iter().zip(&self.frames) {
            out.extend_from_slice(&t.to_le_bytes());
            for p in f {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BindError> {
        if bytes.len() < 12 {
            return Err(BindError::Stream(format!(
                "header needs 12 bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != STREAM_MAGIC {
            return Err(BindError::Stream(format!(
                "bad magic {:?} at byte 0",
                &bytes[..4]
            )));
        }
        let u32_at =
            |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let f32_at =
            |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let vertex_count = u32_at(4) as usize;
        let frame_count = u32_at(8) as usize;
        let per_frame = 4 + 12 * vertex_count;
        let expected = 12 + per_frame * frame_count;
        if bytes.len() != expected {
            return Err(BindError::Stream(format!(
                "expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut s = Self::new(vertex_count);
        for f in 0..frame_count {
            let base = 12 + f * per_frame;
            s.timestamps.push(f32_at(base));
            let frame: Vec<[f32; 3]> = (0..vertex_count)
                .map(|v| std::array::from_fn(|c| f32_at(base + 4 + 12 * v + 4 * c)))
                .collect();
            if let Some(vertex) = frame.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(BindError::NonFinite { frame: f, vertex });
            }
            s.frames.push(frame);
        }
        Ok(s)
    }
}

/// Poses an asset frame by frame, carrying rotations over collapsed
/// triangles from the previous frame.
pub struct DeformationPlayer<'a> {
    asset: &'a BoundAsset,
    last: Vec<[f64; 4]>,
}

impl<'a> DeformationPlayer<'a> {
    pub fn new(asset: &'a BoundAsset) -> Result<Self, BindError> {
        let rest = apply_deformation(asset, &asset.mesh.vertices, None)?;
        Ok(Self {
            asset,
            last: rest.rotations,
        })
    }

    pub fn pose(&mut self, vertices: &[[f64; 3]]) -> Result<GaussianCloud3D, BindError> {
        let cloud = apply_deformation(self.asset, vertices, Some(&self.last))?;
        self.last = cloud.rotations.clone();
        Ok(cloud)
    }
}

/// Poses every frame of a stream independently (collapsed triangles fall
/// back to the rest pose).
pub fn pose_stream(
    asset: &BoundAsset,
    stream: &DeformationStream,
    exec: Execution,
) -> Result<Vec<GaussianCloud3D>, BindError> {
    if stream.vertex_count != asset.mesh.vertices.len() {
        return Err(BindError::VertexCount {
            frame: 0,
            expected: asset.mesh.vertices.len(),
            actual: stream.vertex_count,
        });
    }
    let rest = apply_deformation(asset, &asset.mesh.vertices, None)?.rotations;
    map_range(exec, stream.len(), |f| {
        let v = stream.frame(f);
        check_frame(asset, &v, f)?;
        apply_deformation(asset, &v, Some(&rest))
    })
    .into_iter()
    .collect()
}

/// Penalty on the change of uniform Laplacian coordinates relative to a
/// rest shape: `w · Σ_v ‖δ_v(V) − δ_v(V₀)‖²` with `δ_v = v − mean(N(v))`.
/// Returns the energy and adds its gradient into `grad`.
pub fn laplacian_penalty(
    vertices: &[[f64; 3]],
    rest: &[[f64; 3]],
    neighbors: &[Vec<u32>],
    weight: f64,
    grad: &mut [[f64; 3]],
) -> f64 {
    let mut energy = 0.0;
    for (v, nbrs) in neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        let mut d = [0.0; 3];
        for c in 0..3 {
            let mean: f64 = nbrs.iter().map(|&u| vertices[u as usize][c]).sum::<f64>() * inv;
            let mean0: f64 = nbrs.iter().map(|&u| rest[u as usize][c]).sum::<f64>() * inv;
            d[c] = (vertices[v][c] - mean) - (rest[v][c] - mean0);
        }
        energy += weight * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        for c in 0..3 {
            let g = 2.0 * weight * d[c];
            grad[v][c] += g;
            for &u in nbrs {
                grad[u as usize][c] -= g * inv;
            }
        }
    }
    energy
}

/// Clamps each Gaussian's scales to `factor ×` its host triangle's mean edge length.
pub fn clamp_scales(asset: &mut BoundAsset, factor: f64) {
    let n = asset.gaussians_per_triangle();
    for t in 0..asset.triangle_count() {
        let limit = (factor * asset.mesh.mean_edge_length(t)).ln();
        if !limit.is_finite() {
            continue;
        }
        for k in 0..n {
            for s in &mut asset.log_scales[t * n + k] {
                *s = s.min(limit);
            }
        }
    }
}

/// Rest-pose rotation matrices of all bound Gaussians (identity on
/// collapsed triangles).
pub fn rest_rotations(asset: &BoundAsset) -> Vec<Mat3> {
    (0..asset.len())
        .map(|i| {
            asset
                .rotation_matrix(i, &asset.mesh.vertices)
                .unwrap_or_else(Mat3::identity)
        })
        .collect()
}
