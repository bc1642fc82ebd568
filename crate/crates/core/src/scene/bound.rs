use super::{check_finite, check_finite_scalar, check_len, ColoredMesh, SceneError};
use crate::math::{normalize2, normalize_backward, sigmoid, v3, Mat3, Vec3};

/// Gaussians bound to mesh triangles through one shared, frozen set of
/// barycentric weights.
///
/// Gaussian `k` of triangle `t` lives at index `t * N + k`. Its position is
/// never stored; it is realized from the current mesh vertices. Rotations
/// are in-plane angles `(cos θ, sin θ)` relative to the triangle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundAsset {
    pub mesh: ColoredMesh,
    /// Shared barycentric template, one triple per Gaussian in a cluster.
    pub weights: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub rotations: Vec<[f64; 2]>,
    pub log_scales: Vec<[f64; 3]>,
}

/// Default barycentric templates for 1, 3 or 6 Gaussians per triangle.
pub fn weight_template(n: usize) -> Result<Vec<[f64; 3]>, SceneError> {
    let third = 1.0 / 3.0;
    let near_vertex = |i: usize| -> [f64; 3] {
        let mut w = [1.0 / 6.0; 3];
        w[i] = 4.0 / 6.0;
        w
    };
    let near_edge = |i: usize| -> [f64; 3] {
        let mut w = [5.0 / 12.0; 3];
        w[i] = 1.0 / 6.0;
        w
    };
    match n {
        1 => Ok(vec![[third; 3]]),
        3 => Ok((0..3).map(near_vertex).collect()),
        6 => Ok((0..3)
            .map(near_vertex)
            .chain((0..3).map(near_edge))
            .collect()),
        other => Err(SceneError::UnsupportedClusterSize(other)),
    }
}

impl BoundAsset {
    pub fn gaussians_per_triangle(&self) -> usize {
        self.weights.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.mesh.triangles.len()
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.mesh.validate()?;
        for (index, w) in self.weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&c| c < 0.0 || !c.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(SceneError::InvalidWeights { index, weights: *w });
            }
        }
        let n = self.triangle_count() * self.gaussians_per_triangle();
        check_len("bound colors", n, self.colors.len())?;
        check_len("bound opacities", n, self.opacity_logits.len())?;
        check_len("bound rotations", n, self.rotations.len())?;
        check_len("bound scales", n, self.log_scales.len())?;
        check_finite("bound colors", &self.colors)?;
        check_finite_scalar("bound opacities", &self.opacity_logits)?;
        check_finite("bound rotations", &self.rotations)?;
        check_finite("bound scales", &self.log_scales)?;
        if let Some(index) = self
            .rotations
            .iter()
            .position(|r| (r[0] * r[0] + r[1] * r[1] - 1.0).abs() > 1e-3)
        {
            return Err(SceneError::Invalid(format!(
                "in-plane rotation {index} is not unit length: {:?}",
                self.rotations[index]
            )));
        }
        Ok(())
    }

    pub fn renormalize(&mut self) {
        for r in &mut self.rotations {
            *r = normalize2(*r);
        }
    }

    /// World rotation of Gaussian `i`: triangle frame composed with its
    /// in-plane rotation. `None` for a collapsed triangle.
    pub fn rotation_matrix(&self, i: usize, vertices: &[[f64; 3]]) -> Option<Mat3> {
        let t = i / self.gaussians_per_triangle();
        let tri = self.mesh.triangles[t].map(|k| v3(vertices[k as usize]));
        triangle_frame(&tri[0], &tri[1], &tri[2]).map(|f| compose_in_plane(&f, self.rotations[i]))
    }
}

/// `F · Rz(θ)` for a frame `F` and `(cos θ, sin θ)` given unnormalized.
pub fn compose_in_plane(frame: &Mat3, rot: [f64; 2]) -> Mat3 {
    let [c, s] = normalize2(rot);
    let e1: Vec3 = frame.column(0).into();
    let e2: Vec3 = frame.column(1).into();
    let n: Vec3 = frame.column(2).into();
    Mat3::from_columns(&[e1 * c + e2 * s, e2 * c - e1 * s, n])
}

/// Triangle tangent frame `[e1, e2, n]`: normalized first edge, in-plane
/// perpendicular, face normal. `None` when the triangle is collapsed.
pub fn triangle_frame(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Mat3> {
    let edge = b - a;
    let cross = edge.cross(&(c - a));
    let (el, cl) = (edge.norm(), cross.norm());
    let scale = el.max((c - a).norm()).max(f64::MIN_POSITIVE);
    if el <= 1e-12 * scale || cl <= 1e-12 * scale * scale {
        return None;
    }
    let e1 = edge / el;
    let n = cross / cl;
    let e2 = n.cross(&e1);
    Some(Mat3::from_columns(&[e1, e2, n]))
}

/// Pulls a gradient on the frame columns back to the three triangle vertices.
pub fn triangle_frame_backward(a: &Vec3, b: &Vec3, c: &Vec3, g: &Mat3) -> [Vec3; 3] {
    let edge = b - a;
    let other = c - a;
    let cross = edge.cross(&other);
    let e1 = edge.normalize();
    let n = cross.normalize();
    let g1: Vec3 = g.column(0).into();
    let g2: Vec3 = g.column(1).into();
    let g3: Vec3 = g.column(2).into();
    // e2 = n × e1
    let gn = g3 + e1.cross(&g2);
    let ge1 = g1 + g2.cross(&n);
    let gcross = normalize_backward(&cross, &gn);
    let mut gedge = normalize_backward(&edge, &ge1);
    gedge += other.cross(&gcross);
    let gother = gcross.cross(&edge);
    [-gedge - gother, gedge, gother]
}

/// Position of every bound Gaussian: `Σ_k W_k · v_k` over its host triangle.
pub fn realize_bound_positions(asset: &BoundAsset) -> Vec<[f64; 3]> {
    realize_positions_with(asset, &asset.mesh.vertices)
}

pub(crate) fn realize_positions_with(asset: &BoundAsset, vertices: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(asset.len());
    for tri in &asset.mesh.triangles {
        let v = tri.map(|k| vertices[k as usize]);
        for w in &asset.weights {
            out.push(blend(w, &v));
        }
    }
    out
}

/// Per-Gaussian colors: the barycentric blend of the mesh vertex colors when
/// `from_mesh`, otherwise the directly optimized colors.
pub fn realize_bound_colors(asset: &BoundAsset, from_mesh: bool) -> Vec<[f64; 3]> {
    if !from_mesh {
        return asset.colors.clone();
    }
    let mut out = Vec::with_capacity(asset.len());
    for tri in &asset.mesh.triangles {
        let c = tri.map(|k| asset.mesh.colors[k as usize]);
        for w in &asset.weights {
            out.push(blend(w, &c));
        }
    }
    out
}

#[inline]
fn blend(w: &[f64; 3], v: &[[f64; 3]; 3]) -> [f64; 3] {
    std::array::from_fn(|d| w[0] * v[0][d] + w[1] * v[1][d] + w[2] * v[2][d])
}
