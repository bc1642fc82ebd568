//! Projection of Gaussians and surfels into screen fragments, and the
//! chain rule from fragment gradients back to each representation's
//! parameters.

use nalgebra::{Matrix2, Matrix2x3};

use super::fragment::{Footprint, FragmentGrad, PixelRect, SplatFragment};
use super::{RenderError, RenderOptions, Splattable, LOW_PASS_VARIANCE};
use crate::exec::map_range;
use crate::math::{
    normalize2, normalize2_backward, quat_to_matrix, quat_to_matrix_backward, v3, Mat3, Vec3,
};
use crate::scene::{
    triangle_frame, triangle_frame_backward, BoundAsset, Camera, GaussianCloud3D, SurfelCloud2D,
};

/// A 3D Gaussian in world units, the common form every representation is
/// reduced to before projection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WorldGaussian {
    pub mean: Vec3,
    pub rot: Mat3,
    pub scale: Vec3,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Gradient with respect to a [`WorldGaussian`]; `color` is with respect to
/// the clamped render color.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WorldGrad {
    pub mean: Vec3,
    pub rot: Mat3,
    pub scale: Vec3,
    pub color: [f64; 3],
    pub opacity: f64,
}

#[inline]
fn clamp_color(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Gradient through the render-time clamp: zero outside [0, 1].
#[inline]
fn clamp_color_backward(raw: [f64; 3], g: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|k| {
        if (0.0..=1.0).contains(&raw[k]) {
            g[k]
        } else {
            0.0
        }
    })
}

fn jacobian(camera: &Camera, t: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz * iz,
    )
}

pub(crate) fn project_gaussian(
    g: &WorldGaussian,
    source: usize,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<Option<SplatFragment>, RenderError> {
    let t = camera.to_camera(&g.mean);
    if !t.iter().all(|v| v.is_finite()) {
        return Err(RenderError::NonFiniteFragment { index: source });
    }
    if t.z <= opts.near {
        return Ok(None);
    }
    let m = g.rot * Mat3::from_diagonal(&g.scale);
    let sigma = m * m.transpose();
    let tm = jacobian(camera, &t) * camera.rotation;
    let cov2: Matrix2<f64> = tm * sigma * tm.transpose() + Matrix2::identity() * LOW_PASS_VARIANCE;
    let (a, b, c) = (cov2[(0, 0)], cov2[(0, 1)], cov2[(1, 1)]);
    let det = a * c - b * b;
    let mean = camera.project_camera(&t);
    let frag_ok = det > 0.0 && det.is_finite() && mean.iter().all(|v| v.is_finite());
    if !frag_ok {
        return Err(RenderError::NonFiniteFragment { index: source });
    }
    let k = opts.extent_sigma;
    let (hx, hy) = (k * a.sqrt(), k * c.sqrt());
    let Some(rect) = PixelRect::covering(
        [mean[0] - hx, mean[1] - hy],
        [mean[0] + hx, mean[1] + hy],
        camera.width,
        camera.height,
    ) else {
        return Ok(None);
    };
    Ok(Some(SplatFragment {
        source,
        mean,
        depth: t.z,
        color: clamp_color(g.color),
        opacity: g.opacity,
        footprint: Footprint::Ellipse {
            cov: [a, b, c],
            conic: [c / det, -b / det, a / det],
        },
        rect,
    }))
}

pub(crate) fn project_gaussian_backward(
    g: &WorldGaussian,
    frag: &SplatFragment,
    grad: &FragmentGrad,
    camera: &Camera,
) -> WorldGrad {
    let Footprint::Ellipse { conic, .. } = frag.footprint else {
        unreachable!("ellipse fragment expected");
    };
    let t = camera.to_camera(&g.mean);
    let m = g.rot * Mat3::from_diagonal(&g.scale);
    let sigma = m * m.transpose();
    let j = jacobian(camera, &t);
    let tm = j * camera.rotation;

    // dL/dΣ2 = -A·G_A·A for the conic A = Σ2⁻¹.
    let amat = Matrix2::new(conic[0], conic[1], conic[1], conic[2]);
    let ga = Matrix2::new(
        grad.conic[0],
        0.5 * grad.conic[1],
        0.5 * grad.conic[1],
        grad.conic[2],
    );
    let g_cov2 = -(amat * ga * amat);
    let g_sigma: Mat3 = tm.transpose() * g_cov2 * tm;
    let g_tm: Matrix2x3<f64> = 2.0 * g_cov2 * tm * sigma;
    let g_j: Matrix2x3<f64> = g_tm * camera.rotation.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_t = Vec3::new(
        grad.mean[0] * fx * iz,
        grad.mean[1] * fy * iz,
        -grad.mean[0] * fx * t.x * iz2 - grad.mean[1] * fy * t.y * iz2,
    );
    g_t.x += -g_j[(0, 2)] * fx * iz2;
    g_t.y += -g_j[(1, 2)] * fy * iz2;
    g_t.z += -g_j[(0, 0)] * fx * iz2 - g_j[(1, 1)] * fy * iz2
        + g_j[(0, 2)] * 2.0 * fx * t.x * iz3
        + g_j[(1, 2)] * 2.0 * fy * t.y * iz3;
    let g_mean = camera.rotation.transpose() * g_t;

    let g_m = 2.0 * g_sigma * m;
    let mut g_rot = Mat3::zeros();
    let mut g_scale = Vec3::zeros();
    for col in 0..3 {
        for row in 0..3 {
            g_rot[(row, col)] = g_m[(row, col)] * g.scale[col];
            g_scale[col] += g_m[(row, col)] * g.rot[(row, col)];
        }
    }
    WorldGrad {
        mean: g_mean,
        rot: g_rot,
        scale: g_scale,
        color: grad.color,
        opacity: grad.opacity,
    }
}

fn check_grad(group: &'static str, index: usize, values: &[f64]) -> Result<(), RenderError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RenderError::NonFiniteGradient { group, index })
    }
}

/// Gradients with respect to every parameter of a [`GaussianCloud3D`], in
/// the same raw (log / logit / unnormalized) units the cloud stores.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGradients {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
}

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            colors: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
        }
    }
}

fn cloud_world(cloud: &GaussianCloud3D, i: usize) -> WorldGaussian {
    WorldGaussian {
        mean: v3(cloud.positions[i]),
        rot: quat_to_matrix(cloud.rotations[i]),
        scale: v3(cloud.scale(i)),
        color: cloud.colors[i],
        opacity: cloud.opacity(i),
    }
}

impl Splattable for GaussianCloud3D {
    type Gradients = CloudGradients;

    fn project(
        &self,
        camera: &Camera,
        opts: &RenderOptions,
    ) -> Result<Vec<SplatFragment>, RenderError> {
        self.validate()?;
        let frags = map_range(opts.execution, self.len(), |i| {
            project_gaussian(&cloud_world(self, i), i, camera, opts)
        });
        frags.into_iter().filter_map(Result::transpose).collect()
    }

    fn backward(
        &self,
        camera: &Camera,
        fragments: &[SplatFragment],
        grads: &[FragmentGrad],
        _opts: &RenderOptions,
    ) -> Result<CloudGradients, RenderError> {
        let mut out = CloudGradients::zeros(self.len());
        for (f, g) in fragments.iter().zip(grads) {
            let i = f.source;
            let world = cloud_world(self, i);
            let wg = project_gaussian_backward(&world, f, g, camera);
            out.positions[i] = [wg.mean.x, wg.mean.y, wg.mean.z];
            out.colors[i] = clamp_color_backward(self.colors[i], wg.color);
            let o = world.opacity;
            out.opacity_logits[i] = wg.opacity * o * (1.0 - o);
            out.log_scales[i] = std::array::from_fn(|k| wg.scale[k] * world.scale[k]);
            out.rotations[i] = quat_to_matrix_backward(self.rotations[i], &wg.rot);
            check_grad("positions", i, &out.positions[i])?;
            check_grad("colors", i, &out.colors[i])?;
            check_grad("opacities", i, &[out.opacity_logits[i]])?;
            check_grad("scales", i, &out.log_scales[i])?;
            check_grad("rotations", i, &out.rotations[i])?;
        }
        Ok(out)
    }
}

/// Gradients with respect to every parameter of a [`SurfelCloud2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurfelGradients {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 2]>,
    pub rotations: Vec<[f64; 4]>,
}

impl SurfelGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            colors: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            log_scales: vec![[0.0; 2]; n],
            rotations: vec![[0.0; 4]; n],
        }
    }
}

fn project_surfel(
    s: &SurfelCloud2D,
    i: usize,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<Option<SplatFragment>, RenderError> {
    let center = v3(s.positions[i]);
    let frame = s.frame(i);
    let tu: Vec3 = frame.column(0).into();
    let tv: Vec3 = frame.column(1).into();
    let normal: Vec3 = frame.column(2).into();
    let scale = s.scale(i);
    let t = camera.to_camera(&center);
    if !t.iter().all(|v| v.is_finite()) {
        return Err(RenderError::NonFiniteFragment { index: i });
    }
    if t.z <= opts.near {
        return Ok(None);
    }
    let k = opts.extent_sigma;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut behind = false;
    for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let corner = center + tu * (su * k * scale[0]) + tv * (sv * k * scale[1]);
        let tc = camera.to_camera(&corner);
        if tc.z <= opts.near {
            behind = true;
            break;
        }
        let p = camera.project_camera(&tc);
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let rect = if behind {
        Some(PixelRect::full(camera.width, camera.height))
    } else {
        PixelRect::covering(lo, hi, camera.width, camera.height)
    };
    let Some(rect) = rect else {
        return Ok(None);
    };
    Ok(Some(SplatFragment {
        source: i,
        mean: camera.project_camera(&t),
        depth: t.z,
        color: clamp_color(s.colors[i]),
        opacity: s.opacity(i),
        footprint: Footprint::Surfel {
            center,
            tu,
            tv,
            normal,
            scale,
        },
        rect,
    }))
}

impl Splattable for SurfelCloud2D {
    type Gradients = SurfelGradients;

    fn project(
        &self,
        camera: &Camera,
        opts: &RenderOptions,
    ) -> Result<Vec<SplatFragment>, RenderError> {
        self.validate()?;
        let frags = map_range(opts.execution, self.len(), |i| {
            project_surfel(self, i, camera, opts)
        });
        frags.into_iter().filter_map(Result::transpose).collect()
    }

    fn backward(
        &self,
        _camera: &Camera,
        fragments: &[SplatFragment],
        grads: &[FragmentGrad],
        _opts: &RenderOptions,
    ) -> Result<SurfelGradients, RenderError> {
        let mut out = SurfelGradients::zeros(self.len());
        for (f, g) in fragments.iter().zip(grads) {
            let i = f.source;
            out.positions[i] = g.center;
            out.colors[i] = clamp_color_backward(self.colors[i], g.color);
            let o = self.opacity(i);
            out.opacity_logits[i] = g.opacity * o * (1.0 - o);
            out.log_scales[i] = g.log_scale;
            let g_frame = Mat3::from_columns(&[v3(g.tu), v3(g.tv), v3(g.normal)]);
            out.rotations[i] = quat_to_matrix_backward(self.rotations[i], &g_frame);
            check_grad("positions", i, &out.positions[i])?;
            check_grad("colors", i, &out.colors[i])?;
            check_grad("opacities", i, &[out.opacity_logits[i]])?;
            check_grad("scales", i, &out.log_scales[i])?;
            check_grad("rotations", i, &out.rotations[i])?;
        }
        Ok(out)
    }
}

/// Gradients with respect to the learnable groups of a [`BoundAsset`]:
/// mesh vertices, per-Gaussian colors, opacities, in-plane rotations and
/// 3D scales. The barycentric template has no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGradients {
    pub vertices: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub rotations: Vec<[f64; 2]>,
    pub log_scales: Vec<[f64; 3]>,
}

impl BoundGradients {
    pub fn zeros(vertices: usize, gaussians: usize) -> Self {
        Self {
            vertices: vec![[0.0; 3]; vertices],
            colors: vec![[0.0; 3]; gaussians],
            opacity_logits: vec![0.0; gaussians],
            rotations: vec![[0.0; 2]; gaussians],
            log_scales: vec![[0.0; 3]; gaussians],
        }
    }
}

/// World Gaussians of a bound asset; `None` for Gaussians on collapsed triangles.
pub(crate) fn bound_world(asset: &BoundAsset) -> Vec<Option<WorldGaussian>> {
    let n = asset.gaussians_per_triangle();
    let mut out = Vec::with_capacity(asset.len());
    for (t, tri) in asset.mesh.triangles.iter().enumerate() {
        let v = tri.map(|k| v3(asset.mesh.vertices[k as usize]));
        let frame = triangle_frame(&v[0], &v[1], &v[2]);
        for (k, w) in asset.weights.iter().enumerate() {
            let i = t * n + k;
            out.push(frame.map(|f| WorldGaussian {
                mean: v[0] * w[0] + v[1] * w[1] + v[2] * w[2],
                rot: crate::scene::compose_in_plane(&f, asset.rotations[i]),
                scale: v3(asset.scale(i)),
                color: asset.colors[i],
                opacity: asset.opacity(i),
            }));
        }
    }
    out
}

impl Splattable for BoundAsset {
    type Gradients = BoundGradients;

    fn project(
        &self,
        camera: &Camera,
        opts: &RenderOptions,
    ) -> Result<Vec<SplatFragment>, RenderError> {
        self.validate()?;
        let world = bound_world(self);
        let frags = map_range(opts.execution, world.len(), |i| match &world[i] {
            Some(g) => project_gaussian(g, i, camera, opts),
            None => Ok(None),
        });
        frags.into_iter().filter_map(Result::transpose).collect()
    }

    fn backward(
        &self,
        camera: &Camera,
        fragments: &[SplatFragment],
        grads: &[FragmentGrad],
        _opts: &RenderOptions,
    ) -> Result<BoundGradients, RenderError> {
        let n = self.gaussians_per_triangle();
        let mut out = BoundGradients::zeros(self.mesh.vertices.len(), self.len());
        let world = bound_world(self);
        for (f, g) in fragments.iter().zip(grads) {
            let i = f.source;
            let wgs = world[i].expect("projected Gaussians have a frame");
            let wg = project_gaussian_backward(&wgs, f, g, camera);
            let t = i / n;
            let tri = self.mesh.triangles[t];
            let v = tri.map(|k| v3(self.mesh.vertices[k as usize]));
            let w = self.weights[i % n];

            // Position: constant barycentric Jacobian.
            let mut g_vert = [wg.mean * w[0], wg.mean * w[1], wg.mean * w[2]];

            // Rotation: R = F·Rz(θ).
            let frame = triangle_frame(&v[0], &v[1], &v[2]).expect("frame exists");
            let [c, s] = normalize2(self.rotations[i]);
            let e1: Vec3 = frame.column(0).into();
            let e2: Vec3 = frame.column(1).into();
            let g0: Vec3 = wg.rot.column(0).into();
            let g1: Vec3 = wg.rot.column(1).into();
            let g2: Vec3 = wg.rot.column(2).into();
            let g_frame = Mat3::from_columns(&[g0 * c - g1 * s, g0 * s + g1 * c, g2]);
            let g_cs = [g0.dot(&e1) + g1.dot(&e2), g0.dot(&e2) - g1.dot(&e1)];
            out.rotations[i] = normalize2_backward(self.rotations[i], g_cs);
            let gf = triangle_frame_backward(&v[0], &v[1], &v[2], &g_frame);
            for k in 0..3 {
                g_vert[k] += gf[k];
                for d in 0..3 {
                    out.vertices[tri[k] as usize][d] += g_vert[k][d];
                }
            }

            out.colors[i] = clamp_color_backward(self.colors[i], wg.color);
            let o = wgs.opacity;
            out.opacity_logits[i] = wg.opacity * o * (1.0 - o);
            out.log_scales[i] = std::array::from_fn(|k| wg.scale[k] * wgs.scale[k]);
            check_grad("colors", i, &out.colors[i])?;
            check_grad("opacities", i, &[out.opacity_logits[i]])?;
            check_grad("rotations", i, &out.rotations[i])?;
            check_grad("scales", i, &out.log_scales[i])?;
        }
        for (i, v) in out.vertices.iter().enumerate() {
            check_grad("vertices", i, v)?;
        }
        Ok(out)
    }
}
