use super::{check_finite, check_finite_scalar, check_len, SceneError, SurfelCloud2D};
use crate::math::{logit, matrix_to_quat, normalize4, quat_to_matrix, sigmoid, Mat3};

/// A free set of anisotropic 3D Gaussians.
///
/// Scales are stored as natural logs and opacities as logits so optimizers
/// can work on unconstrained values; colors are raw RGB and only clamped when
/// rendered.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud3D {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 3]>,
    /// Quaternions `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
}

impl GaussianCloud3D {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Appends a Gaussian given in natural units (opacity in (0,1), positive scales).
    pub fn push(
        &mut self,
        position: [f64; 3],
        color: [f64; 3],
        opacity: f64,
        scale: [f64; 3],
        rotation: [f64; 4],
    ) {
        self.positions.push(position);
        self.colors.push(color);
        self.opacity_logits.push(logit(opacity));
        self.log_scales.push(scale.map(f64::ln));
        self.rotations.push(normalize4(rotation));
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    pub fn rotation_matrix(&self, i: usize) -> Mat3 {
        quat_to_matrix(self.rotations[i])
    }

    /// World-space covariance `R·diag(s²)·Rᵀ`.
    pub fn covariance(&self, i: usize) -> Mat3 {
        let r = self.rotation_matrix(i);
        let s = self.scale(i);
        let m = r * Mat3::from_diagonal(&nalgebra::Vector3::new(s[0], s[1], s[2]));
        m * m.transpose()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.len();
        check_len("colors", n, self.colors.len())?;
        check_len("opacities", n, self.opacity_logits.len())?;
        check_len("scales", n, self.log_scales.len())?;
        check_len("rotations", n, self.rotations.len())?;
        check_finite("positions", &self.positions)?;
        check_finite("colors", &self.colors)?;
        check_finite_scalar("opacities", &self.opacity_logits)?;
        check_finite("scales", &self.log_scales)?;
        check_finite("rotations", &self.rotations)?;
        if let Some(index) = self
            .rotations
            .iter()
            .position(|q| q.iter().map(|c| c * c).sum::<f64>() == 0.0)
        {
            return Err(SceneError::NonFinite {
                field: "rotations (zero quaternion)",
                index,
            });
        }
        Ok(())
    }

    /// Renormalizes every quaternion to unit length.
    pub fn renormalize(&mut self) {
        for q in &mut self.rotations {
            *q = normalize4(*q);
        }
    }

    /// Flattens Gaussian `i` into a surfel by dropping one scale axis, which
    /// becomes the surfel normal. `axis = None` drops the smallest axis.
    pub fn flatten(&self, i: usize, axis: Option<usize>) -> Result<SurfelCloud2D, SceneError> {
        let s = self.scale(i);
        let q = self.rotations[i];
        let checks = [self.positions[i].as_slice(), &self.colors[i], &s, &q];
        if checks.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite())
            || !self.opacity_logits[i].is_finite()
        {
            return Err(SceneError::NonFinite {
                field: "gaussian",
                index: i,
            });
        }
        let drop = match axis {
            Some(a) if a < 3 => a,
            Some(a) => return Err(SceneError::Invalid(format!("axis {a} out of range"))),
            None => {
                let mut k = 0;
                for j in 1..3 {
                    if s[j] < s[k] {
                        k = j;
                    }
                }
                k
            }
        };
        let (a, b) = ((drop + 1) % 3, (drop + 2) % 3);
        let r = self.rotation_matrix(i);
        let frame = Mat3::from_columns(&[
            r.column(a).into_owned(),
            r.column(b).into_owned(),
            r.column(drop).into_owned(),
        ]);
        let mut out = SurfelCloud2D::default();
        out.positions.push(self.positions[i]);
        out.colors.push(self.colors[i]);
        out.opacity_logits.push(self.opacity_logits[i]);
        out.log_scales
            .push([self.log_scales[i][a], self.log_scales[i][b]]);
        out.rotations.push(matrix_to_quat(&frame));
        Ok(out)
    }

    pub fn extend(&mut self, other: &GaussianCloud3D) {
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.rotations.extend_from_slice(&other.rotations);
    }
}
