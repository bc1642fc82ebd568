use super::{check_finite, check_finite_scalar, check_len, GaussianCloud3D, SceneError};
use crate::math::{logit, normalize4, quat_to_matrix, sigmoid, Mat3, Vec3};

/// Flattened Gaussians ("surfels"): a 2-axis scale in the tangent plane of
/// the rotation, whose third column is the surface normal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfelCloud2D {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 2]>,
    pub rotations: Vec<[f64; 4]>,
}

impl SurfelCloud2D {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(
        &mut self,
        position: [f64; 3],
        color: [f64; 3],
        opacity: f64,
        scale: [f64; 2],
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

    pub fn scale(&self, i: usize) -> [f64; 2] {
        self.log_scales[i].map(f64::exp)
    }

    /// Tangent frame `[t_u, t_v, n]` as matrix columns.
    pub fn frame(&self, i: usize) -> Mat3 {
        quat_to_matrix(self.rotations[i])
    }

    pub fn normal(&self, i: usize) -> Vec3 {
        self.frame(i).column(2).into()
    }

    /// Rank-2 covariance `R·diag(s_u², s_v², 0)·Rᵀ`. The rasterizer never
    /// inverts it; surfels are evaluated on their tangent plane instead.
    pub fn covariance(&self, i: usize) -> Mat3 {
        let r = self.frame(i);
        let s = self.scale(i);
        r * Mat3::from_diagonal(&Vec3::new(s[0] * s[0], s[1] * s[1], 0.0)) * r.transpose()
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
        Ok(())
    }

    pub fn renormalize(&mut self) {
        for q in &mut self.rotations {
            *q = normalize4(*q);
        }
    }

    /// Keeps only the surfels for which `keep` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }
        filter(&mut self.positions, keep);
        filter(&mut self.colors, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
    }

    /// Inflates every surfel into a thin 3D Gaussian whose normal-axis scale
    /// is `thickness` times the smaller tangent scale.
    pub fn to_gaussians(&self, thickness: f64) -> GaussianCloud3D {
        let mut out = GaussianCloud3D::default();
        for i in 0..self.len() {
            let [lu, lv] = self.log_scales[i];
            out.positions.push(self.positions[i]);
            out.colors.push(self.colors[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.log_scales.push([lu, lv, lu.min(lv) + thickness.ln()]);
            out.rotations.push(self.rotations[i]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn identity_covariance_is_diagonal() {
        let mut s = SurfelCloud2D::default();
        s.push([0.0; 3], [0.5; 3], 0.5, [2.0, 3.0], [1.0, 0.0, 0.0, 0.0]);
        let c = s.covariance(0);
        let expected = Mat3::from_diagonal(&Vec3::new(4.0, 9.0, 0.0));
        assert!((c - expected).abs().max() < 1e-12);
    }

    #[test]
    fn rotated_covariance_keeps_spectrum() {
        let mut s = SurfelCloud2D::default();
        s.push([0.0; 3], [0.5; 3], 0.5, [0.7, 1.9], [0.3, -0.8, 0.4, 0.2]);
        let eig = SymmetricEigen::new(s.covariance(0));
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-9);
        assert!((ev[1] - 0.49).abs() < 1e-9);
        assert!((ev[2] - 1.9f64.powi(2)).abs() < 1e-9);
    }

    #[test]
    fn normal_is_unit() {
        let mut s = SurfelCloud2D::default();
        s.push([0.0; 3], [0.5; 3], 0.5, [1.0, 1.0], [2.0, 1.0, -3.0, 0.5]);
        assert!((s.normal(0).norm() - 1.0).abs() < 1e-12);
    }
}
