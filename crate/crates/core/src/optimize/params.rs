use crate::bind::clamp_scales;
use crate::raster::{BoundGradients, CloudGradients, Splattable, SurfelGradients};
use crate::scene::{BoundAsset, GaussianCloud3D, SurfelCloud2D};

use super::{AssetState, LearningRates};

/// Opacity logits are kept inside `±OPACITY_LOGIT_BOUND`.
pub const OPACITY_LOGIT_BOUND: f64 = 9.0;

/// Bounds applied after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Largest world-space scale for free Gaussians and surfels.
    pub max_scale: f64,
    /// Bound Gaussians: scale limit as a multiple of the host edge length.
    pub edge_factor: f64,
}

/// A representation the stage drivers can optimize: named flat parameter
/// groups in a fixed order plus the matching flattened gradients.
pub trait Trainable: Splattable + Clone + Send + Sync
where
    Self::Gradients: Send,
{
    const GROUPS: &'static [&'static str];
    /// Row width of each group.
    const COLS: &'static [usize];

    fn groups_mut(&mut self) -> Vec<&mut [f64]>;
    fn groups(&self) -> Vec<&[f64]>;
    fn flatten_gradients(g: Self::Gradients) -> Vec<Vec<f64>>;
    fn learning_rates(lr: &LearningRates) -> Vec<f64>;
    fn project_parameters(&mut self, p: &Projection);
    fn to_state(&self) -> AssetState;
    fn from_state(state: AssetState) -> Option<Self>;

    fn group_sizes(&self) -> Vec<usize> {
        self.groups().iter().map(|g| g.len()).collect()
    }
}

fn clamp_common(colors: &mut [[f64; 3]], logits: &mut [f64]) {
    for c in colors.iter_mut().flatten() {
        *c = c.clamp(0.0, 1.0);
    }
    for o in logits {
        *o = o.clamp(-OPACITY_LOGIT_BOUND, OPACITY_LOGIT_BOUND);
    }
}

fn clamp_log_scales<const K: usize>(scales: &mut [[f64; K]], max_scale: f64) {
    let hi = max_scale.ln();
    for s in scales.iter_mut().flatten() {
        *s = s.min(hi);
    }
}

impl Trainable for SurfelCloud2D {
    const GROUPS: &'static [&'static str] =
        &["positions", "colors", "opacities", "scales", "rotations"];
    const COLS: &'static [usize] = &[3, 3, 1, 2, 4];

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.positions.as_flattened_mut(),
            self.colors.as_flattened_mut(),
            &mut self.opacity_logits,
            self.log_scales.as_flattened_mut(),
            self.rotations.as_flattened_mut(),
        ]
    }

    fn groups(&self) -> Vec<&[f64]> {
        vec![
            self.positions.as_flattened(),
            self.colors.as_flattened(),
            &self.opacity_logits,
            self.log_scales.as_flattened(),
            self.rotations.as_flattened(),
        ]
    }

    fn flatten_gradients(g: SurfelGradients) -> Vec<Vec<f64>> {
        vec![
            g.positions.into_flattened(),
            g.colors.into_flattened(),
            g.opacity_logits,
            g.log_scales.into_flattened(),
            g.rotations.into_flattened(),
        ]
    }

    fn learning_rates(lr: &LearningRates) -> Vec<f64> {
        vec![
            lr.surfel_position,
            lr.color,
            lr.opacity,
            lr.scale,
            lr.rotation,
        ]
    }

    fn to_state(&self) -> AssetState {
        AssetState::Surfels(self.clone())
    }

    fn from_state(state: AssetState) -> Option<Self> {
        match state {
            AssetState::Surfels(a) => Some(a),
            _ => None,
        }
    }

    fn project_parameters(&mut self, p: &Projection) {
        self.renormalize();
        clamp_common(&mut self.colors, &mut self.opacity_logits);
        clamp_log_scales(&mut self.log_scales, p.max_scale);
    }
}

impl Trainable for GaussianCloud3D {
    const GROUPS: &'static [&'static str] =
        &["positions", "colors", "opacities", "scales", "rotations"];
    const COLS: &'static [usize] = &[3, 3, 1, 3, 4];

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.positions.as_flattened_mut(),
            self.colors.as_flattened_mut(),
            &mut self.opacity_logits,
            self.log_scales.as_flattened_mut(),
            self.rotations.as_flattened_mut(),
        ]
    }

    fn groups(&self) -> Vec<&[f64]> {
        vec![
            self.positions.as_flattened(),
            self.colors.as_flattened(),
            &self.opacity_logits,
            self.log_scales.as_flattened(),
            self.rotations.as_flattened(),
        ]
    }

    fn flatten_gradients(g: CloudGradients) -> Vec<Vec<f64>> {
        vec![
            g.positions.into_flattened(),
            g.colors.into_flattened(),
            g.opacity_logits,
            g.log_scales.into_flattened(),
            g.rotations.into_flattened(),
        ]
    }

    /// Free Gaussians move with the bound vertex rate.
    fn learning_rates(lr: &LearningRates) -> Vec<f64> {
        vec![
            lr.vertex_position,
            lr.color,
            lr.opacity,
            lr.scale,
            lr.rotation,
        ]
    }

    fn to_state(&self) -> AssetState {
        AssetState::Free(self.clone())
    }

    fn from_state(state: AssetState) -> Option<Self> {
        match state {
            AssetState::Free(a) => Some(a),
            _ => None,
        }
    }

    fn project_parameters(&mut self, p: &Projection) {
        self.renormalize();
        clamp_common(&mut self.colors, &mut self.opacity_logits);
        clamp_log_scales(&mut self.log_scales, p.max_scale);
    }
}

impl Trainable for BoundAsset {
    const GROUPS: &'static [&'static str] =
        &["vertices", "colors", "opacities", "rotations", "scales"];
    const COLS: &'static [usize] = &[3, 3, 1, 2, 3];

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.mesh.vertices.as_flattened_mut(),
            self.colors.as_flattened_mut(),
            &mut self.opacity_logits,
            self.rotations.as_flattened_mut(),
            self.log_scales.as_flattened_mut(),
        ]
    }

    fn groups(&self) -> Vec<&[f64]> {
        vec![
            self.mesh.vertices.as_flattened(),
            self.colors.as_flattened(),
            &self.opacity_logits,
            self.rotations.as_flattened(),
            self.log_scales.as_flattened(),
        ]
    }

    fn flatten_gradients(g: BoundGradients) -> Vec<Vec<f64>> {
        vec![
            g.vertices.into_flattened(),
            g.colors.into_flattened(),
            g.opacity_logits,
            g.rotations.into_flattened(),
            g.log_scales.into_flattened(),
        ]
    }

    fn learning_rates(lr: &LearningRates) -> Vec<f64> {
        vec![
            lr.vertex_position,
            lr.color,
            lr.opacity,
            lr.rotation,
            lr.scale,
        ]
    }

    fn to_state(&self) -> AssetState {
        AssetState::Bound(self.clone())
    }

    fn from_state(state: AssetState) -> Option<Self> {
        match state {
            AssetState::Bound(a) => Some(a),
            _ => None,
        }
    }

    fn project_parameters(&mut self, p: &Projection) {
        self.renormalize();
        clamp_common(&mut self.colors, &mut self.opacity_logits);
        clamp_scales(self, p.edge_factor);
    }
}
