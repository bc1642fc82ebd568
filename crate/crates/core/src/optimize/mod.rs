//! Adam, camera sampling and the two stage drivers.
//!
//! Every iteration renders a batch of random orbit views, asks the guidance
//! for a per-pixel update at the guidance resolution, chains it back through
//! the area downsample and the rasterizer, averages the batch gradients in
//! view order and takes one Adam step. Randomness is derived from
//! `(seed, iteration, view)`, so a run is reproducible from its config and
//! a checkpoint resumes exactly where the uninterrupted run would be.

mod adam;
mod camera;
mod checkpoint;
mod params;
mod stage;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use camera::{camera_for, held_out_poses, sample_camera, slot_rng, Stream};
pub use checkpoint::{AssetState, Checkpoint, StageKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{Projection, Trainable, OPACITY_LOGIT_BOUND};
pub use stage::{
    init_surfels, mean_psnr, resume_stage1, resume_stage2, run_stage1, run_stage2, LossRecord,
    Observer, Stage1Output, Stage2Asset, Stage2Output,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bind::BindError;
use crate::exec::Execution;
use crate::extract::ExtractError;
use crate::guidance::GuidanceError;
use crate::raster::{RenderError, RenderOptions};
use crate::scene::SceneError;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in group {group} at index {index}")]
    NonFiniteGradient { group: usize, index: usize },
    #[error("guidance failed at iteration {iteration}: {source}")]
    Guidance {
        iteration: usize,
        #[source]
        source: GuidanceError,
    },
    #[error("mean |update| {mean_update:.3e} at iteration {iteration} exceeds the limit")]
    Exploding { iteration: usize, mean_update: f64 },
    #[error("aborted at iteration {}: {source}", checkpoint.iteration)]
    Aborted {
        checkpoint: Box<Checkpoint>,
        #[source]
        source: Box<OptimizeError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl OptimizeError {
    /// The checkpoint saved before an abort, if any.
    pub fn checkpoint(&self) -> Option<&Checkpoint> {
        match self {
            OptimizeError::Aborted { checkpoint, .. } => Some(checkpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub surfel_position: f64,
    pub vertex_position: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            surfel_position: 1.6e-5,
            vertex_position: 1.6e-4,
            color: 5e-3,
            opacity: 5e-2,
            scale: 5e-4,
            rotation: 5e-4,
        }
    }
}

/// Which guidance a stage is configured for. The drivers take the guidance
/// object itself; this only records the choice for config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuidanceKind {
    Sds,
    Ism { delta: usize, strides: usize },
    Photometric,
}

/// Stage 2 ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BindingMode {
    /// Gaussians follow the optimized mesh vertices.
    #[default]
    Bound,
    /// Bound, with the mesh vertices frozen.
    FrozenPositions,
    /// Gaussians are released from the mesh after binding and move freely.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub render_resolution: usize,
    pub guidance_resolution: usize,
    pub radius: [f64; 2],
    /// Degrees.
    pub azimuth: [f64; 2],
    /// Polar angle from +z in degrees.
    pub elevation: [f64; 2],
    /// Horizontal field of view in degrees.
    pub fov: f64,
    pub learning_rates: LearningRates,
    pub guidance: GuidanceKind,
    pub cfg: f64,
    pub t_range: [f64; 2],
    pub anneal: bool,
    pub seed: u64,
    pub mode: BindingMode,
    pub gaussians_per_triangle: usize,
    pub laplacian_weight: f64,
    pub prune_threshold: f64,
    pub prune_interval: usize,
    pub max_update: f64,
    pub max_scale: f64,
    pub init_scale_factor: f64,
    pub init_opacity: f64,
    /// Report a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_interval: usize,
    pub render: RenderOptions,
    /// Whether the views of one batch are rendered concurrently.
    pub batch_execution: Execution,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 4,
            render_resolution: 1024,
            guidance_resolution: 512,
            radius: [3.5, 5.5],
            azimuth: [-180.0, 180.0],
            elevation: [30.0, 150.0],
            fov: 49.1,
            learning_rates: LearningRates::default(),
            guidance: GuidanceKind::Sds,
            cfg: 7.5,
            t_range: [0.02, 0.5],
            anneal: false,
            seed: 0,
            mode: BindingMode::Bound,
            gaussians_per_triangle: 3,
            laplacian_weight: 1e-2,
            prune_threshold: 0.05,
            prune_interval: 500,
            max_update: 1e3,
            max_scale: 1.0,
            init_scale_factor: 0.7,
            init_opacity: 0.5,
            checkpoint_interval: 0,
            render: RenderOptions::default(),
            batch_execution: Execution::Parallel,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), OptimizeError> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(OptimizeError::Config(format!(
            "{name} range {r:?} is empty"
        )));
    }
    Ok(())
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::Config(m));
        check_range("radius", self.radius)?;
        check_range("azimuth", self.azimuth)?;
        check_range("elevation", self.elevation)?;
        check_range("t_range", self.t_range)?;
        if self.radius[0] <= 0.0 {
            return bad(format!("radius must be positive, got {:?}", self.radius));
        }
        if self.elevation[0] <= 0.0 || self.elevation[1] >= 180.0 {
            return bad(format!(
                "elevation {:?} must lie inside (0, 180)",
                self.elevation
            ));
        }
        if self.t_range[0] < 0.0 || self.t_range[1] > 1.0 {
            return bad(format!("t_range {:?} must lie inside [0, 1]", self.t_range));
        }
        for (name, r) in [
            ("render_resolution", self.render_resolution),
            ("guidance_resolution", self.guidance_resolution),
        ] {
            if r < 64 || !r.is_power_of_two() {
                return bad(format!("{name} must be a power of two >= 64, got {r}"));
            }
        }
        if self.guidance_resolution > self.render_resolution {
            return bad(format!(
                "guidance_resolution {} exceeds render_resolution {}",
                self.guidance_resolution, self.render_resolution
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return bad(format!("fov {} must lie inside (0, 180)", self.fov));
        }
        let lr = &self.learning_rates;
        for (name, v) in [
            ("surfel_position", lr.surfel_position),
            ("vertex_position", lr.vertex_position),
            ("color", lr.color),
            ("opacity", lr.opacity),
            ("scale", lr.scale),
            ("rotation", lr.rotation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!(
                    "learning rate {name} must be finite and non-negative, got {v}"
                ));
            }
        }
        if ![1, 3, 6].contains(&self.gaussians_per_triangle) {
            return bad(format!(
                "gaussians_per_triangle must be 1, 3 or 6, got {}",
                self.gaussians_per_triangle
            ));
        }
        if !(self.cfg.is_finite() && self.cfg > 0.0) {
            return bad(format!("cfg must be positive, got {}", self.cfg));
        }
        for (name, v) in [
            ("laplacian_weight", self.laplacian_weight),
            ("prune_threshold", self.prune_threshold),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("max_update", self.max_update),
            ("max_scale", self.max_scale),
            ("init_scale_factor", self.init_scale_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad(format!(
                "init_opacity must lie inside (0, 1), got {}",
                self.init_opacity
            ));
        }
        if let GuidanceKind::Ism { strides, .. } = self.guidance {
            if strides == 0 {
                return bad("ism strides must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Projection bounds applied after each step.
    pub fn projection(&self) -> Projection {
        Projection {
            max_scale: self.max_scale,
            edge_factor: crate::bind::SCALE_CLAMP,
        }
    }
}
