//! Tile-based splatting rasterizer with an analytic backward pass.
//!
//! Every representation is projected into [`SplatFragment`]s; the compositor
//! bins them into 16×16 tiles, sorts each tile by center depth, and blends
//! front to back:
//!
//! `C = Σ cᵢ αᵢ Πⱼ<ᵢ (1 − αⱼ) + T·background`, with `αᵢ = oᵢ·G(xᵢ)`.
//!
//! 3D Gaussians use the first-order projected screen covariance plus a
//! 0.3 px² low-pass floor. Surfels are evaluated exactly at the
//! intersection of the pixel ray with their tangent plane and sorted per
//! pixel by that intersection depth.

mod composite;
mod fragment;
mod project;
mod sort;

pub use composite::{composite, composite_backward, TileBins};
pub use fragment::{Footprint, FragmentGrad, PixelRect, SplatFragment};
pub use project::{BoundGradients, CloudGradients, SurfelGradients};
pub use sort::radix_sort;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::image::Image;
use crate::scene::{Camera, SceneError};

/// Isotropic variance (px²) added to every projected 3D covariance.
pub const LOW_PASS_VARIANCE: f64 = 0.3;
/// Per-fragment alpha ceiling.
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("non-finite fragment data for source index {index}")]
    NonFiniteFragment { index: usize },
    #[error("non-finite gradient in group `{group}` at index {index}")]
    NonFiniteGradient { group: &'static str, index: usize },
    #[error("gradient image is {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Fragments only touch pixels within this many standard deviations
    /// (3.0 holds ~99% of a 2D Gaussian's mass).
    pub extent_sigma: f64,
    pub near: f64,
    pub background: [f64; 3],
    pub execution: Execution,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            extent_sigma: 3.0,
            near: 0.01,
            background: [0.0; 3],
            execution: Execution::Parallel,
        }
    }
}

/// Output of one render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub color: Image,
    /// `1 − T` per pixel.
    pub alpha: Vec<f64>,
    /// Alpha-weighted fragment depth (center depth for 3D Gaussians,
    /// intersection depth for surfels), not normalized by alpha.
    pub depth: Vec<f64>,
    pub background: [f64; 3],
}

/// Anything the rasterizer can draw and differentiate.
pub trait Splattable {
    type Gradients;

    /// Fragments for every primitive in front of the near plane whose extent
    /// overlaps the image. May be empty.
    fn project(
        &self,
        camera: &Camera,
        opts: &RenderOptions,
    ) -> Result<Vec<SplatFragment>, RenderError>;

    /// Chains per-fragment gradients into the representation's parameters.
    fn backward(
        &self,
        camera: &Camera,
        fragments: &[SplatFragment],
        grads: &[FragmentGrad],
        opts: &RenderOptions,
    ) -> Result<Self::Gradients, RenderError>;
}

pub fn render<S: Splattable>(
    scene: &S,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<RenderTarget, RenderError> {
    let frags = scene.project(camera, opts)?;
    composite(&frags, camera, opts)
}

/// Exact gradients of `⟨d_color, C⟩ + ⟨d_alpha, A⟩` with respect to the
/// scene parameters. The forward pass is recomputed.
pub fn render_backward<S: Splattable>(
    scene: &S,
    camera: &Camera,
    opts: &RenderOptions,
    d_color: &Image,
    d_alpha: Option<&[f64]>,
) -> Result<S::Gradients, RenderError> {
    let frags = scene.project(camera, opts)?;
    let grads = composite_backward(&frags, camera, opts, d_color, d_alpha)?;
    scene.backward(camera, &frags, &grads, opts)
}
