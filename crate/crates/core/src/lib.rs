//! Differentiable Gaussian splatting for mesh-bound 3D assets.
//!
//! The crate covers a two-stage asset pipeline:
//!
//! 1. a surfel (flattened Gaussian) cloud is initialized on a coarse mesh,
//!    optimized under image-space guidance and exported as a colored mesh
//!    ([`extract`]);
//! 2. 3D Gaussians are bound to that mesh through frozen barycentric weights
//!    ([`bind`]) and optimized by moving mesh vertices together with the
//!    per-Gaussian appearance ([`optimize`]).
//!
//! Rendering ([`raster`]) is a tile-based CPU splatting rasterizer with an
//! analytic backward pass for all three representations. Guidance
//! ([`guidance`]) turns a rendered image into a per-pixel update direction,
//! either from a diffusion score source (SDS / ISM) or from a photometric
//! reference.

pub mod bind;
pub mod exec;
pub mod extract;
pub mod guidance;
pub mod image;
pub mod math;
pub mod optimize;
pub mod primitives;
pub mod raster;
pub mod scene;
pub mod spatial;

pub use image::Image;
pub use raster::{RenderOptions, RenderTarget};
pub use scene::{
    BoundAsset, Camera, CameraPose, ColoredMesh, GaussianCloud3D, SceneError, SurfelCloud2D,
};
