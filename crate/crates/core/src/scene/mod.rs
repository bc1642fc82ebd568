//! Domain types shared by every stage: free Gaussian clouds, surfel clouds,
//! colored meshes, mesh-bound Gaussian assets, and cameras.

mod bound;
mod camera;
mod gaussian;
mod mesh;
mod surfel;

pub use bound::{
    compose_in_plane, realize_bound_colors, realize_bound_positions, triangle_frame,
    triangle_frame_backward, weight_template, BoundAsset,
};
pub use camera::{Camera, CameraPose};
pub use gaussian::GaussianCloud3D;
pub use mesh::{ColoredMesh, ManifoldReport, DEGENERATE_AREA};
pub use surfel::SurfelCloud2D;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("{field}: expected {expected} entries, found {actual}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite {field} at index {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertices} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        vertices: usize,
    },
    #[error("invalid barycentric weight triple {index}: {weights:?}")]
    InvalidWeights { index: usize, weights: [f64; 3] },
    #[error("unsupported Gaussians-per-triangle count {0} (expected 1, 3 or 6)")]
    UnsupportedClusterSize(usize),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn check_len(
    field: &'static str,
    expected: usize,
    actual: usize,
) -> Result<(), SceneError> {
    if expected != actual {
        return Err(SceneError::LengthMismatch {
            field,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite<const K: usize>(
    field: &'static str,
    values: &[[f64; K]],
) -> Result<(), SceneError> {
    match values.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
        Some(index) => Err(SceneError::NonFinite { field, index }),
        None => Ok(()),
    }
}

pub(crate) fn check_finite_scalar(field: &'static str, values: &[f64]) -> Result<(), SceneError> {
    match values.iter().position(|c| !c.is_finite()) {
        Some(index) => Err(SceneError::NonFinite { field, index }),
        None => Ok(()),
    }
}
