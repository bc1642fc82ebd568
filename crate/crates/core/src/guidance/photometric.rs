use std::sync::Arc;

use rand::RngCore;

use crate::image::Image;
use crate::raster::{render, RenderOptions, Splattable};
use crate::scene::CameraPose;

use super::{photometric_update, Guidance, GuidanceError, GuidanceUpdate, GuidanceView};

/// Ground-truth images on demand.
pub trait ReferenceSource: Send + Sync {
    fn reference(
        &self,
        pose: &CameraPose,
        width: usize,
        height: usize,
    ) -> Result<Image, GuidanceError>;
}

/// Fixed list of posed reference images.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSet {
    pub images: Vec<(CameraPose, Image)>,
}

impl ReferenceSource for ReferenceSet {
    fn reference(
        &self,
        pose: &CameraPose,
        width: usize,
        height: usize,
    ) -> Result<Image, GuidanceError> {
        let key = pose.with_size(width, height);
        self.images
            .iter()
            .find(|(p, _)| p.with_size(width, height) == key)
            .map(|(_, img)| {
                if img.width == width && img.height == height {
                    img.clone()
                } else {
                    img.area_downsample(width, height)
                }
            })
            .ok_or_else(|| GuidanceError::MissingReference(format!("{pose:?}")))
    }
}

/// Renders a ground-truth scene at `render_size` and area-averages down to
/// the requested resolution.
pub struct RenderedReference<S> {
    pub scene: S,
    pub render_size: usize,
    pub options: RenderOptions,
}

impl<S: Splattable + Send + Sync> ReferenceSource for RenderedReference<S> {
    fn reference(
        &self,
        pose: &CameraPose,
        width: usize,
        height: usize,
    ) -> Result<Image, GuidanceError> {
        let cam = pose
            .with_size(self.render_size, self.render_size)
            .camera()
            .map_err(|e| GuidanceError::Reference(e.to_string()))?;
        let out = render(&self.scene, &cam, &self.options)
            .map_err(|e| GuidanceError::Reference(e.to_string()))?;
        if out.color.width == width && out.color.height == height {
            Ok(out.color)
        } else {
            Ok(out.color.area_downsample(width, height))
        }
    }
}

/// Reconstruction guidance: the update pulls the render towards a reference.
#[derive(Clone)]
pub struct PhotometricOracle {
    pub references: Arc<dyn ReferenceSource>,
}

impl PhotometricOracle {
    pub fn new(references: Arc<dyn ReferenceSource>) -> Self {
        Self { references }
    }
}

impl Guidance for PhotometricOracle {
    fn update(
        &self,
        x: &Image,
        view: &GuidanceView,
        _rng: &mut dyn RngCore,
    ) -> Result<GuidanceUpdate, GuidanceError> {
        let r = self.references.reference(&view.pose, x.width, x.height)?;
        photometric_update(x, &r)
    }
}
