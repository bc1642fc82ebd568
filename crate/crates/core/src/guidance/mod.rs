//! Image-space update directions from score sources.
//!
//! A [`ScoreProvider`] predicts the noise in a noisy image; [`sds_update`]
//! and [`ism_update`] turn those predictions into per-pixel gradients. The
//! [`Guidance`] trait is what the optimizer consumes: it samples noise
//! levels, calls a provider (or compares against a reference) and returns a
//! [`GuidanceUpdate`] the caller pulls back through the renderer.

mod ops;
mod photometric;
pub mod remote;
mod schedule;
mod toy;

use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::scene::CameraPose;

pub use ops::{
    add_noise, cfg_combine, ddim_denoise, ddim_invert, ddim_step, ism_update, photometric_update,
    sds_update,
};
pub use photometric::{PhotometricOracle, ReferenceSet, ReferenceSource, RenderedReference};
pub use remote::RemoteProvider;
pub use schedule::{BetaSchedule, NoiseSchedule};
pub use toy::ToyDiffusion;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("noise level {t} outside 0..={max}")]
    LevelOutOfRange { t: usize, max: usize },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("image shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("no reference image for camera {0}")]
    MissingReference(String),
    #[error("reference render failed: {0}")]
    Reference(String),
    #[error("protocol error at byte {offset}: {message}")]
    Protocol { offset: usize, message: String },
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("provider i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Source of noise predictions `ε̂(x_t; y, t)`. An empty prompt is the
/// unconditional prediction.
pub trait ScoreProvider: Send + Sync {
    fn predict_noise(&self, x_t: &Image, t: usize, prompt: &str) -> Result<Image, GuidanceError>;

    /// Classifier-free guided prediction.
    fn predict_guided(
        &self,
        x_t: &Image,
        t: usize,
        prompt: &str,
        cfg: f64,
    ) -> Result<Image, GuidanceError> {
        let cond = self.predict_noise(x_t, t, prompt)?;
        if cfg == 1.0 {
            return Ok(cond);
        }
        let uncond = self.predict_noise(x_t, t, "")?;
        cfg_combine(&cond, &uncond, cfg)
    }
}

impl<P: ScoreProvider + ?Sized> ScoreProvider for Arc<P> {
    fn predict_noise(&self, x_t: &Image, t: usize, prompt: &str) -> Result<Image, GuidanceError> {
        (**self).predict_noise(x_t, t, prompt)
    }

    fn predict_guided(
        &self,
        x_t: &Image,
        t: usize,
        prompt: &str,
        cfg: f64,
    ) -> Result<Image, GuidanceError> {
        (**self).predict_guided(x_t, t, prompt, cfg)
    }
}

/// Per-pixel gradient `dL/dx` plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceUpdate {
    pub gradient: Image,
    pub mean_abs: f64,
    /// Scalar loss proxy: `½·mean(update²)`.
    pub loss: f64,
    pub t: Option<usize>,
    pub s: Option<usize>,
}

impl GuidanceUpdate {
    pub fn new(gradient: Image, t: Option<usize>, s: Option<usize>) -> Self {
        let n = gradient.data.len().max(1) as f64;
        let loss = 0.5 * gradient.data.iter().map(|d| d * d).sum::<f64>() / n;
        Self {
            mean_abs: gradient.mean_abs(),
            gradient,
            loss,
            t,
            s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unit,
    OneMinusAlphaBar,
}

impl Weighting {
    pub fn weight(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            Weighting::Unit => 1.0,
            Weighting::OneMinusAlphaBar => 1.0 - schedule.alpha_bar(t),
        }
    }
}

/// What the optimizer knows about the view being guided.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceView {
    pub pose: CameraPose,
    pub iteration: usize,
    pub total_iterations: usize,
}

/// Turns a rendered image into an update direction.
pub trait Guidance: Send + Sync {
    fn update(
        &self,
        x: &Image,
        view: &GuidanceView,
        rng: &mut dyn RngCore,
    ) -> Result<GuidanceUpdate, GuidanceError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreMode {
    Sds,
    Ism { delta: usize, strides: usize },
}

/// Score-distillation settings shared by SDS and ISM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSettings {
    pub prompt: String,
    pub cfg: f64,
    /// Noise-level range as fractions of `T`.
    pub t_range: [f64; 2],
    pub weighting: Weighting,
    /// Shrink the upper end of `t_range` linearly towards the lower end over
    /// the run.
    pub anneal: bool,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            cfg: 7.5,
            t_range: [0.02, 0.5],
            weighting: Weighting::Unit,
            anneal: false,
        }
    }
}

impl ScoreSettings {
    pub fn sample_level(&self, steps: usize, view: &GuidanceView, rng: &mut dyn RngCore) -> usize {
        let lo = self.t_range[0] * steps as f64;
        let mut hi = self.t_range[1] * steps as f64;
        if self.anneal && view.total_iterations > 0 {
            let f = view.iteration as f64 / view.total_iterations as f64;
            hi = hi - f * (hi - lo);
        }
        let (lo, hi) = (lo.round().max(1.0) as usize, hi.round().max(1.0) as usize);
        if hi <= lo {
            lo.min(steps)
        } else {
            rng.random_range(lo..=hi).min(steps)
        }
    }
}

pub fn gaussian_noise(width: usize, height: usize, rng: &mut dyn RngCore) -> Image {
    let data = (0..width * height * 3)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Image::from_data(width, height, data)
}

/// SDS or ISM driven by a [`ScoreProvider`].
pub struct ScoreGuidance {
    pub provider: Arc<dyn ScoreProvider>,
    pub schedule: NoiseSchedule,
    pub mode: ScoreMode,
    pub settings: ScoreSettings,
}

impl Guidance for ScoreGuidance {
    fn update(
        &self,
        x: &Image,
        view: &GuidanceView,
        rng: &mut dyn RngCore,
    ) -> Result<GuidanceUpdate, GuidanceError> {
        let steps = self.schedule.steps();
        let t = self.settings.sample_level(steps, view, rng);
        let eps = gaussian_noise(x.width, x.height, rng);
        let w = self.settings.weighting.weight(&self.schedule, t);
        let s = &self.settings;
        match self.mode {
            ScoreMode::Sds => sds_update(
                &self.schedule,
                x,
                self.provider.as_ref(),
                &s.prompt,
                s.cfg,
                t,
                &eps,
                w,
            ),
            ScoreMode::Ism { delta, strides } => {
                let t = t.max(delta);
                ism_update(
                    &self.schedule,
                    x,
                    self.provider.as_ref(),
                    &s.prompt,
                    s.cfg,
                    t,
                    delta,
                    strides,
                    &eps,
                    w,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests;
