use crate::image::Image;

use super::{GuidanceError, NoiseSchedule, ScoreProvider};

/// Analytic diffusion over images whose pixels are independent Gaussians
/// `N(m, v)` per channel. The noise prediction is the exact posterior mean
/// `E[ε | x_t] = σ_t·(x_t − √ᾱ_t·m) / (ᾱ_t·v + σ_t²)`. Conditional and
/// unconditional requests use different means.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDiffusion {
    pub schedule: NoiseSchedule,
    pub cond_mean: [f64; 3],
    pub uncond_mean: [f64; 3],
    pub variance: f64,
}

impl ToyDiffusion {
    pub fn new(
        schedule: NoiseSchedule,
        cond_mean: [f64; 3],
        uncond_mean: [f64; 3],
        variance: f64,
    ) -> Self {
        Self {
            schedule,
            cond_mean,
            uncond_mean,
            variance,
        }
    }

    pub fn posterior_noise(&self, x_t: f64, t: usize, mean: f64) -> f64 {
        let a = self.schedule.alpha_bar(t);
        let s = self.schedule.sigma(t);
        s * (x_t - a.sqrt() * mean) / (a * self.variance + s * s)
    }
}

impl ScoreProvider for ToyDiffusion {
    fn predict_noise(&self, x_t: &Image, t: usize, prompt: &str) -> Result<Image, GuidanceError> {
        self.schedule.check(t)?;
        let mean = if prompt.is_empty() {
            self.uncond_mean
        } else {
            self.cond_mean
        };
        let data = x_t
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| self.posterior_noise(x, t, mean[i % 3]))
            .collect();
        Ok(Image::from_data(x_t.width, x_t.height, data))
    }
}
