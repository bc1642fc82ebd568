use serde::{Deserialize, Serialize};

use super::GuidanceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    #[default]
    Linear,
    /// Linear in √β, as used by latent diffusion checkpoints.
    ScaledLinear,
}

/// Discrete DDPM noise schedule. Level 0 is the clean image (`ᾱ_0 = 1`);
/// levels `1..=T` follow the cumulative product of `1 − β`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(
        steps: usize,
        beta_start: f64,
        beta_end: f64,
        kind: BetaSchedule,
    ) -> Result<Self, GuidanceError> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(GuidanceError::InvalidSchedule(format!(
                "steps {steps}, beta range [{beta_start}, {beta_end}]"
            )));
        }
        let mut alphas_cumprod = Vec::with_capacity(steps + 1);
        alphas_cumprod.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let f = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            let beta = match kind {
                BetaSchedule::Linear => beta_start + f * (beta_end - beta_start),
                BetaSchedule::ScaledLinear => {
                    let b = beta_start.sqrt() + f * (beta_end.sqrt() - beta_start.sqrt());
                    b * b
                }
            };
            acc *= 1.0 - beta;
            alphas_cumprod.push(acc);
        }
        Ok(Self { alphas_cumprod })
    }

    /// Builds a schedule from an explicit `ᾱ` table for levels `1..=T`.
    pub fn from_alphas_cumprod(table: &[f64]) -> Result<Self, GuidanceError> {
        let mut prev = 1.0;
        for (i, &a) in table.iter().enumerate() {
            if !(a > 0.0 && a <= prev) {
                return Err(GuidanceError::InvalidSchedule(format!(
                    "alpha_bar[{}] = {a}",
                    i + 1
                )));
            }
            prev = a;
        }
        let mut alphas_cumprod = vec![1.0];
        alphas_cumprod.extend_from_slice(table);
        Ok(Self { alphas_cumprod })
    }

    /// Total number of noise levels `T`.
    pub fn steps(&self) -> usize {
        self.alphas_cumprod.len() - 1
    }

    pub fn check(&self, t: usize) -> Result<(), GuidanceError> {
        if t > self.steps() {
            return Err(GuidanceError::LevelOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alphas_cumprod[t]).sqrt()
    }

    pub fn table(&self) -> &[f64] {
        &self.alphas_cumprod[1..]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(1000, 8.5e-4, 1.2e-2, BetaSchedule::Linear).expect("default schedule is valid")
    }
}
