use serde::{Deserialize, Serialize};

use super::OptimizeError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam moments for a list of flat parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One Adam update of every group. Gradients are checked for shape and
    /// finiteness before anything is mutated.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[Vec<f64>],
        lrs: &[f64],
    ) -> Result<(), OptimizeError> {
        let n = self.first.len();
        if params.len() != n || grads.len() != n || lrs.len() != n {
            return Err(OptimizeError::Shape(format!(
                "{} parameter groups, {} gradients, {} learning rates, state has {n}",
                params.len(),
                grads.len(),
                lrs.len()
            )));
        }
        for (g, (p, gr)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[g].len() || gr.len() != p.len() {
                return Err(OptimizeError::Shape(format!(
                    "group {g}: {} parameters, {} gradients, state has {}",
                    p.len(),
                    gr.len(),
                    self.first[g].len()
                )));
            }
            if let Some(index) = gr.iter().position(|v| !v.is_finite()) {
                return Err(OptimizeError::NonFiniteGradient { group: g, index });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (g, p) in params.iter_mut().enumerate() {
            let lr = lrs[g];
            let (m, v) = (&mut self.first[g], &mut self.second[g]);
            for i in 0..p.len() {
                let gi = grads[g][i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Keeps the rows of every group whose `keep` flag is set; `cols` gives
    /// each group's row width.
    pub fn retain_rows(&mut self, keep: &[bool], cols: &[usize]) {
        for (g, &c) in cols.iter().enumerate() {
            for buf in [&mut self.first[g], &mut self.second[g]] {
                let mut out = Vec::with_capacity(buf.len());
                for (r, row) in buf.chunks(c).enumerate() {
                    if keep[r] {
                        out.extend_from_slice(row);
                    }
                }
                *buf = out;
            }
        }
    }
}
