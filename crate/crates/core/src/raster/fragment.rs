use crate::math::Vec3;

/// Inclusive-exclusive pixel range `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PixelRect {
    /// Pixels whose centers `(i + 0.5, j + 0.5)` fall inside the continuous
    /// box, clamped to the image. `None` when nothing remains.
    pub fn covering(
        min: [f64; 2],
        max: [f64; 2],
        width: usize,
        height: usize,
    ) -> Option<PixelRect> {
        let lo = |v: f64| (v - 0.5).ceil().max(0.0);
        let hi = |v: f64, n: usize| ((v - 0.5).floor() + 1.0).min(n as f64);
        let (x0, x1) = (lo(min[0]), hi(max[0], width));
        let (y0, y1) = (lo(min[1]), hi(max[1], height));
        if !(x0 < x1 && y0 < y1) {
            return None;
        }
        Some(PixelRect {
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
        })
    }

    pub fn full(width: usize, height: usize) -> PixelRect {
        PixelRect {
            x0: 0,
            x1: width,
            y0: 0,
            y1: height,
        }
    }
}

/// How a fragment's Gaussian falloff is evaluated at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Footprint {
    /// Projected 3D Gaussian: screen covariance `(Σxx, Σxy, Σyy)` including
    /// the low-pass floor, and its inverse (the conic).
    Ellipse { cov: [f64; 3], conic: [f64; 3] },
    /// Surfel evaluated at the ray/tangent-plane intersection.
    Surfel {
        center: Vec3,
        tu: Vec3,
        tv: Vec3,
        normal: Vec3,
        scale: [f64; 2],
    },
}

/// One projected primitive, ready for compositing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatFragment {
    /// Index of the primitive in its source cloud or asset.
    pub source: usize,
    /// Screen-space center in pixels.
    pub mean: [f64; 2],
    /// Camera-space depth of the center.
    pub depth: f64,
    /// Render color (clamped to [0, 1]).
    pub color: [f64; 3],
    pub opacity: f64,
    pub footprint: Footprint,
    pub rect: PixelRect,
}

impl SplatFragment {
    pub(crate) fn is_finite(&self) -> bool {
        let base = self.mean.iter().chain(&self.color).all(|v| v.is_finite())
            && self.depth.is_finite()
            && self.opacity.is_finite();
        base && match &self.footprint {
            Footprint::Ellipse { cov, conic } => cov.iter().chain(conic).all(|v| v.is_finite()),
            Footprint::Surfel {
                center,
                tu,
                tv,
                normal,
                scale,
            } => {
                center
                    .iter()
                    .chain(tu.iter())
                    .chain(tv.iter())
                    .chain(normal.iter())
                    .all(|v| v.is_finite())
                    && scale.iter().all(|v| v.is_finite() && *v > 0.0)
            }
        }
    }
}

/// Gradient of the loss with respect to one fragment's compositing inputs.
///
/// Ellipse fragments use `mean` and `conic`; surfel fragments use the
/// world-space tangent-frame fields. `color` and `opacity` are shared.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FragmentGrad {
    pub mean: [f64; 2],
    /// With respect to the conic coefficients `(a, b, c)` of
    /// `q = a·dx² + 2b·dx·dy + c·dy²`.
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
    pub center: [f64; 3],
    pub tu: [f64; 3],
    pub tv: [f64; 3],
    pub normal: [f64; 3],
    pub log_scale: [f64; 2],
}

impl FragmentGrad {
    pub(crate) fn add(&mut self, o: &FragmentGrad) {
        fn acc<const N: usize>(a: &mut [f64; N], b: &[f64; N]) {
            for i in 0..N {
                a[i] += b[i];
            }
        }
        acc(&mut self.mean, &o.mean);
        acc(&mut self.conic, &o.conic);
        acc(&mut self.color, &o.color);
        self.opacity += o.opacity;
        acc(&mut self.center, &o.center);
        acc(&mut self.tu, &o.tu);
        acc(&mut self.tv, &o.tv);
        acc(&mut self.normal, &o.normal);
        acc(&mut self.log_scale, &o.log_scale);
    }
}
