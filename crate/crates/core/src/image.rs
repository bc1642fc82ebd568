//! Dense RGB images in linear `f64`, row-major, 3 channels interleaved.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3, "image data length");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    /// Halves both dimensions by averaging 2×2 blocks.
    pub fn downsample2(&self) -> Image {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Image::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let s = self.data[((2 * y) * self.width + 2 * x) * 3 + c]
                        + self.data[((2 * y) * self.width + 2 * x + 1) * 3 + c]
                        + self.data[((2 * y + 1) * self.width + 2 * x) * 3 + c]
                        + self.data[((2 * y + 1) * self.width + 2 * x + 1) * 3 + c];
                    out.data[(y * w + x) * 3 + c] = 0.25 * s;
                }
            }
        }
        out
    }

    /// Transpose of [`Image::downsample2`]: every fine pixel receives a quarter
    /// of its block's value.
    pub fn downsample2_transpose(&self) -> Image {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut out = Image::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.data[(y * w + x) * 3 + c] =
                        0.25 * self.data[((y / 2) * self.width + x / 2) * 3 + c];
                }
            }
        }
        out
    }

    /// Repeated 2×2 area averaging down to `width × height`.
    ///
    /// Panics unless the target divides the source by a power of two.
    pub fn area_downsample(&self, width: usize, height: usize) -> Image {
        let mut img = self.clone();
        while img.width > width {
            assert!(img.width % 2 == 0 && img.height % 2 == 0);
            img = img.downsample2();
        }
        assert_eq!(
            (img.width, img.height),
            (width, height),
            "non power-of-two resize"
        );
        img
    }

    /// Transpose of [`Image::area_downsample`] back to `width × height`.
    pub fn area_downsample_transpose(&self, width: usize, height: usize) -> Image {
        let mut img = self.clone();
        while img.width < width {
            img = img.downsample2_transpose();
        }
        assert_eq!(
            (img.width, img.height),
            (width, height),
            "non power-of-two resize"
        );
        img
    }

    pub fn mse(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Peak signal-to-noise ratio for a unit peak.
    pub fn psnr(&self, other: &Image) -> f64 {
        let mse = self.mse(other);
        if mse == 0.0 {
            return f64::INFINITY;
        }
        -10.0 * mse.log10()
    }

    /// 8-bit sRGB-agnostic quantization (values are clamped to [0, 1]).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}
