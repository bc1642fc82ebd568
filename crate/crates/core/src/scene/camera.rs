use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::math::{Mat3, Vec3};

/// Orbit camera looking at the world origin.
///
/// `elevation` is the polar angle from the world +z axis, so 90° is a
/// horizontal view and the [30°, 150°] training range covers views from
/// above and below. Azimuth is measured from +x towards +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub radius: f64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Horizontal field of view in degrees.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

/// Pinhole camera with an OpenCV-style frame: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn new(
        radius: f64,
        azimuth: f64,
        elevation: f64,
        fov: f64,
        width: usize,
        height: usize,
    ) -> Self {
        Self {
            radius,
            azimuth,
            elevation,
            fov,
            width,
            height,
        }
    }

    pub fn position(&self) -> Vec3 {
        let (az, pol) = (self.azimuth.to_radians(), self.elevation.to_radians());
        Vec3::new(
            self.radius * pol.sin() * az.cos(),
            self.radius * pol.sin() * az.sin(),
            self.radius * pol.cos(),
        )
    }

    pub fn camera(&self) -> Result<Camera, SceneError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(SceneError::InvalidCamera(format!(
                "radius {} must be positive",
                self.radius
            )));
        }
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(SceneError::InvalidCamera(format!(
                "field of view {} outside (0, 180)",
                self.fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidCamera("empty image".into()));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() {
            return Err(SceneError::InvalidCamera("non-finite angles".into()));
        }
        Camera::look_at(
            self.position(),
            Vec3::zeros(),
            self.fov,
            self.width,
            self.height,
        )
    }

    pub fn with_size(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..*self
        }
    }
}

impl Camera {
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        fov: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera, SceneError> {
        let fwd = target - eye;
        if fwd.norm() == 0.0 {
            return Err(SceneError::InvalidCamera(
                "eye coincides with target".into(),
            ));
        }
        let fwd = fwd.normalize();
        let mut up = Vec3::z();
        if fwd.cross(&up).norm() < 1e-9 {
            up = Vec3::y();
        }
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let translation = -(rotation * eye);
        let fx = 0.5 * width as f64 / (0.5 * fov.to_radians()).tan();
        Ok(Camera {
            rotation,
            translation,
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Pixel coordinates of a camera-space point (pixel centers at `i + 0.5`).
    #[inline]
    pub fn project_camera(&self, t: &Vec3) -> [f64; 2] {
        [self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy]
    }

    /// World-space ray direction through pixel coordinates `(px, py)`, scaled
    /// so its camera-space depth component is 1.
    #[inline]
    pub fn ray_direction(&self, px: f64, py: f64) -> Vec3 {
        let d = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0);
        self.rotation.transpose() * d
    }

    /// Same pose with the image resampled to `width × height`.
    pub fn with_size(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..*self
        }
    }

    /// The camera that sees `x` exactly as this camera sees `rot·x + trans`.
    pub fn composed_with_rigid(&self, rot: &Mat3, trans: &Vec3) -> Camera {
        Camera {
            rotation: self.rotation * rot,
            translation: self.rotation * trans + self.translation,
            ..*self
        }
    }

    /// Intrinsic matrix; invertible whenever the focal lengths are non-zero.
    pub fn intrinsics(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}
