//! Pinhole cameras, pixel rays and Plücker ray maps.
//!
//! World space is right-handed with `+y` up. A camera looks down its local
//! `-z` axis with `+y` up and `+x` right; pixel `(0, 0)` is the top-left
//! pixel and pixel centers sit at half-integer coordinates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::image::Image;
use crate::vec3::{Mat3, Vec3};

pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ViewSpec {
    /// Camera-to-world rotation; columns are the camera's right, up and back
    /// axes in world coordinates.
    pub rotation: Mat3,
    /// Camera origin in world coordinates.
    pub translation: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub index: usize,
}

/// JSON form of a camera: `{"index", "fov", "rotation": [9, row-major],
/// "translation": [3], "resolution": [width, height]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub index: usize,
    pub fov: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub resolution: [usize; 2],
}

impl ViewSpec {
    pub fn new(rotation: Mat3, translation: Vec3, fov_y: f64, width: usize, height: usize, index: usize) -> Result<Self> {
        let v = Self {
            rotation,
            translation,
            fov_y,
            width,
            height,
            index,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let err = self.rotation.orthonormality_error();
        if err > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidView(format!(
                "rotation is not a proper rotation (orthonormality error {err:e}, det {})",
                self.rotation.determinant()
            )));
        }
        if self.width < MIN_RESOLUTION || self.height < MIN_RESOLUTION {
            return Err(GeometryError::InvalidView(format!(
                "resolution {}x{} below {MIN_RESOLUTION}x{MIN_RESOLUTION}",
                self.width, self.height
            )));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(GeometryError::InvalidView(format!("field of view {} out of (0, pi)", self.fov_y)));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`. Falls back to a `+z` up hint when
    /// the view direction is parallel to `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize, index: usize) -> Result<Self> {
        let back = (eye - target).normalized();
        let mut right = up.cross(back);
        if right.length() < 1e-9 {
            right = Vec3::new(0.0, 0.0, 1.0).cross(back);
        }
        let right = right.normalized();
        let true_up = back.cross(right);
        Self::new(Mat3::from_columns(right, true_up, back), eye, fov_y, width, height, index)
    }

    pub fn origin(&self) -> Vec3 {
        self.translation
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Forward (viewing) direction in world space.
    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2)
    }

    /// Unit world-space direction of the ray through pixel center `(px, py)`.
    pub fn ray_dir(&self, px: usize, py: usize) -> Vec3 {
        self.ray_dir_at(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Ray direction through continuous pixel coordinates.
    pub fn ray_dir_at(&self, sx: f64, sy: f64) -> Vec3 {
        let t = (self.fov_y / 2.0).tan();
        let x = (2.0 * sx / self.width as f64 - 1.0) * t * self.aspect();
        let y = (1.0 - 2.0 * sy / self.height as f64) * t;
        self.rotation.mul_vec(Vec3::new(x, y, -1.0)).normalized()
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.tmul_vec(p - self.translation)
    }

    /// Continuous pixel coordinates of a camera-space point with `z < 0`.
    pub fn project_camera(&self, pc: Vec3) -> (f64, f64) {
        let t = (self.fov_y / 2.0).tan();
        let ndc_x = pc.x / (-pc.z) / (t * self.aspect());
        let ndc_y = pc.y / (-pc.z) / t;
        ((ndc_x + 1.0) * 0.5 * self.width as f64, (1.0 - ndc_y) * 0.5 * self.height as f64)
    }

    /// Six-channel map: ray direction `d` then moment `m = o x d`.
    pub fn plucker_map(&self) -> Image {
        let mut img = Image::new(self.width, self.height, 6);
        let o = self.origin();
        for py in 0..self.height {
            for px in 0..self.width {
                let d = self.ray_dir(px, py);
                let m = o.cross(d);
                img.pixel_mut(px, py).copy_from_slice(&[d.x, d.y, d.z, m.x, m.y, m.z]);
            }
        }
        img
    }

    pub fn to_record(&self) -> CameraRecord {
        CameraRecord {
            index: self.index,
            fov: self.fov_y,
            rotation: self.rotation.row_major(),
            translation: self.translation.to_array(),
            resolution: [self.width, self.height],
        }
    }

    pub fn from_record(r: &CameraRecord) -> Result<Self> {
        Self::new(
            Mat3::from_row_major(r.rotation),
            Vec3::from(r.translation),
            r.fov,
            r.resolution[0],
            r.resolution[1],
            r.index,
        )
    }

    /// Same pose at another resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self> {
        Self::new(self.rotation, self.translation, self.fov_y, width, height, self.index)
    }
}

/// `n` quasi-uniform unit directions (golden-angle spiral, offset variant).
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let theta = golden * i as f64;
            Vec3::new(theta.cos() * r, y, theta.sin() * r)
        })
        .collect()
}

/// Cameras at `radius` along each Fibonacci direction, looking at the origin.
pub fn fibonacci_views(n: usize, radius: f64, fov_y: f64, res: usize) -> Result<Vec<ViewSpec>> {
    fibonacci_directions(n)
        .into_iter()
        .enumerate()
        .map(|(i, d)| ViewSpec::look_at(d * radius, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), fov_y, res, res, i))
        .collect()
}

/// Cameras on a ring at the given elevation (radians), evenly spaced in
/// azimuth starting from `+z`.
pub fn orbit_views(n: usize, elevation: f64, radius: f64, fov_y: f64, res: usize) -> Result<Vec<ViewSpec>> {
    (0..n)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vec3::new(
                radius * elevation.cos() * az.sin(),
                radius * elevation.sin(),
                radius * elevation.cos() * az.cos(),
            );
            ViewSpec::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), fov_y, res, res, i)
        })
        .collect()
}

pub fn save_cameras(path: impl AsRef<Path>, views: &[ViewSpec]) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> = views.iter().map(ViewSpec::to_record).collect();
    let text = serde_json::to_string_pretty(&records)?;
    std::fs::write(path, text).map_err(|e| GeometryError::io(path, e))
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<ViewSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text)?;
    records.iter().map(ViewSpec::from_record).collect()
}
