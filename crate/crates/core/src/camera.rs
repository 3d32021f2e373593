use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Se3, Vec3};

/// Pinhole camera with a world-to-camera extrinsic. Camera space looks down
/// `+z`; pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Se3,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_to_camera: Se3,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config(
                "camera.fx/fy",
                "focal lengths must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("camera.width/height", "empty frame"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::config("camera.cx", "principal point outside frame"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::config("camera.cy", "principal point outside frame"));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, image `y` pointing along
    /// `-up` in the picture.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        let forward = target - eye;
        let fwd_n = forward.norm();
        if !(fwd_n > 0.0) {
            return Err(Error::Degenerate("camera eye equals target".into()));
        }
        let z = forward.scale(1.0 / fwd_n);
        let x = z.cross(up);
        let xn = x.norm();
        if !(xn > 1e-12) {
            return Err(Error::Degenerate(
                "camera up parallel to view direction".into(),
            ));
        }
        let x = x.scale(1.0 / xn);
        let y = z.cross(x);
        // rows of the world-to-camera rotation are the camera axes
        let r = [[x.x, x.y, x.z], [y.x, y.y, y.z], [z.x, z.y, z.z]];
        let rot = crate::geometry::Quat::from_matrix(&r);
        let t = -rot.rotate(eye);
        Camera::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            Se3::new(rot, t),
        )
    }

    pub fn center(&self) -> Vec3 {
        self.world_to_camera.inverse().translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Camera::new(10.0, 10.0, 4.0, 4.0, 8, 8, Se3::IDENTITY).is_ok());
        assert!(Camera::new(0.0, 10.0, 4.0, 4.0, 8, 8, Se3::IDENTITY).is_err());
        assert!(Camera::new(10.0, 10.0, 8.0, 4.0, 8, 8, Se3::IDENTITY).is_err());
        assert!(Camera::new(10.0, 10.0, 4.0, -1.0, 8, 8, Se3::IDENTITY).is_err());
    }

    #[test]
    fn look_at_puts_target_on_axis() {
        let eye = Vec3::new(3.0, 1.0, -2.0);
        let cam = Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 50.0, 32, 32).unwrap();
        let p = cam.world_to_camera.apply(Vec3::ZERO);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - eye.norm()).abs() < 1e-12);
        assert!((cam.center() - eye).norm() < 1e-12);
    }
}
