//! Pinhole intrinsics and rigid world-to-camera poses.
//!
//! Camera frame: x to the right, y down the image, z along the optical axis.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(format!("invalid intrinsics {self:?}"))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > 0.0).then(|| {
            Vector2::new(
                self.fx * p.x / p.z + self.cx,
                self.fy * p.y / p.z + self.cy,
            )
        })
    }

    /// Camera-frame ray direction (z = 1) through a pixel.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width as f64 && px.y >= 0.0 && px.y < self.height as f64
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

/// World-to-camera transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates `RᵀR = I` (within 1e-9) and `det R = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, String> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if err > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(format!("not a rotation matrix (orthogonality error {err:e})"));
        }
        Ok(CameraPose {
            rotation,
            translation,
        })
    }

    /// Pose from a `[w, x, y, z]` quaternion (normalized here) and a translation.
    pub fn from_quaternion(q: [f64; 4], t: [f64; 3]) -> Option<Self> {
        let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if raw.norm() < 1e-12 || !raw.norm().is_finite() {
            return None;
        }
        let unit = UnitQuaternion::from_quaternion(raw);
        Some(CameraPose {
            rotation: unit.to_rotation_matrix().into_inner(),
            translation: Vector3::from(t),
        })
    }

    /// `[w, x, y, z]` with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    /// Camera at `eye` looking at `target`, with image-up roughly along `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        CameraPose {
            rotation,
            translation: -(rotation * eye),
        }
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_point_projection() {
        let k = CameraIntrinsics::default();
        let px = k.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((px.x, px.y), (320.0, 240.0));
        assert!(k.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn look_at_is_a_rotation() {
        let pose = CameraPose::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(4.0, -1.0, 7.0),
            Vector3::new(0.0, -1.0, 0.0),
        );
        assert!(CameraPose::new(pose.rotation, pose.translation).is_ok());
        assert!((pose.center() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        let target_cam = pose.to_camera(&Vector3::new(4.0, -1.0, 7.0));
        assert!(target_cam.x.abs() < 1e-12 && target_cam.y.abs() < 1e-12 && target_cam.z > 0.0);
    }

    #[test]
    fn quaternion_round_trip() {
        let pose = CameraPose::look_at(
            Vector3::new(0.5, 0.0, -2.0),
            Vector3::new(0.0, 0.3, 5.0),
            Vector3::new(0.0, -1.0, 0.0),
        );
        let q = pose.quaternion();
        let t = pose.translation;
        let back = CameraPose::from_quaternion(q, [t.x, t.y, t.z]).unwrap();
        assert!((back.rotation - pose.rotation).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_rotation() {
        assert!(CameraPose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraPose::new(reflect, Vector3::zeros()).is_err());
    }
}
