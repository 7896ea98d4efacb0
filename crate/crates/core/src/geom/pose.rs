use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::GeomError;

/// Tolerance on `RᵀR = I` (per entry) and `det R = 1`.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Camera-to-world rigid transform: `X_world = rotation * X_cam + translation`.
///
/// Camera axes follow the usual computer-vision convention: `+x` right,
/// `+y` down, `+z` along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    timestamp: f64,
}

impl Pose {
    /// Validated constructor.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        timestamp: f64,
    ) -> Result<Self, GeomError> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeomError::NonFinite("translation"));
        }
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(GeomError::InvalidTimestamp(timestamp));
        }
        Ok(Self {
            rotation,
            translation,
            timestamp,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            timestamp: 0.0,
        }
    }

    /// Builds a pose from a unit quaternion given as `[qx, qy, qz, qw]`.
    ///
    /// The quaternion must already be normalized to within 1e-12; loaders
    /// normalize (and count) non-unit inputs before calling this.
    pub fn from_quaternion(
        translation: [f64; 3],
        q: [f64; 4],
        timestamp: f64,
    ) -> Result<Self, GeomError> {
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(GeomError::NonUnitQuaternion(norm));
        }
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let rot = UnitQuaternion::new_unchecked(quat).to_rotation_matrix();
        Self::new(*rot.matrix(), Vector3::from(translation), timestamp)
    }

    /// Builds a pose from a rotation vector (axis * angle, radians).
    pub fn from_axis_angle(
        axis_angle: Vector3<f64>,
        translation: Vector3<f64>,
        timestamp: f64,
    ) -> Result<Self, GeomError> {
        let rot = Rotation3::new(axis_angle);
        Self::new(*rot.matrix(), translation, timestamp)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates (same as the translation).
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Returns `[qx, qy, qz, qw]` with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let (x, y, z, w) = (q.i, q.j, q.k, q.w);
        if w < 0.0 {
            [-x, -y, -z, -w]
        } else {
            [x, y, z, w]
        }
    }

    /// Maps a camera-frame point to the world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a world point into this camera's frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// World-to-camera transform, as a pose object.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            timestamp: self.timestamp,
        }
    }

    /// `self ∘ other`: first apply `other`, then `self`. Keeps `self`'s timestamp.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            timestamp: self.timestamp,
        }
    }

    /// Optical axis direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Image-down direction in world coordinates.
    pub fn down(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeomError> {
    if !r.iter().all(|c| c.is_finite()) {
        return Err(GeomError::NonFinite("rotation"));
    }
    let gram = r.transpose() * r - Matrix3::identity();
    let worst = gram.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let det = r.determinant();
    if worst > ORTHONORMAL_TOLERANCE || (det - 1.0).abs() > ORTHONORMAL_TOLERANCE {
        return Err(GeomError::NotOrthonormal {
            max_deviation: worst,
            det,
        });
    }
    Ok(())
}

/// Rotation about `+z` by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
}

/// Rotation about `+x` by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), angle).matrix()
}

/// Rotation whose columns are the camera's right, down and forward axes.
pub fn look_rotation(forward: &Vector3<f64>, world_up: &Vector3<f64>) -> Option<Matrix3<f64>> {
    let f = forward.try_normalize(1e-12)?;
    let right = f.cross(world_up).try_normalize(1e-9)?;
    let down = f.cross(&right);
    Some(Matrix3::from_columns(&[right, down, f]))
}
