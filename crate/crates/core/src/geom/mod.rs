//! Closed-form rigid-body and pinhole geometry.
//!
//! Everything here is a pure function over `f64` values: relative pose
//! transfer of a point cloud between two camera poses, pinhole projection,
//! placement of the robot model in the map frame, least-squares plane
//! fitting, and DLT homography estimation with image warping.

mod homography;
mod plane;
mod pose;
mod warp;

pub use homography::{estimate_homography, Homography};
pub use plane::{fit_plane, Plane, PlaneFit};
pub use pose::{look_rotation, rot_x, rot_z, Pose, ORTHONORMAL_TOLERANCE};
pub use warp::{composite_over, warp_image, Region};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Projections with depth at or below this value are culled.
pub const EPSILON_DEPTH: f64 = 1e-6;

pub type Rgb = [u8; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation is not orthonormal (max |RᵀR - I| = {max_deviation:e}, det = {det})")]
    NotOrthonormal { max_deviation: f64, det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("timestamp must be finite and non-negative, got {0}")]
    InvalidTimestamp(f64),
    #[error("quaternion is not unit length (norm {0})")]
    NonUnitQuaternion(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("colors length {colors} does not match points length {points}")]
    ColorLength { points: usize, colors: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("rank-deficient correspondence set: {0}")]
    RankDeficient(String),
    #[error("correspondence count mismatch: {src} source vs {dst} destination points")]
    CorrespondenceMismatch { src: usize, dst: usize },
}

/// Pinhole intrinsics `K` plus the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// 640×480 with a ~65° horizontal field of view, centered principal point.
    pub fn vga() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let bad = |msg: String| Err(GeomError::InvalidIntrinsics(msg));
        if !(self.fx > 0.0 && self.fx.is_finite()) || !(self.fy > 0.0 && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(0.0..self.width as f64).contains(&self.cx) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(0.0..self.height as f64).contains(&self.cy) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point. `None` when behind the cull depth.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= EPSILON_DEPTH {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    /// Whether a pixel coordinate falls inside the image (pixel-center convention,
    /// so the valid range is `[-0.5, width - 0.5)`).
    pub fn contains(&self, uv: [f64; 2]) -> bool {
        uv[0] >= -0.5 && uv[1] >= -0.5 && uv[0] < self.width as f64 - 0.5 && uv[1] < self.height as f64 - 0.5
    }

    /// Same camera resampled to a different resolution.
    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

/// A point cloud with optional per-point colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Point3Set {
    points: Vec<Vector3<f64>>,
    colors: Option<Vec<Rgb>>,
}

impl Point3Set {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<Rgb>>) -> Result<Self, GeomError> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(GeomError::ColorLength {
                    points: points.len(),
                    colors: c.len(),
                });
            }
        }
        if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite("point coordinates"));
        }
        Ok(Self { points, colors })
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        Self::new(points, None)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn color_of(&self, index: usize, fallback: Rgb) -> Rgb {
        self.colors.as_ref().map_or(fallback, |c| c[index])
    }

    /// Applies a point-wise map, keeping colors. Callers guarantee finiteness.
    fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            colors: self.colors.clone(),
        }
    }
}

/// A projected point, carrying the index of its source point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub index: usize,
}

/// How the current→reference transfer treats the translation difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransferMode {
    /// Full rigid composition `R_rᵀ (R_c P + t_c - t_r)`.
    #[default]
    Standard,
    /// `R_rᵀ R_c P + (t_c - t_r)`: the translation difference is not
    /// rotated into the reference frame.
    Literal,
}

impl std::str::FromStr for TransferMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Self::Standard),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown transfer mode `{other}` (expected standard|literal)")),
        }
    }
}

impl std::fmt::Display for TransferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Literal => "literal",
        })
    }
}

/// Re-expresses a cloud given in the current camera frame in the reference
/// camera frame.
pub fn transfer_points(cloud: &Point3Set, current: &Pose, reference: &Pose, mode: TransferMode) -> Point3Set {
    let r_ref_t = reference.rotation().transpose();
    let relative = r_ref_t * current.rotation();
    let dt = current.translation() - reference.translation();
    let offset = match mode {
        TransferMode::Standard => r_ref_t * dt,
        TransferMode::Literal => dt,
    };
    cloud.map_points(|p| relative * p + offset)
}

/// Pinhole projection of camera-frame points.
///
/// `lambda1` scales the homogeneous vector before perspective division, so it
/// has no effect on `(u, v)`; it is accepted for parity with the projection
/// formula and must be positive.
pub fn project_points(
    cloud: &Point3Set,
    intrinsics: &CameraIntrinsics,
    lambda1: f64,
) -> Result<Vec<PixelPoint>, GeomError> {
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(GeomError::NonPositive("lambda1", lambda1));
    }
    let mut out = Vec::with_capacity(cloud.len());
    for (index, p) in cloud.points().iter().enumerate() {
        if p.z <= EPSILON_DEPTH {
            continue;
        }
        let hx = lambda1 * (intrinsics.fx * p.x + intrinsics.cx * p.z);
        let hy = lambda1 * (intrinsics.fy * p.y + intrinsics.cy * p.z);
        let hw = lambda1 * p.z;
        out.push(PixelPoint {
            u: hx / hw,
            v: hy / hw,
            depth: p.z,
            index,
        });
    }
    Ok(out)
}

/// Places a model cloud in the map frame: `lambda2 * R * P + t`.
pub fn place_in_map(cloud: &Point3Set, pose: &Pose, lambda2: f64) -> Result<Point3Set, GeomError> {
    if !(lambda2 > 0.0 && lambda2.is_finite()) {
        return Err(GeomError::NonPositive("lambda2", lambda2));
    }
    let r = pose.rotation() * lambda2;
    let t = *pose.translation();
    Ok(cloud.map_points(|p| r * p + t))
}
