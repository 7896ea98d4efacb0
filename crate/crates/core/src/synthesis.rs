//! Exocentric view synthesis: the robot cloud, attached to the current
//! camera, is re-expressed in a past reference camera and splatted onto that
//! frame's image.

use image::RgbImage;
use thiserror::Error;

use crate::buffer::{BufferError, BufferSnapshot, FrameRecord};
use crate::geom::{project_points, transfer_points, CameraIntrinsics, GeomError, Point3Set, Pose, TransferMode};
use crate::raster::fill_disk;
use crate::rov::BODY_COLOR;

/// Splat radius at the reference resolution of 640 pixels width.
pub const DEFAULT_POINT_RADIUS: u32 = 2;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("exo synthesis needs at least 2 buffered frames, have {0}")]
    NotEnoughFrames(usize),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("reference image is {got_w}x{got_h}, intrinsics expect {want_w}x{want_h}")]
    ImageSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Homogeneous scale applied before perspective division (no effect on
    /// pixel positions).
    pub lambda1: f64,
    /// Model-to-map scale used when placing the robot in the map.
    pub lambda2: f64,
    pub point_radius: u32,
    pub transfer_mode: TransferMode,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            point_radius: DEFAULT_POINT_RADIUS,
            transfer_mode: TransferMode::Standard,
        }
    }
}

impl RenderConfig {
    /// Default settings with the splat radius scaled from 640 px width.
    pub fn for_width(width: u32) -> Self {
        let radius = (DEFAULT_POINT_RADIUS as f64 * width as f64 / 640.0).round().max(1.0) as u32;
        Self {
            point_radius: radius,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynthesisError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.point_radius == 0 {
            return Err(SynthesisError::InvalidConfig("point_radius must be at least 1".into()));
        }
        Ok(())
    }
}

/// A synthesized third-person view.
#[derive(Debug, Clone)]
pub struct ExoView {
    /// Copy of the reference image with the robot overlay.
    pub image: RgbImage,
    pub reference_seq: u64,
    pub current_seq: u64,
    pub reference_pose: Pose,
    pub current_pose: Pose,
    /// Requested EOB distance (admitted frames between current and reference).
    pub eob_distance: usize,
    /// The request reached past the oldest buffered frame.
    pub clamped: bool,
    /// Distinct pixels covered by the overlay.
    pub overlay_pixel_count: usize,
}

/// Renders the view from the frame `f` admissions before the newest one.
pub fn synthesize_exo(
    snapshot: &BufferSnapshot,
    f: usize,
    cloud: &Point3Set,
    intrinsics: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<ExoView, SynthesisError> {
    if snapshot.len() < 2 {
        return Err(SynthesisError::NotEnoughFrames(snapshot.len()));
    }
    let selection = snapshot.select_reference(f)?;
    let current = snapshot.current().expect("non-empty snapshot");
    let mut view = synthesize_between(current, &selection.record, cloud, intrinsics, cfg)?;
    view.eob_distance = f;
    view.clamped = selection.clamped;
    Ok(view)
}

/// Renders `cloud` (given in `current`'s camera frame) into `reference`'s
/// image. `current` and `reference` may be the same record.
pub fn synthesize_between(
    current: &FrameRecord,
    reference: &FrameRecord,
    cloud: &Point3Set,
    intrinsics: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<ExoView, SynthesisError> {
    cfg.validate()?;
    let (w, h) = reference.image.dimensions();
    if (w, h) != (intrinsics.width, intrinsics.height) {
        return Err(SynthesisError::ImageSize {
            got_w: w,
            got_h: h,
            want_w: intrinsics.width,
            want_h: intrinsics.height,
        });
    }
    let transferred = transfer_points(cloud, &current.pose, &reference.pose, cfg.transfer_mode);
    let mut projected = project_points(&transferred, intrinsics, cfg.lambda1)?;
    // Painter's order: far to near, ties broken by source index for determinism.
    projected.sort_unstable_by(|a, b| b.depth.total_cmp(&a.depth).then(a.index.cmp(&b.index)));
    let mut image = (*reference.image).clone();
    let mut mask = vec![false; (w as usize) * (h as usize)];
    let mut painted = 0;
    for p in &projected {
        let color = cloud.color_of(p.index, BODY_COLOR);
        painted += fill_disk(&mut image, p.u, p.v, cfg.point_radius, color, Some(&mut mask));
    }
    Ok(ExoView {
        image,
        reference_seq: reference.seq,
        current_seq: current.seq,
        reference_pose: reference.pose,
        current_pose: current.pose,
        eob_distance: current.seq.saturating_sub(reference.seq) as usize,
        clamped: false,
        overlay_pixel_count: painted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::{BufferConfig, PoseBuffer};
    use crate::rov::{builtin_rov_mesh, mount_behind_camera, sample_point_cloud};
    use nalgebra::{Matrix3, Vector3};
    use std::sync::Arc;

    fn small_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).unwrap()
    }

    fn record(seq: u64, z: f64) -> FrameRecord {
        FrameRecord {
            seq,
            pose: Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, z), 0.0).unwrap(),
            image: Arc::new(RgbImage::new(160, 120)),
        }
    }

    fn robot() -> Point3Set {
        let cloud = sample_point_cloud(&builtin_rov_mesh(), 2000, 1).unwrap();
        mount_behind_camera(&cloud, 0.1)
    }

    #[test]
    fn self_view_of_mounted_robot_is_empty() {
        let k = small_intrinsics();
        let r = record(5, 0.0);
        let view = synthesize_between(&r, &r, &robot(), &k, &RenderConfig::default()).unwrap();
        assert_eq!(view.overlay_pixel_count, 0);
        assert_eq!(view.image, *r.image);
    }

    #[test]
    fn robot_visible_from_behind() {
        let k = small_intrinsics();
        let current = record(10, 3.0);
        let reference = record(0, 0.0);
        let view = synthesize_between(&current, &reference, &robot(), &k, &RenderConfig::default()).unwrap();
        assert!(view.overlay_pixel_count > 50);
        assert_eq!(view.eob_distance, 10);
        // Painted pixels match the reported count.
        let changed = view.image.pixels().filter(|p| p.0 != [0, 0, 0]).count();
        assert_eq!(changed, view.overlay_pixel_count);
    }

    #[test]
    fn deterministic() {
        let k = small_intrinsics();
        let (c, r) = (record(3, 2.0), record(1, 0.0));
        let cloud = robot();
        let cfg = RenderConfig::default();
        let a = synthesize_between(&c, &r, &cloud, &k, &cfg).unwrap();
        let b = synthesize_between(&c, &r, &cloud, &k, &cfg).unwrap();
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn nearer_point_wins() {
        let k = small_intrinsics();
        let (c, r) = (record(1, 0.0), record(0, 0.0));
        // Same pixel ray, two depths; the near one listed first.
        let cloud = Point3Set::new(
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 4.0)],
            Some(vec![[255, 0, 0], [0, 0, 255]]),
        )
        .unwrap();
        let view = synthesize_between(&c, &r, &cloud, &k, &RenderConfig::default()).unwrap();
        assert_eq!(view.image.get_pixel(80, 60).0, [255, 0, 0]);
        assert_eq!(view.overlay_pixel_count, 13);
    }

    #[test]
    fn needs_two_frames_and_clamps() {
        let k = small_intrinsics();
        let mut buf = PoseBuffer::new(BufferConfig::default(), 160, 120).unwrap();
        let img = Arc::new(RgbImage::new(160, 120));
        let cloud = robot();
        let cfg = RenderConfig::default();
        buf.offer(Pose::identity(), img.clone()).unwrap();
        assert!(matches!(
            synthesize_exo(&buf.snapshot(), 1, &cloud, &k, &cfg),
            Err(SynthesisError::NotEnoughFrames(1))
        ));
        for i in 1..5 {
            let p = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, i as f64 * 0.1), 0.0).unwrap();
            buf.offer(p, img.clone()).unwrap();
        }
        let v = synthesize_exo(&buf.snapshot(), 2, &cloud, &k, &cfg).unwrap();
        assert_eq!((v.reference_seq, v.current_seq, v.clamped), (2, 4, false));
        let v = synthesize_exo(&buf.snapshot(), 50, &cloud, &k, &cfg).unwrap();
        assert_eq!((v.reference_seq, v.clamped, v.eob_distance), (0, true, 50));
        assert!(synthesize_exo(&buf.snapshot(), 0, &cloud, &k, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = RenderConfig {
            lambda1: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(RenderConfig::for_width(1280).point_radius, 4);
        assert_eq!(RenderConfig::for_width(160).point_radius, 1);
    }
}
