//! Global map: camera trajectory, scene features and the robot model placed
//! at the newest pose.

use std::collections::{BTreeMap, VecDeque};

use image::{Rgb, RgbImage};
use nalgebra::Vector3;

use crate::buffer::FrameRecord;
use crate::geom::{look_rotation, place_in_map, CameraIntrinsics, GeomError, Point3Set, Pose, Rgb as Color};
use crate::raster::{draw_segment_3d, fill_disk};
use crate::rov::BODY_COLOR;
use crate::sim::MapPoint;
use crate::synthesis::RenderConfig;

/// Default number of trajectory points retained.
pub const DEFAULT_MAP_HISTORY: usize = 10_000;

const MAP_BACKGROUND: Color = [12, 14, 20];
const TRAJECTORY_COLOR: Color = [80, 200, 255];
const CURRENT_COLOR: Color = [255, 60, 60];

/// Immutable map state handed to readers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapSnapshot {
    /// Camera centers, oldest first (bounded by the history limit).
    pub trajectory: Vec<Vector3<f64>>,
    /// Scene features, ordered by id.
    pub feature_points: Point3Set,
    pub feature_ids: Vec<u64>,
    /// Robot model placed at the newest pose.
    pub rov_points: Point3Set,
    /// Pose the robot points were placed at.
    pub current_pose: Option<Pose>,
    /// Frames folded in since the session started (not capped).
    pub frames_seen: u64,
}

impl MapSnapshot {
    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty() && self.feature_points.is_empty() && self.rov_points.is_empty()
    }
}

/// Single-writer map accumulator.
#[derive(Debug, Clone)]
pub struct MapBuilder {
    history_limit: usize,
    trajectory: VecDeque<Vector3<f64>>,
    features: BTreeMap<u64, (Vector3<f64>, Color)>,
    rov_points: Point3Set,
    current_pose: Option<Pose>,
    frames_seen: u64,
}

impl Default for MapBuilder {
    fn default() -> Self {
        Self::new(DEFAULT_MAP_HISTORY)
    }
}

impl MapBuilder {
    pub fn new(history_limit: usize) -> Self {
        Self {
            history_limit: history_limit.max(1),
            trajectory: VecDeque::new(),
            features: BTreeMap::new(),
            rov_points: Point3Set::default(),
            current_pose: None,
            frames_seen: 0,
        }
    }

    /// Folds in a newly admitted frame: appends its camera center, re-places
    /// the robot model at its pose and merges features by id (latest
    /// observation wins).
    pub fn update(
        &mut self,
        newest: &FrameRecord,
        features: Option<&[MapPoint]>,
        cloud: &Point3Set,
        cfg: &RenderConfig,
    ) -> Result<MapSnapshot, GeomError> {
        let rov = place_in_map(cloud, &newest.pose, cfg.lambda2)?;
        if self.trajectory.len() == self.history_limit {
            self.trajectory.pop_front();
        }
        self.trajectory.push_back(newest.pose.center());
        for f in features.unwrap_or_default() {
            self.features.insert(f.id, (f.position, f.color));
        }
        self.rov_points = rov;
        self.current_pose = Some(newest.pose);
        self.frames_seen += 1;
        Ok(self.snapshot())
    }

    pub fn snapshot(&self) -> MapSnapshot {
        let (points, colors): (Vec<_>, Vec<_>) = self.features.values().copied().unzip();
        MapSnapshot {
            trajectory: self.trajectory.iter().copied().collect(),
            feature_points: Point3Set::new(points, Some(colors)).expect("features are finite"),
            feature_ids: self.features.keys().copied().collect(),
            rov_points: self.rov_points.clone(),
            current_pose: self.current_pose,
            frames_seen: self.frames_seen,
        }
    }
}

/// Virtual camera looking straight down (world `-z`) at the trajectory's
/// bounding box, with world `+y` pointing up in the image.
pub fn overview_pose(map: &MapSnapshot, intrinsics: &CameraIntrinsics) -> Pose {
    let pts = map.trajectory.iter().chain(map.rov_points.points());
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if !lo.x.is_finite() {
        lo = Vector3::zeros();
        hi = Vector3::zeros();
    }
    let center = (lo + hi) / 2.0;
    let half_w = ((hi.x - lo.x) / 2.0).max(1.0) * 1.2;
    let half_h = ((hi.y - lo.y) / 2.0).max(1.0) * 1.2;
    let height = (half_w * intrinsics.fx / intrinsics.cx).max(half_h * intrinsics.fy / intrinsics.cy);
    let rot = look_rotation(&-Vector3::z(), &Vector3::y()).expect("non-parallel axes");
    Pose::new(rot, Vector3::new(center.x, center.y, hi.z + height), 0.0).expect("valid overview pose")
}

/// Pinhole render of the map from an arbitrary virtual camera: features as
/// dots, the trajectory as a polyline, then the robot points (far to near)
/// and a marker at the current camera center.
pub fn render_map_view(map: &MapSnapshot, view_pose: &Pose, intrinsics: &CameraIntrinsics) -> RgbImage {
    let mut img = RgbImage::from_pixel(intrinsics.width, intrinsics.height, Rgb(MAP_BACKGROUND));
    let project = |p: &Vector3<f64>| {
        let cam = view_pose.inverse_transform_point(p);
        intrinsics.project(&cam).map(|uv| (uv, cam.z))
    };
    for (i, p) in map.feature_points.points().iter().enumerate() {
        if let Some((uv, _)) = project(p) {
            fill_disk(&mut img, uv[0], uv[1], 1, map.feature_points.color_of(i, [200, 200, 200]), None);
        }
    }
    match map.trajectory.as_slice() {
        [single] => {
            if let Some((uv, _)) = project(single) {
                fill_disk(&mut img, uv[0], uv[1], 0, TRAJECTORY_COLOR, None);
            }
        }
        many => {
            for w in many.windows(2) {
                draw_segment_3d(&mut img, intrinsics, view_pose, &w[0], &w[1], TRAJECTORY_COLOR, 1);
            }
        }
    }
    let mut robot: Vec<_> = map
        .rov_points
        .points()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project(p).map(|(uv, z)| (uv, z, i)))
        .collect();
    robot.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    for (uv, _, i) in robot {
        fill_disk(&mut img, uv[0], uv[1], 1, map.rov_points.color_of(i, BODY_COLOR), None);
    }
    if let Some((uv, _)) = map.current_pose.and_then(|p| project(&p.center())) {
        fill_disk(&mut img, uv[0], uv[1], 3, CURRENT_COLOR, None);
    }
    img
}
