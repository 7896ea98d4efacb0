use std::sync::Arc;

use image::RgbImage;
use nalgebra::Vector3;

use super::{corrupt_poses, generate_trajectory, render_scene, visible_landmarks, NoiseModel, Scene, SimError, TrajectoryKind, VisibleLandmark};
use crate::geom::{CameraIntrinsics, Pose, Rgb};

/// A scene feature reported by the pose source, keyed by a stable id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub id: u64,
    pub position: Vector3<f64>,
    pub color: Rgb,
}

/// One step of a pose source: an estimated camera pose with its image.
#[derive(Debug, Clone)]
pub struct PoseSourceEvent {
    /// Pose as estimated by the source (possibly drifting).
    pub pose: Pose,
    pub image: Arc<RgbImage>,
    /// Ground-truth pose, when the source knows it.
    pub ground_truth: Option<Pose>,
    /// Landmarks visible in `image` with exact pixel positions.
    pub landmarks_visible: Option<Vec<VisibleLandmark>>,
    /// Scene features tracked at this step.
    pub map_points: Option<Vec<MapPoint>>,
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub trajectory: TrajectoryKind,
    pub steps: usize,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseModel,
    /// When false, every event shares one blank image; useful for pure
    /// geometry experiments where pixels are never looked at.
    pub render_images: bool,
}

/// Synthetic pose source: renders the scene along a generated trajectory and
/// reports exact landmark pixels alongside optionally corrupted poses.
pub struct SimulatedSource {
    config: SimulationConfig,
    truth: Vec<Pose>,
    estimated: Vec<Pose>,
    blank: Arc<RgbImage>,
    next: usize,
}

impl SimulatedSource {
    pub fn new(config: SimulationConfig) -> Result<Self, SimError> {
        config.intrinsics.validate()?;
        let truth = generate_trajectory(&config.trajectory, config.steps)?;
        let estimated = corrupt_poses(&truth, &config.noise)?;
        let blank = Arc::new(RgbImage::new(config.intrinsics.width, config.intrinsics.height));
        Ok(Self {
            config,
            truth,
            estimated,
            blank,
            next: 0,
        })
    }

    pub fn ground_truth(&self) -> &[Pose] {
        &self.truth
    }

    pub fn estimated(&self) -> &[Pose] {
        &self.estimated
    }

    pub fn scene(&self) -> &Scene {
        &self.config.scene
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.config.intrinsics
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// The event for step `k`, independent of iteration state.
    pub fn event(&self, k: usize) -> PoseSourceEvent {
        let truth = self.truth[k];
        let (image, visible) = if self.config.render_images {
            let (img, vis) = render_scene(&truth, &self.config.scene, &self.config.intrinsics);
            (Arc::new(img), vis)
        } else {
            (
                Arc::clone(&self.blank),
                visible_landmarks(&truth, &self.config.scene, &self.config.intrinsics),
            )
        };
        let map_points = visible
            .iter()
            .filter_map(|v| self.config.scene.landmark(v.id))
            .map(|l| MapPoint {
                id: l.id,
                position: l.position,
                color: l.color,
            })
            .collect();
        PoseSourceEvent {
            pose: self.estimated[k],
            image,
            ground_truth: Some(truth),
            landmarks_visible: Some(visible),
            map_points: Some(map_points),
        }
    }
}

impl Iterator for SimulatedSource {
    type Item = Result<PoseSourceEvent, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.truth.len() {
            return None;
        }
        let event = self.event(self.next);
        self.next += 1;
        Some(Ok(event))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.truth.len() - self.next;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SplineParams;

    fn config(render: bool) -> SimulationConfig {
        SimulationConfig {
            trajectory: TrajectoryKind::Smooth6Dof(SplineParams::corridor(4.0, 5)),
            steps: 20,
            scene: Scene::corridor(60, -1.0, 12.0, 5),
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).unwrap(),
            noise: NoiseModel::none(),
            render_images: render,
        }
    }

    #[test]
    fn emits_every_step_with_ground_truth() {
        let events: Vec<_> = SimulatedSource::new(config(true)).unwrap().map(Result::unwrap).collect();
        assert_eq!(events.len(), 20);
        for e in &events {
            assert_eq!(Some(e.pose), e.ground_truth);
            assert_eq!(e.image.dimensions(), (160, 120));
            let vis = e.landmarks_visible.as_ref().unwrap();
            assert!(!vis.is_empty());
            assert_eq!(vis.len(), e.map_points.as_ref().unwrap().len());
        }
    }

    #[test]
    fn blank_images_shared() {
        let src = SimulatedSource::new(config(false)).unwrap();
        let (a, b) = (src.event(0), src.event(1));
        assert!(Arc::ptr_eq(&a.image, &b.image));
    }
}
