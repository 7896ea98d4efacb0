//! Offline validation products: the reprojection-error curve over EOB
//! distance, a ground-plane cube overlay and a tag/logo projection.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use eob_core::buffer::{BufferConfig, BufferError, PoseBuffer};
use eob_core::geom::{CameraIntrinsics, Pose};
use eob_core::rov::{builtin_rov_mesh, mount_behind_camera, sample_point_cloud, MeshError, DEFAULT_POINT_COUNT};
use eob_core::sim::{
    NoiseModel, Scene, SimError, SimulatedSource, SimulationConfig, SplineParams, SquareTag, TrajectoryKind,
};
use eob_core::synthesis::{synthesize_exo, ExoView, RenderConfig, SynthesisError};
use eob_core::validation::{
    anchors, build_synthetic_run, estimate_ground_plane, make_logo, project_logo, render_ground_plane_cube,
    render_tag_views, sweep_eob_anchored, ErrorCurve, SyntheticRunConfig, TagViews, ValidationError,
};
use nalgebra::Vector3;
use thiserror::Error;


#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("writing {path}: {message}")]
    Write { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOptions {
    /// EOB distances to sweep, strictly increasing.
    pub sweep: Vec<usize>,
    pub steps: usize,
    pub path_length: f64,
    pub landmarks: usize,
    pub scene_seed: u64,
    pub noise: NoiseModel,
    /// Stride between pooled current frames.
    pub anchor_stride: usize,
    /// EOB distance used for the rendered cube and logo views.
    pub view_distance: usize,
    pub cube_size: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            sweep: vec![70, 140, 200, 260],
            steps: 1500,
            path_length: 6.0,
            landmarks: 300,
            scene_seed: 7,
            noise: NoiseModel {
                sigma_t: 0.005,
                sigma_r: 0.0,
                seed: 0,
            },
            anchor_stride: 10,
            view_distance: 70,
            cube_size: 0.5,
        }
    }
}

/// Pooled reprojection error per EOB distance on a noisy synthetic flight.
pub fn reprojection_curve(opts: &ValidateOptions) -> Result<ErrorCurve, ArtifactError> {
    let f_max = *opts
        .sweep
        .iter()
        .max()
        .ok_or_else(|| ValidationError::InvalidInput("empty sweep".into()))?;
    let run_cfg = SyntheticRunConfig::corridor(opts.steps, opts.landmarks, opts.path_length, opts.noise, opts.scene_seed);
    let run = build_synthetic_run(&run_cfg)?;
    let anchor_set = anchors(run.snapshot.len(), f_max, opts.anchor_stride);
    Ok(sweep_eob_anchored(
        &run.snapshot,
        &run.annotations,
        &opts.sweep,
        &anchor_set,
        &run.intrinsics,
        &RenderConfig::default(),
    )?)
}

/// Exo view from a short rendered corridor flight plus the poses it used.
pub struct RenderedExo {
    pub exo: ExoView,
    pub poses: Vec<Pose>,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
}

/// Flies a rendered, noise-free corridor segment and synthesizes the exo
/// view `distance` frames back from the last frame.
pub fn rendered_exo(distance: usize, scene_seed: u64) -> Result<RenderedExo, ArtifactError> {
    let steps = distance + 60;
    // About 0.02 units per frame puts the robot well in front of the
    // reference camera at typical distances.
    let length = 0.02 * steps as f64;
    let waypoints = (length.ceil() as usize + 1).max(3);
    let k = CameraIntrinsics::vga();
    let source = SimulatedSource::new(SimulationConfig {
        trajectory: TrajectoryKind::Smooth6Dof(SplineParams::corridor(length, waypoints)),
        steps,
        scene: Scene::corridor(120, -1.0, length + 15.0, scene_seed),
        intrinsics: k,
        noise: NoiseModel::none(),
        render_images: true,
    })?;
    let scene = source.scene().clone();
    let poses = source.estimated().to_vec();
    let mut buffer = PoseBuffer::new(
        BufferConfig {
            capacity: steps,
            ..BufferConfig::default()
        },
        k.width,
        k.height,
    )?;
    for event in source {
        let event = event?;
        buffer.offer(event.pose, Arc::clone(&event.image))?;
    }
    let cloud = mount_behind_camera(&sample_point_cloud(&builtin_rov_mesh(), DEFAULT_POINT_COUNT, 0)?, 0.1);
    let exo = synthesize_exo(&buffer.snapshot(), distance, &cloud, &k, &RenderConfig::default())?;
    Ok(RenderedExo {
        exo,
        poses,
        scene,
        intrinsics: k,
    })
}

/// A horizontal tag floating below the ego camera's optical axis, `ahead`
/// units in front of it.
pub fn tag_ahead_of(pose: &Pose, ahead: f64, drop: f64, size: f64) -> SquareTag {
    SquareTag {
        center: pose.center() + pose.forward() * ahead - Vector3::z() * drop,
        size,
    }
}

/// Result of the logo chain: rendered tag views and the projected logo.
pub struct LogoCheck {
    pub views: TagViews,
    pub projection: eob_core::validation::LogoProjection,
    /// Largest distance between a logo corner carried through the
    /// homographies and the analytic tag-corner projection in the exo frame.
    pub max_corner_error_px: f64,
}

pub fn logo_check(scene: &Scene, ego: &Pose, exo: &Pose, intrinsics: &CameraIntrinsics) -> Result<LogoCheck, ArtifactError> {
    let tag = tag_ahead_of(ego, 3.0, 0.5, 0.6);
    let views = render_tag_views(scene, &tag, ego, exo, intrinsics)?;
    let logo = make_logo(128, 128);
    let projection = project_logo(&views.ego_image, &views.exo_image, &views.ego_corners, &views.exo_corners, &logo)?;
    let max_corner_error_px = projection
        .exo_corners
        .iter()
        .zip(&views.exo_corners)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    Ok(LogoCheck {
        views,
        projection,
        max_corner_error_px,
    })
}

#[derive(Debug, Clone)]
pub struct ValidationSummary {
    pub curve: ErrorCurve,
    pub kendall_tau: Option<f64>,
    pub logo_corner_error_px: f64,
    pub files: Vec<PathBuf>,
}

fn save_png(path: &Path, img: &image::RgbImage, files: &mut Vec<PathBuf>) -> Result<(), ArtifactError> {
    img.save(path).map_err(|e| ArtifactError::Write {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    files.push(path.to_owned());
    Ok(())
}

fn save_text(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<(), ArtifactError> {
    std::fs::write(path, text).map_err(|e| ArtifactError::Write {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    files.push(path.to_owned());
    Ok(())
}

/// Writes `reprojection.csv`, `reprojection.svg`, `exo.png`,
/// `ground_plane_cube.png`, `logo_ego.png` and `logo_exo.png` to `out`.
pub fn write_validation_artifacts(opts: &ValidateOptions, out: &Path) -> Result<ValidationSummary, ArtifactError> {
    std::fs::create_dir_all(out).map_err(|e| ArtifactError::Write {
        path: out.to_owned(),
        message: e.to_string(),
    })?;
    let mut files = Vec::new();
    let curve = reprojection_curve(opts)?;
    save_text(&out.join("reprojection.csv"), &curve.to_csv(), &mut files)?;
    let title = format!(
        "Reprojection error vs EOB distance (sigma_t = {}, seed {})",
        opts.noise.sigma_t, opts.noise.seed
    );
    save_text(&out.join("reprojection.svg"), &curve.to_svg(&title), &mut files)?;

    let rendered = rendered_exo(opts.view_distance, opts.scene_seed)?;
    save_png(&out.join("exo.png"), &rendered.exo.image, &mut files)?;
    let ground = rendered.scene.ground.map_or(-1.0, |g| g.height);
    let mean_z = rendered.poses.iter().map(|p| p.center().z).sum::<f64>() / rendered.poses.len() as f64;
    let plane = estimate_ground_plane(&rendered.poses, mean_z - ground)?;
    let cube = render_ground_plane_cube(&rendered.exo, &plane, opts.cube_size, &rendered.intrinsics)?;
    save_png(&out.join("ground_plane_cube.png"), &cube.image, &mut files)?;

    let logo = logo_check(
        &rendered.scene,
        &rendered.exo.current_pose,
        &rendered.exo.reference_pose,
        &rendered.intrinsics,
    )?;
    save_png(&out.join("logo_ego.png"), &logo.projection.ego, &mut files)?;
    save_png(&out.join("logo_exo.png"), &logo.projection.exo, &mut files)?;
    Ok(ValidationSummary {
        kendall_tau: curve.kendall_tau(),
        curve,
        logo_corner_error_px: logo.max_corner_error_px,
        files,
    })
}
