//! Session configuration, loadable from a flat `key = value` text file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use eob_core::buffer::BufferConfig;
use eob_core::geom::{CameraIntrinsics, TransferMode};
use eob_core::rov::DEFAULT_POINT_COUNT;
use eob_core::sim::{NoiseModel, PlanarParams, SplineParams, TrajectoryKind, DEFAULT_PAIRING_TOLERANCE};
use eob_core::synthesis::RenderConfig;
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7700";
pub const DEFAULT_JPEG_QUALITY: u8 = 85;
/// Gap between the camera and the nose of the mounted robot model.
pub const DEFAULT_MOUNT_GAP: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTrajectory {
    Planar,
    Smooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSource {
    pub steps: usize,
    pub trajectory: SimTrajectory,
    pub landmarks: usize,
    pub scene_seed: u64,
    pub noise: NoiseModel,
    /// Emission rate; 0 emits as fast as frames are produced.
    pub rate_hz: f64,
}

impl Default for SimulateSource {
    fn default() -> Self {
        Self {
            steps: 500,
            trajectory: SimTrajectory::Smooth,
            landmarks: 150,
            scene_seed: 7,
            noise: NoiseModel::none(),
            rate_hz: 25.0,
        }
    }
}

impl SimulateSource {
    /// Trajectory generator and path length for this source.
    pub fn trajectory_kind(&self) -> (TrajectoryKind, f64) {
        match self.trajectory {
            SimTrajectory::Planar => {
                let p = PlanarParams::default();
                let length = p.linear_velocity * p.dt * self.steps as f64;
                (TrajectoryKind::Planar2Dof(p), length)
            }
            SimTrajectory::Smooth => {
                // About one unit of travel per 100 steps.
                let length = (self.steps as f64 / 100.0).max(1.0);
                let waypoints = (length.ceil() as usize + 1).max(3);
                (TrajectoryKind::Smooth6Dof(SplineParams::corridor(length, waypoints)), length)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySourceConfig {
    pub trajectory: PathBuf,
    pub images: PathBuf,
    pub tolerance: f64,
    /// Pace replay by the recorded timestamps instead of emitting at once.
    pub realtime: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceConfig {
    Simulate(SimulateSource),
    Replay(ReplaySourceConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub listen: String,
    pub buffer: BufferConfig,
    pub render: RenderConfig,
    pub intrinsics: CameraIntrinsics,
    pub source: SourceConfig,
    /// Robot model file (`.ply` / `.obj`); the built-in model when absent.
    pub mesh: Option<PathBuf>,
    pub points: usize,
    pub mesh_seed: u64,
    pub mount_gap: f64,
    pub jpeg_quality: u8,
    pub map_history: usize,
    /// Delay ingest until this many clients are connected.
    pub wait_for_clients: usize,
    /// Keep serving requests this long after the source is exhausted.
    pub linger: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.into(),
            buffer: BufferConfig::default(),
            render: RenderConfig::default(),
            intrinsics: CameraIntrinsics::vga(),
            source: SourceConfig::Simulate(SimulateSource::default()),
            mesh: None,
            points: DEFAULT_POINT_COUNT,
            mesh_seed: 0,
            mount_gap: DEFAULT_MOUNT_GAP,
            jpeg_quality: DEFAULT_JPEG_QUALITY,
            map_history: eob_core::map::DEFAULT_MAP_HISTORY,
            wait_for_clients: 0,
            linger: Duration::ZERO,
        }
    }
}

fn transfer_mode_name(m: TransferMode) -> &'static str {
    match m {
        TransferMode::Standard => "standard",
        TransferMode::Literal => "literal",
    }
}

pub fn parse_transfer_mode(s: &str) -> Result<TransferMode, String> {
    match s {
        "standard" => Ok(TransferMode::Standard),
        "literal" => Ok(TransferMode::Literal),
        _ => Err(format!("transfer mode must be `standard` or `literal`, got `{s}`")),
    }
}

impl SessionConfig {
    pub fn transfer_mode_name(&self) -> &'static str {
        transfer_mode_name(self.render.transfer_mode)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match self.listen.rsplit_once(':').map(|(_, p)| p.parse::<u16>()) {
            Some(Ok(p)) if p >= 1 => {}
            _ => return bad(format!("listen address `{}` needs a port in 1..=65535", self.listen)),
        }
        self.buffer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.render.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.intrinsics.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.points == 0 {
            return bad("points must be positive".into());
        }
        if !(self.mount_gap >= 0.0 && self.mount_gap.is_finite()) {
            return bad("mount_gap must be non-negative".into());
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return bad("jpeg_quality must be in 1..=100".into());
        }
        if self.map_history == 0 {
            return bad("map_history must be positive".into());
        }
        match &self.source {
            SourceConfig::Simulate(s) => {
                s.noise.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if s.steps < 2 {
                    return bad("sim_steps must be at least 2".into());
                }
                if !(s.rate_hz >= 0.0 && s.rate_hz.is_finite()) {
                    return bad("rate_hz must be non-negative".into());
                }
            }
            SourceConfig::Replay(r) => {
                if !(r.tolerance >= 0.0) {
                    return bad("pairing_tolerance must be non-negative".into());
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut sim = SimulateSource::default();
        let mut source_kind = "simulate".to_string();
        let mut replay_traj = None;
        let mut replay_images = None;
        let mut tolerance = DEFAULT_PAIRING_TOLERANCE;
        let mut realtime = false;
        let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
        let (mut width, mut height) = (None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Parse { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! num {
                () => {
                    value
                        .parse()
                        .map_err(|_| err(format!("invalid value `{value}` for `{key}`")))?
                };
            }
            match key {
                "listen" => cfg.listen = value.into(),
                "buffer_size" => cfg.buffer.capacity = num!(),
                "pose_threshold" => cfg.buffer.pose_threshold = num!(),
                "lambda1" => cfg.render.lambda1 = num!(),
                "lambda2" => cfg.render.lambda2 = num!(),
                "point_radius" => cfg.render.point_radius = num!(),
                "transfer_mode" => cfg.render.transfer_mode = parse_transfer_mode(value).map_err(err)?,
                "fx" => fx = Some(num!()),
                "fy" => fy = Some(num!()),
                "cx" => cx = Some(num!()),
                "cy" => cy = Some(num!()),
                "width" => width = Some(num!()),
                "height" => height = Some(num!()),
                "mesh" => cfg.mesh = Some(PathBuf::from(value)),
                "points" => cfg.points = num!(),
                "mesh_seed" => cfg.mesh_seed = num!(),
                "mount_gap" => cfg.mount_gap = num!(),
                "jpeg_quality" => cfg.jpeg_quality = num!(),
                "map_history" => cfg.map_history = num!(),
                "wait_for_clients" => cfg.wait_for_clients = num!(),
                "linger_secs" => {
                    let s: f64 = num!();
                    cfg.linger = Duration::try_from_secs_f64(s).map_err(|e| err(e.to_string()))?;
                }
                "source" => match value {
                    "simulate" | "replay" => source_kind = value.into(),
                    _ => return Err(err(format!("source must be `simulate` or `replay`, got `{value}`"))),
                },
                "trajectory" => replay_traj = Some(PathBuf::from(value)),
                "images" => replay_images = Some(PathBuf::from(value)),
                "pairing_tolerance" => tolerance = num!(),
                "realtime" => realtime = num!(),
                "sim_steps" => sim.steps = num!(),
                "sim_trajectory" => {
                    sim.trajectory = match value {
                        "planar" => SimTrajectory::Planar,
                        "smooth" => SimTrajectory::Smooth,
                        _ => return Err(err(format!("sim_trajectory must be `planar` or `smooth`, got `{value}`"))),
                    }
                }
                "sim_landmarks" => sim.landmarks = num!(),
                "sim_seed" => sim.scene_seed = num!(),
                "noise_seed" => sim.noise.seed = num!(),
                "sigma_t" => sim.noise.sigma_t = num!(),
                "sigma_r" => sim.noise.sigma_r = num!(),
                "rate_hz" => sim.rate_hz = num!(),
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        if fx.is_some() || fy.is_some() || cx.is_some() || cy.is_some() || width.is_some() || height.is_some() {
            let w = width.unwrap_or(cfg.intrinsics.width);
            let h = height.unwrap_or(cfg.intrinsics.height);
            let base = cfg.intrinsics.scaled(w, h);
            cfg.intrinsics = CameraIntrinsics::new(
                fx.unwrap_or(base.fx),
                fy.unwrap_or(base.fy),
                cx.unwrap_or(base.cx),
                cy.unwrap_or(base.cy),
                w,
                h,
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        cfg.source = if source_kind == "replay" {
            SourceConfig::Replay(ReplaySourceConfig {
                trajectory: replay_traj
                    .ok_or_else(|| ConfigError::Invalid("replay source needs `trajectory`".into()))?,
                images: replay_images.ok_or_else(|| ConfigError::Invalid("replay source needs `images`".into()))?,
                tolerance,
                realtime,
            })
        } else {
            SourceConfig::Simulate(sim)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes to the text format accepted by [`SessionConfig::parse`].
    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let mut lines = vec![
            format!("listen = {}", self.listen),
            format!("buffer_size = {}", self.buffer.capacity),
            format!("pose_threshold = {}", self.buffer.pose_threshold),
            format!("lambda1 = {}", self.render.lambda1),
            format!("lambda2 = {}", self.render.lambda2),
            format!("point_radius = {}", self.render.point_radius),
            format!("transfer_mode = {}", self.transfer_mode_name()),
            format!("width = {}", k.width),
            format!("height = {}", k.height),
            format!("fx = {}", k.fx),
            format!("fy = {}", k.fy),
            format!("cx = {}", k.cx),
            format!("cy = {}", k.cy),
            format!("points = {}", self.points),
            format!("mesh_seed = {}", self.mesh_seed),
            format!("mount_gap = {}", self.mount_gap),
            format!("jpeg_quality = {}", self.jpeg_quality),
            format!("map_history = {}", self.map_history),
            format!("wait_for_clients = {}", self.wait_for_clients),
            format!("linger_secs = {}", self.linger.as_secs_f64()),
        ];
        if let Some(m) = &self.mesh {
            lines.push(format!("mesh = {}", m.display()));
        }
        match &self.source {
            SourceConfig::Simulate(s) => {
                lines.push("source = simulate".into());
                lines.push(format!("sim_steps = {}", s.steps));
                lines.push(format!(
                    "sim_trajectory = {}",
                    match s.trajectory {
                        SimTrajectory::Planar => "planar",
                        SimTrajectory::Smooth => "smooth",
                    }
                ));
                lines.push(format!("sim_landmarks = {}", s.landmarks));
                lines.push(format!("sim_seed = {}", s.scene_seed));
                lines.push(format!("noise_seed = {}", s.noise.seed));
                lines.push(format!("sigma_t = {}", s.noise.sigma_t));
                lines.push(format!("sigma_r = {}", s.noise.sigma_r));
                lines.push(format!("rate_hz = {}", s.rate_hz));
            }
            SourceConfig::Replay(r) => {
                lines.push("source = replay".into());
                lines.push(format!("trajectory = {}", r.trajectory.display()));
                lines.push(format!("images = {}", r.images.display()));
                lines.push(format!("pairing_tolerance = {}", r.tolerance));
                lines.push(format!("realtime = {}", r.realtime));
            }
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
