//! Command-line front end of the `eob` binary.

use std::ffi::OsString;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eob_core::geom::CameraIntrinsics;
use eob_core::sim::{
    load_image_dir, pair_by_timestamp, read_associations, read_trajectory, write_dataset, write_trajectory,
    NoiseModel, ReplayOptions, ReplaySource, Scene, SimulatedSource, SimulationConfig, DEFAULT_PAIRING_TOLERANCE,
};
use eob_core::validation::format_g;

use crate::artifacts::{write_validation_artifacts, ValidateOptions};
use crate::config::{
    parse_transfer_mode, ReplaySourceConfig, SessionConfig, SimTrajectory, SimulateSource, SourceConfig,
};
use crate::session::{self, SessionReport, SessionStatus};

#[derive(Debug, Parser)]
#[command(
    name = "eob",
    version,
    about = "Third-person (exocentric) views for teleoperated underwater vehicles",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stream ego frames, map snapshots and exo views to clients.
    Serve(ServeArgs),
    /// Check that a trajectory file and an image directory pair up.
    ReplayCheck(ReplayCheckArgs),
    /// Produce the reprojection curve, cube overlay and logo projection.
    Validate(ValidateArgs),
    /// Run a simulated session without waiting for clients.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceKind {
    Simulate,
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Planar,
    Smooth,
}

impl From<TrajectoryArg> for SimTrajectory {
    fn from(t: TrajectoryArg) -> Self {
        match t {
            TrajectoryArg::Planar => SimTrajectory::Planar,
            TrajectoryArg::Smooth => SimTrajectory::Smooth,
        }
    }
}

/// Options shared by `serve` and `simulate`. Every flag overrides the
/// config file, which overrides the built-in defaults.
#[derive(Debug, Args)]
struct SessionArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame buffer capacity [default: 100].
    #[arg(long)]
    buffer_size: Option<usize>,
    /// Minimum camera translation for a frame to be buffered [default: 0.001].
    #[arg(long)]
    pose_threshold: Option<f64>,
    /// Points sampled from the robot model [default: 10000].
    #[arg(long)]
    points: Option<usize>,
    /// Homogeneous projection scale [default: 1.0].
    #[arg(long)]
    lambda1: Option<f64>,
    /// Model-to-map scale [default: 1.0].
    #[arg(long)]
    lambda2: Option<f64>,
    /// Splat radius in pixels [default: 2].
    #[arg(long)]
    point_radius: Option<u32>,
    /// `standard` or `literal` point transfer [default: standard].
    #[arg(long)]
    transfer_mode: Option<String>,
    /// Robot model (.ply or .obj); a built-in model otherwise.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    jpeg_quality: Option<u8>,
    /// Simulated steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    sim_trajectory: Option<TrajectoryArg>,
    #[arg(long)]
    landmarks: Option<usize>,
    #[arg(long)]
    scene_seed: Option<u64>,
    /// Per-step translation drift of the simulated odometry.
    #[arg(long)]
    sigma_t: Option<f64>,
    /// Per-step rotation drift (radians).
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Simulated frame rate; 0 runs unpaced.
    #[arg(long)]
    rate_hz: Option<f64>,
    /// Write the per-event log as CSV.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Address to listen on [default: 127.0.0.1:7700].
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, value_enum)]
    source: Option<SourceKind>,
    /// Trajectory file (`timestamp tx ty tz qx qy qz qw`) for replay.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Directory of timestamp-named PNG frames for replay.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Pose/image pairing tolerance in seconds [default: 0.02].
    #[arg(long)]
    tolerance: Option<f64>,
    /// Pace replay by the recorded timestamps.
    #[arg(long)]
    realtime: bool,
    /// Start the source only after this many clients connected.
    #[arg(long)]
    wait_for_clients: Option<usize>,
    /// Keep serving this many seconds after the source ends.
    #[arg(long)]
    linger_secs: Option<f64>,
}

#[derive(Debug, Args)]
struct ReplayCheckArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PAIRING_TOLERANCE)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Output directory.
    #[arg(long, default_value = "validation")]
    out: PathBuf,
    /// EOB distances to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = [70usize, 140, 200, 260])]
    sweep: Vec<usize>,
    #[arg(long, default_value_t = 1500)]
    steps: usize,
    #[arg(long, default_value_t = 6.0)]
    path_length: f64,
    #[arg(long, default_value_t = 300)]
    landmarks: usize,
    #[arg(long, default_value_t = 7)]
    scene_seed: u64,
    #[arg(long, default_value_t = 0.005)]
    sigma_t: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    anchor_stride: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Also write the simulated flight as a replayable dataset.
    #[arg(long)]
    record: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::ReplayCheck(a) => replay_check(a),
        Command::Validate(a) => validate(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn base_config(args: &SessionArgs) -> Result<SessionConfig, String> {
    let mut cfg = match &args.config {
        Some(p) => SessionConfig::load(p).map_err(|e| e.to_string())?,
        None => SessionConfig::default(),
    };
    if let Some(v) = args.buffer_size {
        cfg.buffer.capacity = v;
    }
    if let Some(v) = args.pose_threshold {
        cfg.buffer.pose_threshold = v;
    }
    if let Some(v) = args.points {
        cfg.points = v;
    }
    if let Some(v) = args.lambda1 {
        cfg.render.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        cfg.render.lambda2 = v;
    }
    if let Some(v) = args.point_radius {
        cfg.render.point_radius = v;
    }
    if let Some(v) = &args.transfer_mode {
        cfg.render.transfer_mode = parse_transfer_mode(v)?;
    }
    if let Some(v) = &args.mesh {
        cfg.mesh = Some(v.clone());
    }
    if let Some(v) = args.jpeg_quality {
        cfg.jpeg_quality = v;
    }
    Ok(cfg)
}

fn apply_sim_args(args: &SessionArgs, sim: &mut SimulateSource) {
    if let Some(v) = args.steps {
        sim.steps = v;
    }
    if let Some(v) = args.sim_trajectory {
        sim.trajectory = v.into();
    }
    if let Some(v) = args.landmarks {
        sim.landmarks = v;
    }
    if let Some(v) = args.scene_seed {
        sim.scene_seed = v;
    }
    if let Some(v) = args.sigma_t {
        sim.noise.sigma_t = v;
    }
    if let Some(v) = args.sigma_r {
        sim.noise.sigma_r = v;
    }
    if let Some(v) = args.noise_seed {
        sim.noise.seed = v;
    }
    if let Some(v) = args.rate_hz {
        sim.rate_hz = v;
    }
}

fn print_report(report: &SessionReport, event_log: Option<&Path>) -> Result<i32, String> {
    println!(
        "session {}: {} events, {} admitted, {} client(s), {} exo request(s)",
        report.status.as_str(),
        report.events.len(),
        report.admitted,
        report.clients_served,
        report.exo_requests
    );
    if let Some(ms) = report.mean_latency_ms {
        println!("mean exo latency: {ms:.2} ms");
    }
    if let Some(path) = event_log {
        report.write_event_log(path).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("event log: {}", path.display());
    }
    match report.status {
        SessionStatus::Complete | SessionStatus::Stopped => Ok(0),
        SessionStatus::Failed => Err(report.error.clone().unwrap_or_else(|| "session failed".into())),
    }
}

fn serve(a: ServeArgs) -> Result<i32, String> {
    let mut cfg = base_config(&a.session)?;
    if let Some(l) = &a.listen {
        cfg.listen = l.clone();
    }
    let replay = match a.source {
        Some(SourceKind::Replay) => true,
        Some(SourceKind::Simulate) => false,
        None => a.trajectory.is_some() || matches!(cfg.source, SourceConfig::Replay(_)),
    };
    if replay {
        let existing = match &cfg.source {
            SourceConfig::Replay(r) => Some(r.clone()),
            SourceConfig::Simulate(_) => None,
        };
        let trajectory = a
            .trajectory
            .clone()
            .or_else(|| existing.as_ref().map(|r| r.trajectory.clone()))
            .ok_or("replay needs --trajectory")?;
        let images = a
            .images
            .clone()
            .or_else(|| existing.as_ref().map(|r| r.images.clone()))
            .ok_or("replay needs --images")?;
        cfg.source = SourceConfig::Replay(ReplaySourceConfig {
            trajectory,
            images,
            tolerance: a
                .tolerance
                .or(existing.as_ref().map(|r| r.tolerance))
                .unwrap_or(DEFAULT_PAIRING_TOLERANCE),
            realtime: a.realtime || existing.is_some_and(|r| r.realtime),
        });
    } else {
        let mut sim = match &cfg.source {
            SourceConfig::Simulate(s) => s.clone(),
            SourceConfig::Replay(_) => SimulateSource::default(),
        };
        apply_sim_args(&a.session, &mut sim);
        cfg.source = SourceConfig::Simulate(sim);
    }
    if let Some(n) = a.wait_for_clients {
        cfg.wait_for_clients = n;
    }
    if let Some(s) = a.linger_secs {
        cfg.linger = Duration::try_from_secs_f64(s).map_err(|e| format!("--linger-secs: {e}"))?;
    }
    let handle = session::start(cfg).map_err(|e| e.to_string())?;
    println!("listening on {}", handle.local_addr());
    print_report(&handle.wait(), a.session.event_log.as_deref())
}

fn simulate(a: SimulateArgs) -> Result<i32, String> {
    let mut cfg = base_config(&a.session)?;
    let mut sim = match &cfg.source {
        SourceConfig::Simulate(s) => s.clone(),
        SourceConfig::Replay(_) => SimulateSource::default(),
    };
    // Unpaced unless a rate is asked for explicitly.
    if a.session.rate_hz.is_none() {
        sim.rate_hz = 0.0;
    }
    apply_sim_args(&a.session, &mut sim);
    cfg.source = SourceConfig::Simulate(sim.clone());
    if let Some(dir) = &a.record {
        record_dataset(&sim, &cfg.intrinsics, dir)?;
        println!("recorded {} frames to {}", sim.steps, dir.display());
    }
    let listener = TcpListener::bind(&a.listen).map_err(|e| format!("{}: {e}", a.listen))?;
    let handle = session::start_with_listener(cfg, listener).map_err(|e| e.to_string())?;
    println!("listening on {}", handle.local_addr());
    print_report(&handle.wait(), a.session.event_log.as_deref())
}

/// Writes the simulated flight as a replay dataset plus its ground truth and
/// scene description.
fn record_dataset(sim: &SimulateSource, k: &CameraIntrinsics, dir: &Path) -> Result<(), String> {
    let (trajectory, length) = sim.trajectory_kind();
    let scene = Scene::corridor(sim.landmarks, -1.0, length + 15.0, sim.scene_seed);
    let source = SimulatedSource::new(SimulationConfig {
        trajectory,
        steps: sim.steps,
        scene: scene.clone(),
        intrinsics: *k,
        noise: sim.noise,
        render_images: true,
    })
    .map_err(|e| e.to_string())?;
    let truth = source.ground_truth().to_vec();
    let events = source.collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    write_dataset(dir, events.iter().map(|e| (e.pose, &*e.image))).map_err(|e| e.to_string())?;
    write_trajectory(&dir.join("groundtruth.txt"), &truth).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("scene.txt"), scene.to_text()).map_err(|e| e.to_string())?;
    Ok(())
}

fn replay_check(a: ReplayCheckArgs) -> Result<i32, String> {
    let traj = read_trajectory(&a.trajectory).map_err(|e| e.to_string())?;
    let images = load_image_dir(&a.images).map_err(|e| e.to_string())?;
    println!("poses: {}", traj.poses.len());
    println!("normalized quaternions: {}", traj.normalized_quaternions);
    println!("images: {}", images.len());
    let assoc = [a.images.join("associations.txt"), a.images.join("../associations.txt")]
        .into_iter()
        .find(|p| p.exists());
    match &assoc {
        Some(p) => {
            let n = read_associations(p).map_err(|e| e.to_string())?.len();
            println!("associations: {} ({n} entries)", p.display());
        }
        None => {
            let pairing = pair_by_timestamp(&traj.poses, &images, a.tolerance);
            println!(
                "nearest-timestamp pairing (tolerance {}s): {} paired, {} unmatched",
                format_g(a.tolerance),
                pairing.pairs.len(),
                pairing.unmatched
            );
        }
    }
    let source = match ReplaySource::open(&a.trajectory, &a.images, ReplayOptions { tolerance: a.tolerance }) {
        Ok(s) => s,
        Err(e) => {
            println!("FAIL: {e}");
            return Ok(1);
        }
    };
    let mut sizes = std::collections::BTreeMap::new();
    for (_, path) in source.pairs() {
        match image::image_dimensions(path) {
            Ok(d) => *sizes.entry(d).or_insert(0usize) += 1,
            Err(e) => {
                println!("FAIL: {}: {e}", path.display());
                return Ok(1);
            }
        }
    }
    println!("replayable frames: {} ({} unmatched)", source.len(), source.unmatched());
    for ((w, h), n) in &sizes {
        println!("frame size {w}x{h}: {n}");
    }
    if sizes.len() > 1 {
        println!("FAIL: frames have mixed sizes");
        return Ok(1);
    }
    println!("OK");
    Ok(0)
}

fn validate(a: ValidateArgs) -> Result<i32, String> {
    let opts = ValidateOptions {
        sweep: a.sweep,
        steps: a.steps,
        path_length: a.path_length,
        landmarks: a.landmarks,
        scene_seed: a.scene_seed,
        noise: NoiseModel {
            sigma_t: a.sigma_t,
            sigma_r: a.sigma_r,
            seed: a.seed,
        },
        anchor_stride: a.anchor_stride,
        ..ValidateOptions::default()
    };
    let summary = write_validation_artifacts(&opts, &a.out).map_err(|e| e.to_string())?;
    println!("f,mean_error_px,max_error_px,count");
    for s in &summary.curve.samples {
        println!(
            "{},{},{},{}",
            s.f,
            format_g(s.mean_error_px),
            format_g(s.max_error_px),
            s.count
        );
    }
    match summary.kendall_tau {
        Some(t) => println!("kendall tau (f vs mean error): {}", format_g(t)),
        None => println!("kendall tau: undefined"),
    }
    println!("logo corner error: {} px", format_g(summary.logo_corner_error_px));
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}
