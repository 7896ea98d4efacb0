//! Geometric-accuracy harness: reprojection error against EOB distance,
//! ground-plane estimation with a reference cube, and homography-based logo
//! projection onto a planar tag.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use thiserror::Error;

use crate::buffer::{BufferConfig, BufferError, BufferSnapshot, PoseBuffer};
use crate::geom::{
    composite_over, estimate_homography, fit_plane, project_points, transfer_points, warp_image, CameraIntrinsics,
    GeomError, Homography, Plane, Point3Set, Pose, Region,
};
use crate::raster::draw_segment_3d;
use crate::sim::{
    render_scene, NoiseModel, Scene, SimError, SimulatedSource, SimulationConfig, SplineParams, SquareTag,
    TrajectoryKind,
};
use crate::synthesis::{ExoView, RenderConfig};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ValidationError {
    ValidationError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Annotations and reprojection error
// ---------------------------------------------------------------------------

/// A reference point in one frame: its ground-truth pixel and, optionally,
/// its 3-D position in that frame's camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatedPoint {
    pub id: u64,
    pub pixel: [f64; 2],
    pub camera_point: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceAnnotation {
    pub frame_seq: u64,
    /// Free-form label, e.g. the target the points belong to.
    pub tag: String,
    pub points: Vec<AnnotatedPoint>,
}

impl ReferenceAnnotation {
    pub fn validate(&self, intrinsics: &CameraIntrinsics) -> Result<(), ValidationError> {
        for p in &self.points {
            if !intrinsics.contains(p.pixel) {
                return Err(ValidationError::InvalidInput(format!(
                    "frame {}: point {} at ({}, {}) is outside the image",
                    self.frame_seq, p.id, p.pixel[0], p.pixel[1]
                )));
            }
        }
        Ok(())
    }
}

/// Annotations indexed by frame sequence number.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    by_seq: HashMap<u64, ReferenceAnnotation>,
}

impl AnnotationSet {
    pub fn new(annotations: impl IntoIterator<Item = ReferenceAnnotation>) -> Self {
        Self {
            by_seq: annotations.into_iter().map(|a| (a.frame_seq, a)).collect(),
        }
    }

    pub fn get(&self, seq: u64) -> Option<&ReferenceAnnotation> {
        self.by_seq.get(&seq)
    }

    pub fn insert(&mut self, annotation: ReferenceAnnotation) {
        self.by_seq.insert(annotation.frame_seq, annotation);
    }

    pub fn len(&self) -> usize {
        self.by_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_seq.is_empty()
    }

    /// Text form: one point per line, `frame_seq tag id u v [x y z]`.
    pub fn to_text(&self) -> String {
        let mut seqs: Vec<_> = self.by_seq.keys().copied().collect();
        seqs.sort_unstable();
        let mut out = String::from("# frame_seq tag id u v [x y z]\n");
        for seq in seqs {
            let a = &self.by_seq[&seq];
            for p in &a.points {
                let _ = write!(out, "{} {} {} {} {}", seq, a.tag, p.id, p.pixel[0], p.pixel[1]);
                if let Some(c) = p.camera_point {
                    let _ = write!(out, " {} {} {}", c.x, c.y, c.z);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ValidationError> {
        let mut set = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| ValidationError::InvalidInput(format!("annotation line {}: {m}", i + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 5 && toks.len() != 8 {
                return Err(bad("expected `frame_seq tag id u v [x y z]`"));
            }
            let seq: u64 = toks[0].parse().map_err(|_| bad("invalid frame_seq"))?;
            let id: u64 = toks[2].parse().map_err(|_| bad("invalid id"))?;
            let nums: Vec<f64> = toks[3..]
                .iter()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("invalid number"))?;
            let entry = set.by_seq.entry(seq).or_insert_with(|| ReferenceAnnotation {
                frame_seq: seq,
                tag: toks[1].to_string(),
                points: Vec::new(),
            });
            entry.points.push(AnnotatedPoint {
                id,
                pixel: [nums[0], nums[1]],
                camera_point: (nums.len() == 5).then(|| Vector3::new(nums[2], nums[3], nums[4])),
            });
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointError {
    pub id: u64,
    pub error_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl ErrorSummary {
    fn of(errors: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        for e in errors {
            sum += e;
            max = max.max(e);
            count += 1;
        }
        (count > 0).then(|| Self {
            mean: sum / count as f64,
            max,
            count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionReport {
    pub f: usize,
    pub current_seq: u64,
    pub reference_seq: u64,
    pub clamped: bool,
    pub per_point: Vec<PointError>,
    /// Points shared by both frames whose transfer landed behind the
    /// reference camera (not scored).
    pub culled: usize,
    /// `None` when no annotated point is shared by the two frames.
    pub summary: Option<ErrorSummary>,
}

impl ReprojectionReport {
    pub fn is_empty(&self) -> bool {
        self.summary.is_none()
    }
}

/// Reprojection error with the newest snapshot frame as current.
pub fn reprojection_error(
    snapshot: &BufferSnapshot,
    annotations: &AnnotationSet,
    f: usize,
    intrinsics: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<ReprojectionReport, ValidationError> {
    let current = snapshot
        .current_index()
        .ok_or_else(|| ValidationError::NoData("empty snapshot".into()))?;
    reprojection_error_at(snapshot, current, annotations, f, intrinsics, cfg)
}

/// Reprojection error with the snapshot record at `current_index` playing
/// the current frame.
///
/// The current frame's annotated 3-D points (in its camera coordinates) are
/// transferred into the reference camera using the buffered poses,
/// projected, and compared with the reference frame's annotated pixels of the
/// same ids.
pub fn reprojection_error_at(
    snapshot: &BufferSnapshot,
    current_index: usize,
    annotations: &AnnotationSet,
    f: usize,
    intrinsics: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<ReprojectionReport, ValidationError> {
    if f == 0 {
        return Err(ValidationError::InvalidInput("EOB distance must be at least 1".into()));
    }
    let records = snapshot.records();
    let current = records
        .get(current_index)
        .ok_or_else(|| ValidationError::NoData(format!("no record at index {current_index}")))?;
    let (ref_index, clamped) = match current_index.checked_sub(f) {
        Some(i) => (i, false),
        None => (0, true),
    };
    let reference = &records[ref_index];
    let mut report = ReprojectionReport {
        f,
        current_seq: current.seq,
        reference_seq: reference.seq,
        clamped,
        per_point: Vec::new(),
        culled: 0,
        summary: None,
    };
    let (Some(cur_ann), Some(ref_ann)) = (annotations.get(current.seq), annotations.get(reference.seq)) else {
        return Ok(report);
    };
    let truth: HashMap<u64, [f64; 2]> = ref_ann.points.iter().map(|p| (p.id, p.pixel)).collect();
    let (ids, pts): (Vec<u64>, Vec<Vector3<f64>>) = cur_ann
        .points
        .iter()
        .filter(|p| truth.contains_key(&p.id))
        .filter_map(|p| p.camera_point.map(|c| (p.id, c)))
        .unzip();
    let cloud = Point3Set::from_points(pts)?;
    let moved = transfer_points(&cloud, &current.pose, &reference.pose, cfg.transfer_mode);
    let projected = project_points(&moved, intrinsics, cfg.lambda1)?;
    report.culled = ids.len() - projected.len();
    report.per_point = projected
        .iter()
        .map(|p| {
            let id = ids[p.index];
            let t = truth[&id];
            PointError {
                id,
                error_px: ((p.u - t[0]).powi(2) + (p.v - t[1]).powi(2)).sqrt(),
            }
        })
        .collect();
    report.summary = ErrorSummary::of(report.per_point.iter().map(|e| e.error_px));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub f: usize,
    /// NaN when `count == 0`.
    pub mean_error_px: f64,
    /// NaN when `count == 0`.
    pub max_error_px: f64,
    pub count: usize,
}

impl CurveSample {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Reprojection error as a function of EOB distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub samples: Vec<CurveSample>,
}

/// Sweeps EOB distances with the newest frame as current.
pub fn sweep_eob(
    snapshot: &BufferSnapshot,
    annotations: &AnnotationSet,
    f_values: &[usize],
    intrinsics: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<ErrorCurve, ValidationError> {
    let current = snapshot
        .current_index()
        .ok_or_else(|| ValidationError::NoData("empty snapshot".into()))?;
    sweep_eob_anchored(snapshot, annotations, f_values, &[current], intrinsics, cfg)
}

/// Sweeps EOB distances, pooling per-point errors over several current
/// frames (`anchors`, snapshot indices). Anchors closer than `f` to the
/// oldest record are skipped for that `f` rather than clamped.
pub fn sweep_eob_anchored(
    snapshot: &BufferSnapshot,
    annotations: &AnnotationSet,
    f_values: &[usize],
    anchors: &[usize],
    intrinsics: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<ErrorCurve, ValidationError> {
    if f_values.is_empty() {
        return Err(ValidationError::InvalidInput("no EOB distances given".into()));
    }
    if f_values[0] == 0 || f_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ValidationError::InvalidInput(
            "EOB distances must be positive and strictly increasing".into(),
        ));
    }
    let mut samples = Vec::with_capacity(f_values.len());
    for &f in f_values {
        let mut errors = Vec::new();
        let single = anchors.len() == 1;
        for &c in anchors {
            // A lone anchor keeps clamping semantics; pooled sweeps only use
            // exact distances.
            if c < f && !single {
                continue;
            }
            let report = reprojection_error_at(snapshot, c, annotations, f, intrinsics, cfg)?;
            errors.extend(report.per_point.iter().map(|e| e.error_px));
        }
        let s = ErrorSummary::of(errors.iter().copied());
        samples.push(CurveSample {
            f,
            mean_error_px: s.map_or(f64::NAN, |s| s.mean),
            max_error_px: s.map_or(f64::NAN, |s| s.max),
            count: s.map_or(0, |s| s.count),
        });
    }
    Ok(ErrorCurve { samples })
}

/// `printf("%g")`-style formatting with 6 significant digits.
pub fn format_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

impl ErrorCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("f,mean_error_px,max_error_px,count\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.f,
                format_g(s.mean_error_px),
                format_g(s.max_error_px),
                s.count
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ValidationError> {
        std::fs::write(path, self.to_csv()).map_err(|e| io_err(path, e))
    }

    /// Kendall rank correlation between `f` and mean error over non-empty
    /// samples; `+1` means error grows monotonically with distance.
    pub fn kendall_tau(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| (s.f as f64, s.mean_error_px))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let mut score = 0.0;
        let mut pairs = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = (pts[j].0 - pts[i].0) * (pts[j].1 - pts[i].1);
                score += d.signum() * (d != 0.0) as u8 as f64;
                pairs += 1.0;
            }
        }
        Some(score / pairs)
    }

    /// Line chart of mean (solid) and max (dashed) error against `f`.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h) = (640.0, 400.0);
        let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
        let pts: Vec<&CurveSample> = self.samples.iter().filter(|s| !s.is_empty()).collect();
        let f_min = self.samples.first().map_or(0.0, |s| s.f as f64);
        let f_max = self.samples.last().map_or(1.0, |s| s.f as f64).max(f_min + 1.0);
        let y_max = pts
            .iter()
            .map(|s| s.max_error_px)
            .fold(0.0, f64::max)
            .max(1e-9)
            * 1.1;
        let x = |f: f64| left + (f - f_min) / (f_max - f_min) * (w - left - right);
        let y = |e: f64| h - bottom - e / y_max * (h - top - bottom);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            w / 2.0,
            xml_escape(title)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{0}\" stroke=\"black\"/>",
            h - bottom,
            w - right
        );
        for k in 0..=4 {
            let e = y_max * k as f64 / 4.0;
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
                left - 6.0,
                y(e) + 4.0,
                format_g((e * 1000.0).round() / 1000.0)
            );
        }
        for s in &self.samples {
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                x(s.f as f64),
                h - bottom + 18.0,
                s.f
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">EOB distance f (frames)</text>\n<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">reprojection error (px)</text>",
            (left + w - right) / 2.0,
            h - 10.0,
            h / 2.0,
            h / 2.0
        );
        for (series, dash, color) in [(0, "", "#1f77b4"), (1, " stroke-dasharray=\"6 4\"", "#d62728")] {
            let coords: Vec<String> = pts
                .iter()
                .map(|s| {
                    let e = if series == 0 { s.mean_error_px } else { s.max_error_px };
                    format!("{:.2},{:.2}", x(s.f as f64), y(e))
                })
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
                coords.join(" ")
            );
        }
        for s in &pts {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#1f77b4\"/>",
                x(s.f as f64),
                y(s.mean_error_px)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{0}\" y=\"{top}\" fill=\"#1f77b4\">mean</text>\n<text x=\"{0}\" y=\"{1}\" fill=\"#d62728\">max</text>\n</svg>",
            w - right - 60.0,
            top + 16.0
        );
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---------------------------------------------------------------------------
// Ground plane and cube
// ---------------------------------------------------------------------------

/// Least-squares plane through camera centers, oriented with its normal
/// pointing from the ground toward the cameras (against their mean "down"
/// axis) and moved `camera_height` below them.
pub fn estimate_ground_plane(poses: &[Pose], camera_height: f64) -> Result<Plane, ValidationError> {
    if !camera_height.is_finite() {
        return Err(ValidationError::InvalidInput("camera height must be finite".into()));
    }
    let centers: Vec<_> = poses.iter().map(Pose::center).collect();
    let fit = fit_plane(&centers)?;
    let mean_down: Vector3<f64> = poses.iter().map(Pose::down).sum();
    let plane = if fit.plane.normal().dot(&mean_down) > 0.0 {
        fit.plane.flipped()
    } else {
        fit.plane
    };
    Ok(plane.shifted(-camera_height))
}

#[derive(Debug, Clone)]
pub struct CubeOverlay {
    pub image: RgbImage,
    /// Base corners on the plane, in order around the square.
    pub base: [Vector3<f64>; 4],
    pub top: [Vector3<f64>; 4],
}

pub const CUBE_COLOR: [u8; 3] = [60, 255, 60];
/// Farthest optical-axis/plane intersection used as the cube anchor.
pub const CUBE_MAX_ANCHOR_DISTANCE: f64 = 5.0;

/// Draws a wireframe cube of edge `cube_size` resting on `plane`, centered
/// where the reference camera's optical axis meets the plane, or below a
/// point three units ahead when the axis meets it farther than
/// [`CUBE_MAX_ANCHOR_DISTANCE`] (or not at all).
pub fn render_ground_plane_cube(
    exo: &ExoView,
    plane: &Plane,
    cube_size: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<CubeOverlay, ValidationError> {
    if !(cube_size > 0.0 && cube_size.is_finite()) {
        return Err(ValidationError::InvalidInput("cube size must be positive".into()));
    }
    let camera = &exo.reference_pose;
    let center = camera.center();
    // Build "up" toward the camera side of the plane.
    let plane = if plane.signed_distance(&center) < 0.0 {
        plane.flipped()
    } else {
        *plane
    };
    let n = *plane.normal();
    let forward = camera.forward();
    let anchor = match plane.intersect_ray(&center, &forward) {
        Some(s) if s > 0.0 && s <= CUBE_MAX_ANCHOR_DISTANCE => center + forward * s,
        _ => plane.project(&(center + forward * 3.0)),
    };
    let along = |v: Vector3<f64>| (v - n * n.dot(&v)).try_normalize(1e-9);
    let u = along(forward)
        .or_else(|| along(camera.rotation().column(0).into_owned()))
        .expect("camera axes span the plane");
    let v = n.cross(&u);
    let h = cube_size / 2.0;
    let base = [
        anchor - u * h - v * h,
        anchor + u * h - v * h,
        anchor + u * h + v * h,
        anchor - u * h + v * h,
    ];
    let top = base.map(|b| b + n * cube_size);
    let mut image = exo.image.clone();
    for i in 0..4 {
        let j = (i + 1) % 4;
        for (a, b) in [(base[i], base[j]), (top[i], top[j]), (base[i], top[i])] {
            draw_segment_3d(&mut image, intrinsics, camera, &a, &b, CUBE_COLOR, 1);
        }
    }
    Ok(CubeOverlay { image, base, top })
}

// ---------------------------------------------------------------------------
// Logo projection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LogoProjection {
    /// Ego frame with the logo mapped onto the tag.
    pub ego: RgbImage,
    /// Exo frame with the logo transported through the tag homography.
    pub exo: RgbImage,
    /// Ego-tag to exo-tag homography.
    pub tag_homography: Homography,
    /// Logo image to exo frame.
    pub logo_to_exo: Homography,
    /// Logo outer corners mapped into the exo frame.
    pub exo_corners: [[f64; 2]; 4],
    /// Exo pixels covered by the logo.
    pub covered_pixels: usize,
}

/// Outer corners of an image under the pixel-center convention, clockwise
/// from top-left.
pub fn image_corners(width: u32, height: u32) -> [[f64; 2]; 4] {
    let (w, h) = (width as f64 - 0.5, height as f64 - 0.5);
    [[-0.5, -0.5], [w, -0.5], [w, h], [-0.5, h]]
}

fn four_corners(c: &[[f64; 2]], what: &str) -> Result<[[f64; 2]; 4], ValidationError> {
    c.try_into()
        .map_err(|_| ValidationError::InvalidInput(format!("{what}: exactly 4 tag corners required, got {}", c.len())))
}

/// Maps `logo` onto the tag in both frames. The logo's corners go to the ego
/// tag corners (clockwise from top-left in logo space); the ego→exo tag
/// homography carries it into the exo frame.
pub fn project_logo(
    ego_frame: &RgbImage,
    exo_frame: &RgbImage,
    tag_corners_ego: &[[f64; 2]],
    tag_corners_exo: &[[f64; 2]],
    logo: &RgbImage,
) -> Result<LogoProjection, ValidationError> {
    let ego_c = four_corners(tag_corners_ego, "ego frame")?;
    let exo_c = four_corners(tag_corners_exo, "exo frame")?;
    let logo_c = image_corners(logo.width(), logo.height());
    let logo_to_ego = estimate_homography(&logo_c, &ego_c)?;
    let tag_homography = estimate_homography(&ego_c, &exo_c)?;
    let logo_to_exo = tag_homography.then_after(&logo_to_ego);
    let exo_corners = logo_c.map(|c| logo_to_exo.apply(c).unwrap_or([f64::NAN; 2]));
    let paste = |frame: &RgbImage, h: &Homography| {
        let region = Region::of_image(frame.width(), frame.height());
        let patch = warp_image(logo, h, region);
        let mut out = frame.clone();
        let n = composite_over(&mut out, &patch, region);
        (out, n)
    };
    let (ego, _) = paste(ego_frame, &logo_to_ego);
    let (exo, covered_pixels) = paste(exo_frame, &logo_to_exo);
    Ok(LogoProjection {
        ego,
        exo,
        tag_homography,
        logo_to_exo,
        exo_corners,
        covered_pixels,
    })
}

/// A small asymmetric test logo (orientation is readable at a glance).
pub fn make_logo(width: u32, height: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let border = !(0.06..0.94).contains(&u) || !(0.06..0.94).contains(&v);
        // An "F": vertical bar plus two arms pointing right.
        let bar = (0.2..0.35).contains(&u) && (0.15..0.85).contains(&v);
        let arm1 = (0.2..0.8).contains(&u) && (0.15..0.3).contains(&v);
        let arm2 = (0.2..0.65).contains(&u) && (0.45..0.58).contains(&v);
        if border {
            Rgb([20, 40, 160])
        } else if bar || arm1 || arm2 {
            Rgb([230, 120, 20])
        } else {
            Rgb([250, 250, 240])
        }
    })
}

/// Rendered views of a synthetic tag from two poses, with the analytic
/// projections of its corners.
#[derive(Debug, Clone)]
pub struct TagViews {
    pub ego_image: RgbImage,
    pub exo_image: RgbImage,
    pub ego_corners: [[f64; 2]; 4],
    pub exo_corners: [[f64; 2]; 4],
}

pub fn render_tag_views(
    scene: &Scene,
    tag: &SquareTag,
    ego_pose: &Pose,
    exo_pose: &Pose,
    intrinsics: &CameraIntrinsics,
) -> Result<TagViews, ValidationError> {
    let corners = |pose: &Pose| -> Result<[[f64; 2]; 4], ValidationError> {
        let mut out = [[0.0; 2]; 4];
        for (o, c) in out.iter_mut().zip(tag.corners()) {
            *o = intrinsics
                .project(&pose.inverse_transform_point(&c))
                .filter(|uv| intrinsics.contains(*uv))
                .ok_or_else(|| ValidationError::InvalidInput("tag corner not visible".into()))?;
        }
        Ok(out)
    };
    let scene = Scene {
        tag: Some(*tag),
        ..scene.clone()
    };
    Ok(TagViews {
        ego_corners: corners(ego_pose)?,
        exo_corners: corners(exo_pose)?,
        ego_image: render_scene(ego_pose, &scene, intrinsics).0,
        exo_image: render_scene(exo_pose, &scene, intrinsics).0,
    })
}

// ---------------------------------------------------------------------------
// Synthetic runs and the drift experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SyntheticRunConfig {
    pub trajectory: TrajectoryKind,
    pub steps: usize,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseModel,
    pub buffer: BufferConfig,
    pub render_images: bool,
}

impl SyntheticRunConfig {
    /// 6-DOF corridor flight of `path_length` units with landmarks on the
    /// tunnel walls extending well ahead of the end of the path. The buffer
    /// is sized to keep every frame.
    pub fn corridor(steps: usize, landmarks: usize, path_length: f64, noise: NoiseModel, scene_seed: u64) -> Self {
        let waypoints = (path_length.ceil() as usize + 1).max(3);
        Self {
            trajectory: TrajectoryKind::Smooth6Dof(SplineParams::corridor(path_length, waypoints)),
            steps,
            scene: Scene::corridor(landmarks, -1.0, path_length + 15.0, scene_seed),
            intrinsics: CameraIntrinsics::vga(),
            noise,
            buffer: BufferConfig {
                capacity: steps.max(2),
                ..BufferConfig::default()
            },
            render_images: false,
        }
    }
}

/// A buffered synthetic run with exact landmark annotations per frame.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub snapshot: BufferSnapshot,
    pub annotations: AnnotationSet,
    /// Ground-truth pose of each snapshot record.
    pub ground_truth: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
}

pub fn build_synthetic_run(config: &SyntheticRunConfig) -> Result<SyntheticRun, ValidationError> {
    let k = config.intrinsics;
    let source = SimulatedSource::new(SimulationConfig {
        trajectory: config.trajectory.clone(),
        steps: config.steps,
        scene: config.scene.clone(),
        intrinsics: k,
        noise: config.noise,
        render_images: config.render_images,
    })?;
    let mut buffer = PoseBuffer::new(config.buffer, k.width, k.height)?;
    let mut annotations = AnnotationSet::default();
    let mut truth_by_seq = HashMap::new();
    for event in source {
        let event = event?;
        let truth = event.ground_truth.expect("simulated events carry ground truth");
        if let crate::buffer::OfferOutcome::Admitted { seq, .. } = buffer.offer(event.pose, event.image)? {
            let points = event
                .landmarks_visible
                .unwrap_or_default()
                .iter()
                .map(|v| AnnotatedPoint {
                    id: v.id,
                    pixel: v.pixel,
                    camera_point: config
                        .scene
                        .landmark(v.id)
                        .map(|l| truth.inverse_transform_point(&l.position)),
                })
                .collect();
            annotations.insert(ReferenceAnnotation {
                frame_seq: seq,
                tag: "landmark".into(),
                points,
            });
            truth_by_seq.insert(seq, truth);
        }
    }
    let snapshot = (*buffer.snapshot()).clone();
    let ground_truth = snapshot.records().iter().map(|r| truth_by_seq[&r.seq]).collect();
    Ok(SyntheticRun {
        snapshot,
        annotations,
        ground_truth,
        intrinsics: k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftConfig {
    pub seeds: Vec<u64>,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub steps: usize,
    pub path_length: f64,
    pub landmarks: usize,
    pub scene_seed: u64,
    pub f_low: usize,
    pub f_high: usize,
    /// Every `anchor_stride`-th frame past `f_high` serves as current frame.
    pub anchor_stride: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            sigma_t: 0.005,
            sigma_r: 0.0,
            steps: 1500,
            path_length: 6.0,
            landmarks: 300,
            scene_seed: 7,
            f_low: 70,
            f_high: 260,
            anchor_stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSeedResult {
    pub seed: u64,
    pub mean_low: f64,
    pub mean_high: f64,
}

impl DriftSeedResult {
    pub fn degraded(&self) -> bool {
        self.mean_high > self.mean_low
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftOutcome {
    pub per_seed: Vec<DriftSeedResult>,
}

impl DriftOutcome {
    /// Fraction of seeds whose far-distance error exceeds the near one.
    pub fn degraded_fraction(&self) -> f64 {
        let n = self.per_seed.iter().filter(|r| r.degraded()).count();
        n as f64 / self.per_seed.len().max(1) as f64
    }
}

/// Anchor indices from `first` to the last record with the given stride.
pub fn anchors(len: usize, first: usize, stride: usize) -> Vec<usize> {
    (first..len).step_by(stride.max(1)).collect()
}

/// Random-walk drift experiment: for each seed, the same corridor flight is
/// corrupted and the pooled reprojection error at `f_low` and `f_high` is
/// compared over the same set of current frames.
pub fn run_drift_experiment(config: &DriftConfig) -> Result<DriftOutcome, ValidationError> {
    if config.f_low == 0 || config.f_high <= config.f_low || config.steps <= config.f_high {
        return Err(ValidationError::InvalidInput(
            "need 0 < f_low < f_high < steps".into(),
        ));
    }
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let noise = NoiseModel {
            sigma_t: config.sigma_t,
            sigma_r: config.sigma_r,
            seed,
        };
        let run_cfg =
            SyntheticRunConfig::corridor(config.steps, config.landmarks, config.path_length, noise, config.scene_seed);
        let run = build_synthetic_run(&run_cfg)?;
        let anchor_set = anchors(run.snapshot.len(), config.f_high, config.anchor_stride);
        let curve = sweep_eob_anchored(
            &run.snapshot,
            &run.annotations,
            &[config.f_low, config.f_high],
            &anchor_set,
            &run.intrinsics,
            &RenderConfig::default(),
        )?;
        let [low, high] = [curve.samples[0], curve.samples[1]];
        if low.is_empty() || high.is_empty() {
            return Err(ValidationError::NoData(format!("seed {seed}: no shared landmarks")));
        }
        per_seed.push(DriftSeedResult {
            seed,
            mean_low: low.mean_error_px,
            mean_high: high.mean_error_px,
        });
    }
    Ok(DriftOutcome { per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::FrameRecord;
    use crate::geom::look_rotation;
    use std::sync::Arc;

    #[test]
    fn format_g_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (123.456789, "123.457"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (123456.7, "123457"),
            (-2.5, "-2.5"),
            (999999.5, "1e+06"),
            (3.2e-13, "3.2e-13"),
            (f64::NAN, "nan"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x), want, "{x}");
        }
    }

    #[test]
    fn annotation_text_round_trip() {
        let set = AnnotationSet::new([ReferenceAnnotation {
            frame_seq: 4,
            tag: "corner".into(),
            points: vec![
                AnnotatedPoint {
                    id: 1,
                    pixel: [10.5, 20.25],
                    camera_point: Some(Vector3::new(0.1, -0.2, 3.0)),
                },
                AnnotatedPoint {
                    id: 2,
                    pixel: [1.0, 2.0],
                    camera_point: None,
                },
            ],
        }]);
        assert_eq!(AnnotationSet::parse(&set.to_text()).unwrap(), set);
        assert!(AnnotationSet::parse("1 t 2 3\n").is_err());
    }

    #[test]
    fn empty_reference_flagged() {
        let rec = |seq: u64, z: f64| {
            Arc::new(FrameRecord {
                seq,
                pose: Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, z), 0.0).unwrap(),
                image: Arc::new(RgbImage::new(1, 1)),
            })
        };
        let snap = BufferSnapshot::from_records(vec![rec(0, 0.0), rec(1, 1.0)]);
        let ann = AnnotationSet::new([
            ReferenceAnnotation {
                frame_seq: 0,
                tag: "x".into(),
                points: vec![],
            },
            ReferenceAnnotation {
                frame_seq: 1,
                tag: "x".into(),
                points: vec![AnnotatedPoint {
                    id: 3,
                    pixel: [320.0, 240.0],
                    camera_point: Some(Vector3::new(0.0, 0.0, 2.0)),
                }],
            },
        ]);
        let k = CameraIntrinsics::vga();
        let r = reprojection_error(&snap, &ann, 1, &k, &RenderConfig::default()).unwrap();
        assert!(r.is_empty());
        assert!(r.per_point.is_empty());
    }

    #[test]
    fn exact_poses_give_zero_error() {
        let cfg = SyntheticRunConfig::corridor(120, 80, 3.0, NoiseModel::none(), 1);
        let run = build_synthetic_run(&cfg).unwrap();
        let curve = sweep_eob(
            &run.snapshot,
            &run.annotations,
            &[1, 10, 50, 100],
            &run.intrinsics,
            &RenderConfig::default(),
        )
        .unwrap();
        assert_eq!(curve.samples.len(), 4);
        for s in &curve.samples {
            assert!(s.count > 0);
            assert!(s.max_error_px < 1e-6, "{s:?}");
        }
        let csv = curve.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn sweep_rejects_bad_f_values() {
        let run = build_synthetic_run(&SyntheticRunConfig::corridor(10, 20, 1.0, NoiseModel::none(), 1)).unwrap();
        let k = run.intrinsics;
        let cfg = RenderConfig::default();
        assert!(sweep_eob(&run.snapshot, &run.annotations, &[], &k, &cfg).is_err());
        assert!(sweep_eob(&run.snapshot, &run.annotations, &[5, 5], &k, &cfg).is_err());
        assert!(sweep_eob(&run.snapshot, &run.annotations, &[0, 3], &k, &cfg).is_err());
        let one = sweep_eob(&run.snapshot, &run.annotations, &[3], &k, &cfg).unwrap();
        assert_eq!(one.samples.len(), 1);
    }

    #[test]
    fn kendall_tau_signs() {
        let mk = |means: &[f64]| ErrorCurve {
            samples: means
                .iter()
                .enumerate()
                .map(|(i, &m)| CurveSample {
                    f: i + 1,
                    mean_error_px: m,
                    max_error_px: m,
                    count: 1,
                })
                .collect(),
        };
        assert_eq!(mk(&[1.0, 2.0, 3.0]).kendall_tau(), Some(1.0));
        assert_eq!(mk(&[3.0, 2.0, 1.0]).kendall_tau(), Some(-1.0));
        assert!(mk(&[1.0, 2.0]).to_svg("t").contains("<polyline"));
    }

    fn down_looking_exo(height: f64, k: &CameraIntrinsics) -> ExoView {
        let rot = look_rotation(&-Vector3::z(), &Vector3::y()).unwrap();
        let pose = Pose::new(rot, Vector3::new(0.0, 0.0, height), 0.0).unwrap();
        ExoView {
            image: RgbImage::new(k.width, k.height),
            reference_seq: 0,
            current_seq: 1,
            reference_pose: pose,
            current_pose: pose,
            eob_distance: 1,
            clamped: false,
            overlay_pixel_count: 0,
        }
    }

    #[test]
    fn cube_seen_from_above_is_centered() {
        let k = CameraIntrinsics::vga();
        let exo = down_looking_exo(5.0, &k);
        let plane = Plane::new(Vector3::z(), 0.0).unwrap();
        let cube = render_ground_plane_cube(&exo, &plane, 1.0, &k).unwrap();
        let painted: Vec<(u32, u32)> = cube
            .image
            .enumerate_pixels()
            .filter(|(_, _, p)| p.0 == CUBE_COLOR)
            .map(|(x, y, _)| (x, y))
            .collect();
        assert!(!painted.is_empty());
        let (x0, x1) = (painted.iter().map(|p| p.0).min().unwrap(), painted.iter().map(|p| p.0).max().unwrap());
        let (y0, y1) = (painted.iter().map(|p| p.1).min().unwrap(), painted.iter().map(|p| p.1).max().unwrap());
        assert!(((x0 + x1) as f64 / 2.0 - 320.0).abs() <= 1.0);
        assert!(((y0 + y1) as f64 / 2.0 - 240.0).abs() <= 1.0);
        // Top face (1 unit closer) appears as a 125 px square.
        assert!(((x1 - x0) as f64 - 125.0).abs() <= 2.0, "{x0} {x1}");
        for b in &cube.base {
            assert!(plane.signed_distance(b).abs() < 1e-9);
        }
    }

    #[test]
    fn cube_on_planar_trajectory_ground() {
        use crate::sim::{generate_trajectory, PlanarParams};
        let poses = generate_trajectory(&TrajectoryKind::Planar2Dof(PlanarParams::default()), 100).unwrap();
        let plane = estimate_ground_plane(&poses, 0.3).unwrap();
        assert!((plane.normal() - Vector3::z()).norm() < 1e-9);
        assert!(plane.offset().abs() < 1e-9);
        let k = CameraIntrinsics::vga();
        let exo = ExoView {
            image: RgbImage::new(640, 480),
            reference_seq: 0,
            current_seq: 1,
            reference_pose: poses[0],
            current_pose: poses[1],
            eob_distance: 1,
            clamped: false,
            overlay_pixel_count: 0,
        };
        let cube = render_ground_plane_cube(&exo, &plane, 0.2, &k).unwrap();
        for b in &cube.base {
            assert!(plane.signed_distance(b).abs() < 1e-9);
        }
    }

    #[test]
    fn tilted_plane_edges_follow_projection() {
        let k = CameraIntrinsics::vga();
        let a = 10f64.to_radians();
        let plane = Plane::new(Vector3::new(0.0, a.sin(), a.cos()), 0.0).unwrap();
        let forward = Vector3::new(0.0, 0.6, -1.0).normalize();
        let rot = look_rotation(&forward, &Vector3::z()).unwrap();
        let pose = Pose::new(rot, Vector3::new(0.0, -2.0, 3.0), 0.0).unwrap();
        let mut exo = down_looking_exo(1.0, &k);
        exo.reference_pose = pose;
        let cube = render_ground_plane_cube(&exo, &plane, 1.0, &k).unwrap();
        for i in 0..4 {
            let (p, q) = (cube.base[i], cube.base[(i + 1) % 4]);
            for s in 0..=20 {
                let x = p + (q - p) * (s as f64 / 20.0);
                let uv = k.project(&pose.inverse_transform_point(&x)).unwrap();
                // A 1-px line lies within one pixel of the analytic segment.
                let near = (-1i64..=1).flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy))).any(|(dx, dy)| {
                    let (x, y) = (uv[0].round() as i64 + dx, uv[1].round() as i64 + dy);
                    ((x as f64 - uv[0]).powi(2) + (y as f64 - uv[1]).powi(2)).sqrt() <= 1.0
                        && cube.image.get_pixel(x as u32, y as u32).0 == CUBE_COLOR
                });
                assert!(near, "edge {i} sample {s}");
            }
        }
    }

    #[test]
    fn logo_identity_motion_same_placement() {
        let img = RgbImage::from_pixel(200, 150, Rgb([9, 9, 9]));
        let corners = [[50.0, 40.0], [150.0, 45.0], [140.0, 120.0], [60.0, 110.0]];
        let logo = make_logo(64, 64);
        let out = project_logo(&img, &img, &corners, &corners, &logo).unwrap();
        assert_eq!(out.ego, out.exo);
        assert!(out.covered_pixels > 1000);
        for (a, b) in out.exo_corners.iter().zip(&corners) {
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn logo_needs_four_corners() {
        let img = RgbImage::new(10, 10);
        let three = [[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]];
        let four = [[0.0, 0.0], [5.0, 0.0], [5.0, 5.0], [0.0, 5.0]];
        let err = project_logo(&img, &img, &three, &four, &make_logo(8, 8)).unwrap_err();
        assert!(matches!(err, ValidationError::InvalidInput(_)));
    }
}
