use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;

use super::{PoseSourceEvent, SimError};
use crate::geom::Pose;

/// Default maximum |Δt| (seconds) when pairing poses with images.
pub const DEFAULT_PAIRING_TOLERANCE: f64 = 0.02;

/// Deviations of the quaternion norm beyond this are counted as warnings.
const QUATERNION_WARN_TOLERANCE: f64 = 1e-9;

pub type TimedPose = Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    /// Poses sorted by timestamp (stable for equal timestamps).
    pub poses: Vec<TimedPose>,
    /// Number of lines whose quaternion had to be renormalized.
    pub normalized_quaternions: usize,
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` starts a comment.
pub fn parse_trajectory(text: &str) -> Result<TrajectoryFile, SimError> {
    let mut poses = Vec::new();
    let mut normalized = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SimError::parse(line_no, format!("invalid number `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != 8 {
            return Err(SimError::parse(
                line_no,
                format!("expected 8 fields `timestamp tx ty tz qx qy qz qw`, got {}", values.len()),
            ));
        }
        let mut q = [values[4], values[5], values[6], values[7]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(SimError::parse(line_no, "zero-length quaternion"));
        }
        if (norm - 1.0).abs() > QUATERNION_WARN_TOLERANCE {
            normalized += 1;
        }
        q.iter_mut().for_each(|c| *c /= norm);
        let pose = Pose::from_quaternion([values[1], values[2], values[3]], q, values[0])
            .map_err(|e| SimError::parse(line_no, e.to_string()))?;
        poses.push(pose);
    }
    poses.sort_by(|a, b| a.timestamp().total_cmp(&b.timestamp()));
    Ok(TrajectoryFile {
        poses,
        normalized_quaternions: normalized,
    })
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_trajectory(&text)
}

pub fn write_trajectory(path: &Path, poses: &[Pose]) -> Result<(), SimError> {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.translation();
        let q = p.quaternion();
        out += &format!(
            "{:.6} {} {} {} {} {} {} {}\n",
            p.timestamp(),
            t.x,
            t.y,
            t.z,
            q[0],
            q[1],
            q[2],
            q[3]
        );
    }
    fs::write(path, out).map_err(|e| SimError::io(path, e))
}

/// PNG files in `dir` whose stem parses as a timestamp, sorted by time.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(f64, PathBuf)>, SimError> {
    let mut images = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| SimError::io(dir, e))? {
        let path = entry.map_err(|e| SimError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let ts = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|t| t.is_finite());
        if let (true, Some(ts)) = (is_png, ts) {
            images.push((ts, path));
        }
    }
    images.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(images)
}

/// Reads `pose_timestamp image_timestamp` pairs; `#` starts a comment.
pub fn read_associations(path: &Path) -> Result<Vec<(f64, f64)>, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if v.len() != 2 || !v.iter().all(|x| x.is_finite()) {
            return Err(SimError::parse(i + 1, "expected `pose_timestamp image_timestamp`"));
        }
        pairs.push((v[0], v[1]));
    }
    Ok(pairs)
}

fn nearest(images: &[(f64, PathBuf)], t: f64) -> Option<(f64, usize)> {
    let idx = images.partition_point(|(ts, _)| *ts < t);
    [idx.checked_sub(1), (idx < images.len()).then_some(idx)]
        .into_iter()
        .flatten()
        .map(|i| ((images[i].0 - t).abs(), i))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub pairs: Vec<(Pose, PathBuf)>,
    /// Poses that found no image within tolerance (skipped).
    pub unmatched: usize,
}

/// Pairs each pose with the image nearest in time, if within `tolerance`.
/// `images` must be sorted by timestamp.
pub fn pair_by_timestamp(poses: &[Pose], images: &[(f64, PathBuf)], tolerance: f64) -> Pairing {
    let mut pairs = Vec::with_capacity(poses.len());
    let mut unmatched = 0;
    for p in poses {
        match nearest(images, p.timestamp()) {
            Some((dt, i)) if dt <= tolerance => pairs.push((*p, images[i].1.clone())),
            _ => unmatched += 1,
        }
    }
    Pairing { pairs, unmatched }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    pub tolerance: f64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_PAIRING_TOLERANCE,
        }
    }
}

/// Replays a trajectory file against a directory of timestamp-named PNGs.
/// When `associations.txt` exists in the image directory (or its parent),
/// it decides the pairing; otherwise the nearest-timestamp rule applies.
#[derive(Debug)]
pub struct ReplaySource {
    pairs: Vec<(Pose, PathBuf)>,
    unmatched: usize,
    normalized_quaternions: usize,
    next: usize,
}

impl ReplaySource {
    pub fn open(trajectory: &Path, image_dir: &Path, options: ReplayOptions) -> Result<Self, SimError> {
        if !(options.tolerance >= 0.0) {
            return Err(SimError::InvalidParams("pairing tolerance must be non-negative".into()));
        }
        let traj = read_trajectory(trajectory)?;
        let images = load_image_dir(image_dir)?;
        let assoc_path = [image_dir.join("associations.txt"), image_dir.join("../associations.txt")]
            .into_iter()
            .find(|p| p.is_file());
        let pairing = match assoc_path {
            Some(path) => {
                let assoc = read_associations(&path)?;
                let mut pairs = Vec::new();
                let mut unmatched = 0;
                for p in &traj.poses {
                    let hit = assoc
                        .iter()
                        .find(|(pt, _)| (pt - p.timestamp()).abs() <= 1e-6)
                        .and_then(|(_, it)| nearest(&images, *it).filter(|(dt, _)| *dt <= 1e-6));
                    match hit {
                        Some((_, i)) => pairs.push((*p, images[i].1.clone())),
                        None => unmatched += 1,
                    }
                }
                Pairing { pairs, unmatched }
            }
            None => pair_by_timestamp(&traj.poses, &images, options.tolerance),
        };
        if pairing.pairs.is_empty() {
            return Err(SimError::NoData(format!(
                "no pose in {} could be paired with an image in {}",
                trajectory.display(),
                image_dir.display()
            )));
        }
        Ok(Self {
            pairs: pairing.pairs,
            unmatched: pairing.unmatched,
            normalized_quaternions: traj.normalized_quaternions,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn unmatched(&self) -> usize {
        self.unmatched
    }

    pub fn normalized_quaternions(&self) -> usize {
        self.normalized_quaternions
    }

    pub fn pairs(&self) -> &[(Pose, PathBuf)] {
        &self.pairs
    }
}

impl Iterator for ReplaySource {
    type Item = Result<PoseSourceEvent, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (pose, path) = self.pairs.get(self.next)?.clone();
        self.next += 1;
        Some(
            image::open(&path)
                .map_err(|source| SimError::Image { path, source })
                .map(|img| PoseSourceEvent {
                    pose,
                    image: Arc::new(img.to_rgb8()),
                    ground_truth: None,
                    landmarks_visible: None,
                    map_points: None,
                }),
        )
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.pairs.len() - self.next;
        (left, Some(left))
    }
}

/// Writes a replayable dataset: `trajectory.txt` plus `images/<ts>.png`.
pub fn write_dataset<'a>(dir: &Path, frames: impl IntoIterator<Item = (Pose, &'a RgbImage)>) -> Result<usize, SimError> {
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| SimError::io(&image_dir, e))?;
    let mut poses = Vec::new();
    for (pose, img) in frames {
        let path = image_dir.join(format!("{:.6}.png", pose.timestamp()));
        img.save(&path).map_err(|source| SimError::Image {
            path: path.clone(),
            source,
        })?;
        poses.push(pose);
    }
    write_trajectory(&dir.join("trajectory.txt"), &poses)?;
    let readme = dir.join("README.txt");
    let mut f = fs::File::create(&readme).map_err(|e| SimError::io(&readme, e))?;
    writeln!(
        f,
        "trajectory.txt: timestamp tx ty tz qx qy qz qw (camera-to-world)\nimages/: one PNG per pose, named by timestamp"
    )
    .map_err(|e| SimError::io(&readme, e))?;
    Ok(poses.len())
}
