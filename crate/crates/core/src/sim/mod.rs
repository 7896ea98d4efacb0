//! Pose sources standing in for a SLAM front end: trajectory-file replay
//! with image directories, and a synthetic generator with exact ground truth.

mod noise;
mod replay;
mod scene;
mod source;
mod trajectory;

pub use noise::{corrupt_poses, NoiseModel};
pub use replay::{
    load_image_dir, pair_by_timestamp, parse_trajectory, read_associations, read_trajectory, write_dataset,
    write_trajectory, Pairing, ReplayOptions, ReplaySource, TimedPose, TrajectoryFile, DEFAULT_PAIRING_TOLERANCE,
};
pub use scene::{render_scene, visible_landmarks, GroundPlane, Landmark, Scene, SquareTag, VisibleLandmark};
pub use source::{MapPoint, PoseSourceEvent, SimulatedSource, SimulationConfig};
pub use trajectory::{generate_trajectory, PlanarParams, SplineParams, TrajectoryKind};

use std::path::PathBuf;

use thiserror::Error;

use crate::geom::GeomError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("no data: {0}")]
    NoData(String),
}

impl SimError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
