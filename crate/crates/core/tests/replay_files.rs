//! Trajectory replay against on-disk datasets.

use std::fs;

use eob_core::geom::{CameraIntrinsics, Pose};
use eob_core::sim::{
    write_dataset, write_trajectory, NoiseModel, ReplayOptions, ReplaySource, Scene, SimError, SimulatedSource,
    SimulationConfig, SplineParams, TrajectoryKind,
};
use image::{Rgb, RgbImage};
use nalgebra::Vector3;

fn pose(ts: f64, x: f64) -> Pose {
    Pose::new(nalgebra::Matrix3::identity(), Vector3::new(x, 0.0, 0.0), ts).unwrap()
}

fn save_png(dir: &std::path::Path, name: &str, shade: u8) {
    RgbImage::from_pixel(4, 3, Rgb([shade, 0, 0])).save(dir.join(name)).unwrap();
}

#[test]
fn three_poses_three_images_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    fs::create_dir(&images).unwrap();
    // File order deliberately not sorted by time.
    fs::write(
        dir.path().join("traj.txt"),
        "# ts tx ty tz qx qy qz qw\n0.2 2 0 0 0 0 0 1\n0.0 0 0 0 0 0 0 1\n0.1 1 0 0 0 0 0 1\n",
    )
    .unwrap();
    for (i, ts) in ["0.000000", "0.100000", "0.200000"].iter().enumerate() {
        save_png(&images, &format!("{ts}.png"), i as u8 * 100);
    }
    let src = ReplaySource::open(&dir.path().join("traj.txt"), &images, ReplayOptions::default()).unwrap();
    assert_eq!(src.unmatched(), 0);
    let events: Vec<_> = src.map(Result::unwrap).collect();
    assert_eq!(events.len(), 3);
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.pose.translation().x, i as f64);
        assert_eq!(e.image.get_pixel(0, 0).0[0], i as u8 * 100);
    }
}

#[test]
fn unmatched_poses_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    fs::create_dir(&images).unwrap();
    write_trajectory(&dir.path().join("t.txt"), &[pose(1.0, 0.0), pose(5.0, 1.0)]).unwrap();
    save_png(&images, "0.990000.png", 1);
    save_png(&images, "1.050000.png", 2);
    let src = ReplaySource::open(&dir.path().join("t.txt"), &images, ReplayOptions::default()).unwrap();
    assert_eq!((src.len(), src.unmatched()), (1, 1));
    assert!(src.pairs()[0].1.ends_with("0.990000.png"));
}

#[test]
fn empty_pairing_is_no_data() {
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(&dir.path().join("t.txt"), &[pose(1.0, 0.0)]).unwrap();
    save_png(dir.path(), "7.000000.png", 1);
    let err = ReplaySource::open(&dir.path().join("t.txt"), dir.path(), ReplayOptions::default()).unwrap_err();
    assert!(matches!(err, SimError::NoData(_)));
}

#[test]
fn associations_file_overrides_nearest_rule() {
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(&dir.path().join("t.txt"), &[pose(1.0, 0.0)]).unwrap();
    save_png(dir.path(), "1.000000.png", 1);
    save_png(dir.path(), "3.000000.png", 2);
    fs::write(dir.path().join("associations.txt"), "1.0 3.0\n").unwrap();
    let src = ReplaySource::open(&dir.path().join("t.txt"), dir.path(), ReplayOptions::default()).unwrap();
    assert!(src.pairs()[0].1.ends_with("3.000000.png"));
}

#[test]
fn recorded_simulation_replays_identically() {
    let k = CameraIntrinsics::new(60.0, 60.0, 40.0, 30.0, 80, 60).unwrap();
    let source = SimulatedSource::new(SimulationConfig {
        trajectory: TrajectoryKind::Smooth6Dof(SplineParams::corridor(2.0, 3)),
        steps: 12,
        scene: Scene::corridor(40, -1.0, 10.0, 3),
        intrinsics: k,
        noise: NoiseModel::none(),
        render_images: true,
    })
    .unwrap();
    let events: Vec<_> = source.map(Result::unwrap).collect();
    let dir = tempfile::tempdir().unwrap();
    let n = write_dataset(dir.path(), events.iter().map(|e| (e.pose, e.image.as_ref()))).unwrap();
    assert_eq!(n, 12);
    let replay = ReplaySource::open(
        &dir.path().join("trajectory.txt"),
        &dir.path().join("images"),
        ReplayOptions::default(),
    )
    .unwrap();
    let replayed: Vec<_> = replay.map(Result::unwrap).collect();
    assert_eq!(replayed.len(), 12);
    for (a, b) in events.iter().zip(&replayed) {
        assert_eq!(*a.image, *b.image);
        assert!((a.pose.translation() - b.pose.translation()).norm() < 1e-12);
        assert!((a.pose.rotation() - b.pose.rotation()).abs().max() < 1e-12);
        assert!((a.pose.timestamp() - b.pose.timestamp()).abs() < 1e-6);
    }
}
