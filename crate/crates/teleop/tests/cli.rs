use std::process::Command;

use eob_teleop::config::{ReplaySourceConfig, SessionConfig, SourceConfig};
use eob_teleop::session::{run_session, SessionStatus};

fn eob() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eob"))
}

#[test]
fn no_subcommand_prints_usage_and_exits_2() {
    let out = eob().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
    for sub in ["serve", "replay-check", "validate", "simulate"] {
        assert!(text.contains(sub), "usage lacks {sub}");
    }
}

#[test]
fn bad_flag_exits_2() {
    let out = eob().args(["serve", "--buffer-size", "many"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_1() {
    let out = eob().args(["serve", "--buffer-size", "0", "--listen", "127.0.0.1:1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("capacity"));
}

#[test]
fn simulate_writes_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.csv");
    let out = eob()
        .args(["simulate", "--steps", "200", "--points", "500", "--event-log"])
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("session complete: 200 events"));
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "index,timestamp,admitted,seq,evicted,clients");
    assert_eq!(lines.len(), 201);
    assert!(lines[200].starts_with("199,"));
}

#[test]
fn recorded_simulation_replays() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("flight");
    let out = eob()
        .args(["simulate", "--steps", "40", "--points", "500", "--record"])
        .arg(&rec)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.txt", "groundtruth.txt", "scene.txt"] {
        assert!(rec.join(f).exists(), "{f} missing");
    }

    let out = eob()
        .arg("replay-check")
        .arg("--trajectory")
        .arg(rec.join("trajectory.txt"))
        .arg("--images")
        .arg(rec.join("images"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("replayable frames: 40 (0 unmatched)"), "{stdout}");

    // The recording drives a replay session end to end.
    let cfg = SessionConfig {
        listen: {
            let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
            format!("127.0.0.1:{port}")
        },
        points: 500,
        source: SourceConfig::Replay(ReplaySourceConfig {
            trajectory: rec.join("trajectory.txt"),
            images: rec.join("images"),
            tolerance: 0.02,
            realtime: false,
        }),
        ..SessionConfig::default()
    };
    let report = run_session(cfg).unwrap();
    assert_eq!(report.status, SessionStatus::Complete);
    assert_eq!(report.events.len(), 40);
}

#[test]
fn replay_check_reports_missing_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.txt");
    std::fs::write(&traj, "5.0 0 0 0 0 0 0 1\n").unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    image::RgbImage::new(4, 4).save(images.join("1.000000.png")).unwrap();
    let out = eob()
        .arg("replay-check")
        .arg("--trajectory")
        .arg(&traj)
        .arg("--images")
        .arg(&images)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1 unmatched") && stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn validate_writes_curve_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = eob()
        .args(["validate", "--sweep", "70,140,200,260", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("reprojection.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "f,mean_error_px,max_error_px,count");
    assert_eq!(lines.len(), 5, "{csv}");
    for (line, f) in lines[1..].iter().zip([70, 140, 200, 260]) {
        let cols: Vec<_> = line.split(',').collect();
        assert_eq!(cols[0], f.to_string());
        assert!(cols[1].parse::<f64>().unwrap() > 0.0);
        assert!(cols[3].parse::<usize>().unwrap() > 0);
    }
    let svg = std::fs::read_to_string(dir.path().join("reprojection.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    for png in ["exo.png", "ground_plane_cube.png", "logo_ego.png", "logo_exo.png"] {
        let img = image::open(dir.path().join(png)).unwrap();
        assert_eq!((img.width(), img.height()), (640, 480), "{png}");
    }
    assert!(stdout.contains("kendall tau"));
}
