use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::geom::{CameraIntrinsics, Pose, Rgb as Color};
use crate::raster::fill_disk;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub color: Color,
}

/// Horizontal square marker (an April-Tag stand-in) lying in `z = center.z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareTag {
    pub center: Vector3<f64>,
    pub size: f64,
}

impl SquareTag {
    /// Corners in world coordinates, counter-clockwise seen from above,
    /// starting at `(-x, -y)`.
    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let h = self.size / 2.0;
        let c = self.center;
        [
            c + Vector3::new(-h, -h, 0.0),
            c + Vector3::new(h, -h, 0.0),
            c + Vector3::new(h, h, 0.0),
            c + Vector3::new(-h, h, 0.0),
        ]
    }
}

/// Checkerboard-textured horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub height: f64,
    pub cell: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub landmarks: Vec<Landmark>,
    pub tag: Option<SquareTag>,
    pub ground: Option<GroundPlane>,
}

/// A landmark's exact projection in one rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleLandmark {
    pub id: u64,
    pub pixel: [f64; 2],
    pub depth: f64,
}

const BACKGROUND: Color = [18, 32, 48];
const LANDMARK_RADIUS: u32 = 2;

impl Scene {
    /// Landmarks scattered on the walls of a box-shaped tunnel along `+x`,
    /// from `x_start` to `x_end`, with a checkered floor at `z = -1`.
    pub fn corridor(landmark_count: usize, x_start: f64, x_end: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let landmarks = (0..landmark_count)
            .map(|i| {
                let x = rng.random_range(x_start..x_end);
                // Pick a wall, then a position on it.
                let (y, z) = match rng.random_range(0..4u8) {
                    0 => (-2.0 + rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.2)),
                    1 => (2.0 + rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.2)),
                    2 => (rng.random_range(-2.0..2.0), -1.0 + rng.random_range(0.0..0.1)),
                    _ => (rng.random_range(-2.0..2.0), 1.3 + rng.random_range(-0.1..0.1)),
                };
                let color = [
                    rng.random_range(80..=255u8),
                    rng.random_range(80..=255u8),
                    rng.random_range(80..=255u8),
                ];
                Landmark {
                    id: i as u64,
                    position: Vector3::new(x, y, z),
                    color,
                }
            })
            .collect();
        Self {
            landmarks,
            tag: None,
            ground: Some(GroundPlane {
                height: -1.0,
                cell: 0.5,
            }),
        }
    }

    pub fn landmark(&self, id: u64) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.id == id)
    }

    /// Parses the scene text format: one landmark per line as
    /// `id x y z r g b`, an optional `tag cx cy cz size` line and an optional
    /// `ground z cell` line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut scene = Scene::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let floats = |range: std::ops::Range<usize>| -> Result<Vec<f64>, SimError> {
                toks[range]
                    .iter()
                    .map(|t| {
                        t.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| SimError::parse(line_no, format!("invalid number `{t}`")))
                    })
                    .collect()
            };
            match toks[0] {
                "tag" => {
                    if toks.len() != 5 {
                        return Err(SimError::parse(line_no, "expected `tag cx cy cz size`"));
                    }
                    let v = floats(1..5)?;
                    if !(v[3] > 0.0) {
                        return Err(SimError::parse(line_no, "tag size must be positive"));
                    }
                    scene.tag = Some(SquareTag {
                        center: Vector3::new(v[0], v[1], v[2]),
                        size: v[3],
                    });
                }
                "ground" => {
                    if toks.len() != 3 {
                        return Err(SimError::parse(line_no, "expected `ground z cell`"));
                    }
                    let v = floats(1..3)?;
                    if !(v[1] > 0.0) {
                        return Err(SimError::parse(line_no, "ground cell must be positive"));
                    }
                    scene.ground = Some(GroundPlane {
                        height: v[0],
                        cell: v[1],
                    });
                }
                _ => {
                    if toks.len() != 7 {
                        return Err(SimError::parse(line_no, "expected `id x y z r g b`"));
                    }
                    let id: u64 = toks[0]
                        .parse()
                        .map_err(|_| SimError::parse(line_no, format!("invalid landmark id `{}`", toks[0])))?;
                    if !seen.insert(id) {
                        return Err(SimError::parse(line_no, format!("duplicate landmark id {id}")));
                    }
                    let v = floats(1..4)?;
                    let mut color = [0u8; 3];
                    for (c, t) in color.iter_mut().zip(&toks[4..7]) {
                        *c = t
                            .parse()
                            .map_err(|_| SimError::parse(line_no, format!("invalid color component `{t}`")))?;
                    }
                    scene.landmarks.push(Landmark {
                        id,
                        position: Vector3::new(v[0], v[1], v[2]),
                        color,
                    });
                }
            }
        }
        Ok(scene)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# id x y z r g b\n");
        for l in &self.landmarks {
            let p = l.position;
            out += &format!(
                "{} {} {} {} {} {} {}\n",
                l.id, p.x, p.y, p.z, l.color[0], l.color[1], l.color[2]
            );
        }
        if let Some(t) = &self.tag {
            out += &format!("tag {} {} {} {}\n", t.center.x, t.center.y, t.center.z, t.size);
        }
        if let Some(g) = &self.ground {
            out += &format!("ground {} {}\n", g.height, g.cell);
        }
        out
    }
}

/// Landmarks in front of the camera whose projection falls inside the image,
/// sorted by id.
pub fn visible_landmarks(pose: &Pose, scene: &Scene, intrinsics: &CameraIntrinsics) -> Vec<VisibleLandmark> {
    let mut out: Vec<_> = scene
        .landmarks
        .iter()
        .filter_map(|l| {
            let cam = pose.inverse_transform_point(&l.position);
            let pixel = intrinsics.project(&cam)?;
            intrinsics.contains(pixel).then_some(VisibleLandmark {
                id: l.id,
                pixel,
                depth: cam.z,
            })
        })
        .collect();
    out.sort_by_key(|v| v.id);
    out
}

fn tag_texel(tag: &SquareTag, hit: &Vector3<f64>) -> Option<Color> {
    let lx = (hit.x - tag.center.x) / tag.size + 0.5;
    let ly = (hit.y - tag.center.y) / tag.size + 0.5;
    if !(0.0..=1.0).contains(&lx) || !(0.0..=1.0).contains(&ly) {
        return None;
    }
    let border = !(0.125..0.875).contains(&lx) || !(0.125..0.875).contains(&ly);
    // A dark quadrant marks orientation.
    let marker = lx < 0.5 && ly < 0.5;
    Some(if border || marker { [10, 10, 10] } else { [245, 245, 245] })
}

/// Pinhole render of the scene: textured floor and tag by ray casting,
/// landmarks as small disks painted far to near.
pub fn render_scene(pose: &Pose, scene: &Scene, intrinsics: &CameraIntrinsics) -> (RgbImage, Vec<VisibleLandmark>) {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut img = RgbImage::from_pixel(w, h, Rgb(BACKGROUND));
    let r = pose.rotation();
    let origin = pose.center();
    if scene.ground.is_some() || scene.tag.is_some() {
        for v in 0..h {
            let dy = (v as f64 - intrinsics.cy) / intrinsics.fy;
            for u in 0..w {
                let dx = (u as f64 - intrinsics.cx) / intrinsics.fx;
                let dir = r * Vector3::new(dx, dy, 1.0);
                let mut best: Option<(f64, Color)> = None;
                if let Some(tag) = &scene.tag {
                    if dir.z.abs() > 1e-12 {
                        let s = (tag.center.z - origin.z) / dir.z;
                        if s > 0.0 {
                            if let Some(c) = tag_texel(tag, &(origin + dir * s)) {
                                best = Some((s, c));
                            }
                        }
                    }
                }
                if let Some(g) = &scene.ground {
                    if dir.z.abs() > 1e-12 {
                        let s = (g.height - origin.z) / dir.z;
                        if s > 0.0 && best.is_none_or(|(bs, _)| s < bs) {
                            let hit = origin + dir * s;
                            let parity = ((hit.x / g.cell).floor() + (hit.y / g.cell).floor()) as i64 & 1;
                            let base: Color = if parity == 0 { [92, 84, 70] } else { [52, 60, 58] };
                            // Fade toward the background with distance.
                            let fog = (-(s * dir.norm()) / 25.0).exp();
                            let mut c = [0u8; 3];
                            for k in 0..3 {
                                c[k] = (base[k] as f64 * fog + BACKGROUND[k] as f64 * (1.0 - fog)).round() as u8;
                            }
                            best = Some((s, c));
                        }
                    }
                }
                if let Some((_, c)) = best {
                    img.put_pixel(u, v, Rgb(c));
                }
            }
        }
    }
    let visible = visible_landmarks(pose, scene, intrinsics);
    let mut order: Vec<&VisibleLandmark> = visible.iter().collect();
    order.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.id.cmp(&b.id)));
    for v in order {
        let color = scene.landmark(v.id).map_or([255, 255, 255], |l| l.color);
        fill_disk(&mut img, v.pixel[0], v.pixel[1], LANDMARK_RADIUS, color, None);
    }
    (img, visible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn single(id: u64, p: [f64; 3]) -> Scene {
        Scene {
            landmarks: vec![Landmark {
                id,
                position: Vector3::from(p),
                color: [255, 0, 0],
            }],
            ..Default::default()
        }
    }

    #[test]
    fn on_axis_landmark_at_principal_point() {
        let k = CameraIntrinsics::vga();
        let (img, vis) = render_scene(&Pose::identity(), &single(7, [0.0, 0.0, 2.0]), &k);
        assert_eq!(vis.len(), 1);
        assert_eq!(vis[0].pixel, [320.0, 240.0]);
        assert_eq!(img.get_pixel(320, 240).0, [255, 0, 0]);
    }

    #[test]
    fn landmark_behind_camera_invisible() {
        let k = CameraIntrinsics::vga();
        let (_, vis) = render_scene(&Pose::identity(), &single(1, [0.0, 0.0, -2.0]), &k);
        assert!(vis.is_empty());
    }

    #[test]
    fn oblique_grid_matches_scalar_projection() {
        let k = CameraIntrinsics::vga();
        // Camera 3 units above the origin, pitched 30° down from looking along +y.
        let pitch = 30f64.to_radians();
        let forward = Vector3::new(0.0, pitch.cos(), -pitch.sin());
        let rot = crate::geom::look_rotation(&forward, &Vector3::z()).unwrap();
        let pose = Pose::new(rot, Vector3::new(0.0, -7.0, 3.0), 0.0).unwrap();
        let mut scene = Scene::default();
        for i in 0..5 {
            for j in 0..5 {
                scene.landmarks.push(Landmark {
                    id: (i * 5 + j) as u64,
                    position: Vector3::new(i as f64 - 2.0, j as f64 - 2.0, 0.0),
                    color: [200, 200, 0],
                });
            }
        }
        let vis = visible_landmarks(&pose, &scene, &k);
        assert_eq!(vis.len(), 25);
        // Independent scalar arithmetic: p_cam = Rᵀ (X - C), row by row.
        let rm: Matrix3<f64> = *pose.rotation();
        for v in &vis {
            let x = scene.landmark(v.id).unwrap().position;
            let d = [x.x - 0.0, x.y + 7.0, x.z - 3.0];
            let mut cam = [0.0; 3];
            for (row, out) in cam.iter_mut().enumerate() {
                *out = rm[(0, row)] * d[0] + rm[(1, row)] * d[1] + rm[(2, row)] * d[2];
            }
            let u = 500.0 * cam[0] / cam[2] + 320.0;
            let vv = 500.0 * cam[1] / cam[2] + 240.0;
            assert!((v.pixel[0] - u).abs() < 1e-9 && (v.pixel[1] - vv).abs() < 1e-9);
        }
    }

    #[test]
    fn scene_text_round_trip() {
        let mut scene = Scene::corridor(20, 0.0, 10.0, 3);
        scene.tag = Some(SquareTag {
            center: Vector3::new(3.0, 0.5, -1.0),
            size: 0.4,
        });
        let parsed = Scene::parse(&scene.to_text()).unwrap();
        assert_eq!(parsed, scene);
    }

    #[test]
    fn scene_parse_errors() {
        assert!(matches!(Scene::parse("1 0 0 0 1 2\n"), Err(SimError::Parse { line: 1, .. })));
        assert!(Scene::parse("1 0 0 0 1 2 3\n1 0 0 0 1 2 3\n").is_err());
        assert!(Scene::parse("tag 0 0 0 -1\n").is_err());
        assert!(Scene::parse("1 0 0 nan 1 2 3\n").is_err());
    }

    #[test]
    fn tag_rendered_on_floor() {
        let k = CameraIntrinsics::vga();
        let rot = crate::geom::look_rotation(&-Vector3::z(), &Vector3::y()).unwrap();
        let pose = Pose::new(rot, Vector3::new(0.0, 0.0, 2.0), 0.0).unwrap();
        let scene = Scene {
            tag: Some(SquareTag {
                center: Vector3::zeros(),
                size: 1.0,
            }),
            ..Default::default()
        };
        let (img, _) = render_scene(&pose, &scene, &k);
        // Principal point looks at the tag center; the white interior sits
        // in the +x +y quadrant relative to the marker.
        let corner_px = k.project(&pose.inverse_transform_point(&Vector3::new(0.25, 0.25, 0.0))).unwrap();
        assert_eq!(img.get_pixel(corner_px[0] as u32, corner_px[1] as u32).0, [245, 245, 245]);
        let marker_px = k.project(&pose.inverse_transform_point(&Vector3::new(-0.25, -0.25, 0.0))).unwrap();
        assert_eq!(img.get_pixel(marker_px[0] as u32, marker_px[1] as u32).0, [10, 10, 10]);
        assert_eq!(img.get_pixel(0, 0).0, BACKGROUND);
    }
}
