//! Robot mesh loading and surface sampling into the overlay point cloud.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{Point3Set, Rgb};

/// Number of surface samples drawn per robot model by default.
pub const DEFAULT_POINT_COUNT: usize = 10_000;

pub const BODY_COLOR: Rgb = [128, 128, 128];
pub const ACCENT_COLOR: Rgb = [255, 140, 0];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read mesh: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no usable triangles")]
    Empty,
    #[error("unsupported mesh format `{0}` (expected .ply or .obj)")]
    UnknownFormat(String),
    #[error("point count must be positive")]
    ZeroPoints,
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "ply" => Ok(Self::Ply),
            "obj" => Ok(Self::Obj),
            _ => Err(MeshError::UnknownFormat(ext)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    vertex_colors: Option<Vec<Rgb>>,
}

/// Result of loading a mesh from disk.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    /// Zero-area faces removed during loading.
    pub dropped_faces: usize,
}

fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TriangleMesh {
    /// Validates indices, drops zero-area faces and recenters the mesh on its
    /// area-weighted surface centroid. Returns the mesh and the number of
    /// dropped faces.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        vertex_colors: Option<Vec<Rgb>>,
    ) -> Result<(Self, usize), MeshError> {
        if let Some(c) = &vertex_colors {
            if c.len() != vertices.len() {
                return Err(parse_err(0, "vertex color count does not match vertex count"));
            }
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(parse_err(0, format!("face {t:?} references a missing vertex")));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(parse_err(0, "non-finite vertex coordinate"));
        }
        let diag = bbox_diagonal(&vertices);
        let min_area = f64::EPSILON * diag * diag;
        let before = triangles.len();
        let triangles: Vec<_> = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) > min_area)
            .collect();
        let dropped = before - triangles.len();
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut mesh = Self {
            vertices,
            triangles,
            vertex_colors,
        };
        let centroid = mesh.surface_centroid();
        for v in &mut mesh.vertices {
            *v -= centroid;
        }
        Ok((mesh, dropped))
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_colors(&self) -> Option<&[Rgb]> {
        self.vertex_colors.as_deref()
    }

    pub fn face(&self, i: usize) -> [Vector3<f64>; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.face(i);
                triangle_area(&a, &b, &c)
            })
            .collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    fn surface_centroid(&self) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.face(i);
            let area = triangle_area(&a, &b, &c);
            acc += (a + b + c) / 3.0 * area;
            total += area;
        }
        acc / total
    }
}

fn bbox_diagonal(vertices: &[Vector3<f64>]) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let mut lo = vertices[0];
    let mut hi = vertices[0];
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (hi - lo).norm()
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<LoadedMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::Ply => parse_ply(&text),
        MeshFormat::Obj => parse_obj(&text),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MeshError> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what}")))
}

/// ASCII PLY with `x y z` vertex positions, optional `red green blue` uchar
/// colors, and triangular faces.
pub fn parse_ply(text: &str) -> Result<LoadedMesh, MeshError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing `ply` magic")),
    }
    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    loop {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, "unterminated header"))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(ln, "only ascii PLY is supported"));
                }
            }
            Some("element") => match tok.next() {
                Some("vertex") => {
                    n_vertices = Some(parse_num::<usize>(tok.next(), ln, "vertex count")?);
                    current = "vertex";
                }
                Some("face") => {
                    n_faces = Some(parse_num::<usize>(tok.next(), ln, "face count")?);
                    current = "face";
                }
                _ => current = "other",
            },
            Some("property") if current == "vertex" => {
                let name = line.split_whitespace().last().unwrap_or_default();
                vertex_props.push(name.to_string());
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let n_vertices = n_vertices.ok_or_else(|| parse_err(0, "no vertex element"))?;
    let n_faces = n_faces.ok_or_else(|| parse_err(0, "no face element"))?;
    let col = |name: &str| vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(0, "vertex element lacks x/y/z")),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let mut vertices = Vec::with_capacity(n_vertices);
    let mut colors = rgb.map(|_| Vec::with_capacity(n_vertices));
    for _ in 0..n_vertices {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, "truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, "invalid vertex value")))
            .collect::<Result<_, _>>()?;
        if vals.len() < vertex_props.len() {
            return Err(parse_err(ln, "too few vertex properties"));
        }
        vertices.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        if let (Some(c), Some((r, g, b))) = (colors.as_mut(), rgb) {
            c.push([vals[r] as u8, vals[g] as u8, vals[b] as u8]);
        }
    }
    let mut triangles = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, "truncated face list"))?;
        let mut tok = line.split_whitespace();
        let count: usize = parse_num(tok.next(), ln, "face vertex count")?;
        if count != 3 {
            return Err(parse_err(ln, format!("only triangular faces are supported, got {count} vertices")));
        }
        let mut t = [0usize; 3];
        for slot in &mut t {
            *slot = parse_num(tok.next(), ln, "face index")?;
        }
        triangles.push(t);
    }
    let (mesh, dropped_faces) = TriangleMesh::new(vertices, triangles, colors)?;
    Ok(LoadedMesh { mesh, dropped_faces })
}

/// Wavefront OBJ: `v x y z [r g b]` (colors in 0–1) and triangular `f`
/// records; other records are ignored.
pub fn parse_obj(text: &str) -> Result<LoadedMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut colors: Vec<Option<Rgb>> = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let vals: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, "invalid vertex value")))
                    .collect::<Result<_, _>>()?;
                if vals.len() < 3 {
                    return Err(parse_err(ln, "vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(vals[0], vals[1], vals[2]));
                colors.push((vals.len() >= 6).then(|| {
                    [
                        (vals[3].clamp(0.0, 1.0) * 255.0).round() as u8,
                        (vals[4].clamp(0.0, 1.0) * 255.0).round() as u8,
                        (vals[5].clamp(0.0, 1.0) * 255.0).round() as u8,
                    ]
                }));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let k: i64 = first.parse().map_err(|_| parse_err(ln, "invalid face index"))?;
                        let resolved = if k < 0 { vertices.len() as i64 + k } else { k - 1 };
                        usize::try_from(resolved).map_err(|_| parse_err(ln, "face index out of range"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(
                        ln,
                        format!("only triangular faces are supported, got {} vertices", idx.len()),
                    ));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    let vertex_colors = if !colors.is_empty() && colors.iter().all(Option::is_some) {
        Some(colors.into_iter().flatten().collect())
    } else {
        None
    };
    if vertices.is_empty() {
        return Err(MeshError::Empty);
    }
    let (mesh, dropped_faces) = TriangleMesh::new(vertices, triangles, vertex_colors)?;
    Ok(LoadedMesh { mesh, dropped_faces })
}

/// Draws `count` points uniformly over the mesh surface.
///
/// Faces are chosen with probability proportional to area, then a point is
/// drawn uniformly inside the face. Vertex colors are interpolated when
/// present; otherwise points are gray with the front 10% along `+x` tinted
/// so the robot's heading stays readable.
pub fn sample_point_cloud(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Point3Set, MeshError> {
    if count == 0 {
        return Err(MeshError::ZeroPoints);
    }
    let areas = mesh.face_areas();
    let faces = WeightedIndex::new(&areas).map_err(|_| MeshError::Empty)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for _ in 0..count {
        let f = faces.sample(&mut rng);
        let (u1, u2): (f64, f64) = (rng.random(), rng.random());
        let s = u1.sqrt();
        let w = [1.0 - s, s * (1.0 - u2), s * u2];
        let [a, b, c] = mesh.face(f);
        points.push(a * w[0] + b * w[1] + c * w[2]);
        if let Some(vc) = mesh.vertex_colors() {
            let t = mesh.triangles()[f];
            let mut rgb = [0u8; 3];
            for (ch, out) in rgb.iter_mut().enumerate() {
                let v: f64 = (0..3).map(|k| w[k] * vc[t[k]][ch] as f64).sum();
                *out = v.round().clamp(0.0, 255.0) as u8;
            }
            colors.push(rgb);
        }
    }
    if colors.is_empty() {
        colors = heading_colors(&points);
    }
    Point3Set::new(points, Some(colors)).map_err(|e| parse_err(0, e.to_string()))
}

/// Gray body with the front decile (largest `x`) in the accent color.
fn heading_colors(points: &[Vector3<f64>]) -> Vec<Rgb> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    let cut = xs[((xs.len() as f64 * 0.9).floor() as usize).min(xs.len() - 1)];
    points
        .iter()
        .map(|p| if p.x >= cut { ACCENT_COLOR } else { BODY_COLOR })
        .collect()
}

/// Rigid placement of the model relative to the onboard camera.
///
/// Model axes are `+x` forward, `+y` left, `+z` up; camera axes are `+x`
/// right, `+y` down, `+z` forward. The model is shifted so its front face
/// sits `gap` units behind the camera's optical center.
pub fn mount_behind_camera(cloud: &Point3Set, gap: f64) -> Point3Set {
    let model_to_cam = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let rotated: Vec<_> = cloud.points().iter().map(|p| model_to_cam * p).collect();
    let front = rotated.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let shift = Vector3::new(0.0, 0.0, -(front + gap));
    let points = rotated.into_iter().map(|p| p + shift).collect();
    Point3Set::new(points, cloud.colors().map(<[Rgb]>::to_vec)).expect("rigid map keeps cloud valid")
}

fn push_box(vertices: &mut Vec<Vector3<f64>>, triangles: &mut Vec<[usize; 3]>, lo: Vector3<f64>, hi: Vector3<f64>) {
    let base = vertices.len();
    for k in 0..8 {
        vertices.push(Vector3::new(
            if k & 1 == 0 { lo.x } else { hi.x },
            if k & 2 == 0 { lo.y } else { hi.y },
            if k & 4 == 0 { lo.z } else { hi.z },
        ));
    }
    const FACES: [[usize; 3]; 12] = [
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    triangles.extend(FACES.iter().map(|f| [base + f[0], base + f[1], base + f[2]]));
}

/// Box-built stand-in for a small open-frame ROV (about 0.46 × 0.34 × 0.25
/// model units): a central hull, two side pontoons and a top buoyancy block.
pub fn builtin_rov_mesh() -> TriangleMesh {
    let mut v = Vec::new();
    let mut t = Vec::new();
    push_box(&mut v, &mut t, Vector3::new(-0.20, -0.08, -0.06), Vector3::new(0.23, 0.08, 0.06));
    push_box(&mut v, &mut t, Vector3::new(-0.23, -0.17, -0.12), Vector3::new(0.20, -0.11, 0.04));
    push_box(&mut v, &mut t, Vector3::new(-0.23, 0.11, -0.12), Vector3::new(0.20, 0.17, 0.04));
    push_box(&mut v, &mut t, Vector3::new(-0.18, -0.15, 0.06), Vector3::new(0.18, 0.15, 0.13));
    TriangleMesh::new(v, t, None).expect("builtin mesh is valid").0
}
