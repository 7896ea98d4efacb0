//! Statistical and surface checks for area-weighted mesh sampling.

use eob_core::rov::{builtin_rov_mesh, sample_point_cloud, TriangleMesh};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closest point on triangle `abc` to `p` (region-based, after Ericson).
fn closest_on_triangle(p: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Vector3<f64> {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn nearest_face(mesh: &TriangleMesh, p: &Vector3<f64>) -> (usize, f64) {
    (0..mesh.triangles().len())
        .map(|i| {
            let [a, b, c] = mesh.face(i);
            (i, (closest_on_triangle(*p, a, b, c) - p).norm())
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
}

/// 100 disjoint triangles of varied size, stacked along z.
fn hundred_face_fixture() -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for i in 0..100 {
        let s: f64 = rng.random_range(0.2..2.0);
        let z = i as f64 * 0.5;
        let base = vertices.len();
        vertices.push(Vector3::new(0.0, 0.0, z));
        vertices.push(Vector3::new(s, 0.0, z));
        vertices.push(Vector3::new(rng.random_range(0.0..s), rng.random_range(0.3..1.5) * s, z + 0.1));
        triangles.push([base, base + 1, base + 2]);
    }
    TriangleMesh::new(vertices, triangles, None).unwrap().0
}

#[test]
fn per_face_counts_pass_chi_square() {
    let mesh = hundred_face_fixture();
    let m = 40_000;
    let cloud = sample_point_cloud(&mesh, m, 2024).unwrap();
    let mut counts = vec![0usize; 100];
    for p in cloud.points() {
        let (face, dist) = nearest_face(&mesh, p);
        assert!(dist < 1e-9);
        counts[face] += 1;
    }
    let areas = mesh.face_areas();
    let total: f64 = areas.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(&areas)
        .map(|(&o, a)| {
            let e = m as f64 * a / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // 99th percentile of the chi-square distribution with 99 degrees of freedom.
    const CRITICAL: f64 = 134.642;
    assert!(chi2 < CRITICAL, "chi-square {chi2} exceeds {CRITICAL}");
}

#[test]
fn builtin_model_samples_lie_on_surface() {
    let mesh = builtin_rov_mesh();
    let cloud = sample_point_cloud(&mesh, 10_000, 5).unwrap();
    assert_eq!(cloud.len(), 10_000);
    for p in cloud.points().iter().step_by(7) {
        assert!(nearest_face(&mesh, p).1 < 1e-9);
    }
}

#[test]
fn seeds_are_reproducible_and_distinct() {
    let mesh = hundred_face_fixture();
    let a = sample_point_cloud(&mesh, 500, 1).unwrap();
    assert_eq!(a, sample_point_cloud(&mesh, 500, 1).unwrap());
    assert_ne!(a, sample_point_cloud(&mesh, 500, 2).unwrap());
}
