use nalgebra::{DMatrix, Matrix3, Vector3};

use super::GeomError;

/// A planar projective map, normalized so `h[2][2] = 1` whenever that entry
/// is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self { h: Matrix3::identity() }
    }

    pub fn from_matrix(h: Matrix3<f64>) -> Result<Self, GeomError> {
        if !h.iter().all(|c| c.is_finite()) {
            return Err(GeomError::NonFinite("homography"));
        }
        let scale = h.norm();
        if scale == 0.0 || (h / scale).determinant().abs() < 1e-14 {
            return Err(GeomError::RankDeficient("homography matrix is singular".into()));
        }
        let h = if h[(2, 2)].abs() > 1e-12 * scale { h / h[(2, 2)] } else { h };
        Ok(Self { h })
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            h: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let v = self.h * Vector3::new(p[0], p[1], 1.0);
        if v.z.abs() < 1e-15 {
            return None;
        }
        Some([v.x / v.z, v.y / v.z])
    }

    pub fn inverse(&self) -> Self {
        // Construction guarantees invertibility.
        let inv = self.h.try_inverse().expect("homography is invertible");
        Self::from_matrix(inv).unwrap_or(Self { h: inv })
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &Homography) -> Self {
        let m = self.h * other.h;
        Self::from_matrix(m).unwrap_or(Self { h: m })
    }

    /// Frobenius distance between the unit-norm representatives, resolving
    /// the overall sign ambiguity.
    pub fn projective_distance(&self, other: &Homography) -> f64 {
        let a = self.h / self.h.norm();
        let b = other.h / other.h.norm();
        (a - b).norm().min((a + b).norm())
    }
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to √2.
fn normalizing_transform(pts: &[[f64; 2]]) -> Result<Matrix3<f64>, GeomError> {
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = pts
        .iter()
        .map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return Err(GeomError::RankDeficient("points are coincident".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

fn apply_affine(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    [
        t[(0, 0)] * p[0] + t[(0, 2)],
        t[(1, 1)] * p[1] + t[(1, 2)],
    ]
}

fn has_collinear_triple(pts: &[[f64; 2]]) -> bool {
    let scale = pts
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, c| m.max(c.abs()))
        .max(1.0);
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                if cross.abs() <= 1e-9 * scale * scale {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized direct linear transform: finds `H` with `dst ~ H · src`.
pub fn estimate_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Homography, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::CorrespondenceMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 4 {
        return Err(GeomError::RankDeficient(format!(
            "need at least 4 correspondences, got {}",
            src.len()
        )));
    }
    if src.iter().chain(dst).any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(GeomError::NonFinite("correspondences"));
    }
    if src.len() == 4 && (has_collinear_triple(src) || has_collinear_triple(dst)) {
        return Err(GeomError::RankDeficient("three of the four points are collinear".into()));
    }

    let t_src = normalizing_transform(src)?;
    let t_dst = normalizing_transform(dst)?;

    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let [x, y] = apply_affine(&t_src, *s);
        let [u, v] = apply_affine(&t_dst, *d);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeomError::RankDeficient("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if !(largest > 0.0) || second_smallest <= largest * 1e-9 {
        return Err(GeomError::RankDeficient(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let null = v_t.row(order[8]);
    let hn = Matrix3::new(
        null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8],
    );
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| GeomError::RankDeficient("normalization is singular".into()))?;
    Homography::from_matrix(t_dst_inv * hn * t_src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

    #[test]
    fn identity_from_unit_square() {
        let h = estimate_homography(&SQUARE, &SQUARE).unwrap();
        assert!((h.matrix() - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn recovers_known_homography_from_six_points() {
        let h0 = Homography::from_matrix(Matrix3::new(
            1.2, 0.1, 15.0, -0.05, 0.9, -7.0, 1e-4, -2e-4, 1.0,
        ))
        .unwrap();
        let src = [
            [10.0, 20.0],
            [300.0, 40.0],
            [280.0, 260.0],
            [30.0, 220.0],
            [150.0, 130.0],
            [90.0, 60.0],
        ];
        let dst: Vec<_> = src.iter().map(|p| h0.apply(*p).unwrap()).collect();
        let h = estimate_homography(&src, &dst).unwrap();
        assert!((h.matrix() - h0.matrix()).norm() < 1e-6);
    }

    #[test]
    fn collinear_points_rejected() {
        let src = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(matches!(
            estimate_homography(&src, &SQUARE),
            Err(GeomError::RankDeficient(_))
        ));
    }

    #[test]
    fn many_collinear_points_rejected() {
        let src: Vec<_> = (0..8).map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
        let dst: Vec<_> = (0..8).map(|i| [i as f64 * 3.0, 5.0]).collect();
        assert!(estimate_homography(&src, &dst).is_err());
    }

    #[test]
    fn too_few_points() {
        assert!(estimate_homography(&SQUARE[..3], &SQUARE[..3]).is_err());
    }

    #[test]
    fn inverse_maps_back() {
        let h = Homography::from_matrix(Matrix3::new(0.9, 0.2, 3.0, 0.1, 1.1, -2.0, 1e-3, 2e-3, 1.0)).unwrap();
        let p = [12.0, -4.0];
        let q = h.inverse().apply(h.apply(p).unwrap()).unwrap();
        assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
    }

    fn arb_h0() -> impl Strategy<Value = Homography> {
        (
            0.7..1.3f64,
            0.7..1.3f64,
            -0.2..0.2f64,
            -0.2..0.2f64,
            -50.0..50.0f64,
            -50.0..50.0f64,
            -5e-4..5e-4f64,
            -5e-4..5e-4f64,
        )
            .prop_map(|(a, e, b, d, c, f, g, h)| {
                Homography::from_matrix(Matrix3::new(a, b, c, d, e, f, g, h, 1.0)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn recovery_up_to_scale(h0 in arb_h0(), pts in prop::collection::vec(prop::array::uniform2(0.0..640.0f64), 6..20)) {
            // Keep the configuration well spread.
            let mut src = vec![[20.0, 20.0], [600.0, 30.0], [610.0, 450.0], [25.0, 460.0]];
            src.extend(pts);
            let dst: Vec<_> = src.iter().map(|p| h0.apply(*p).unwrap()).collect();
            let h = estimate_homography(&src, &dst).unwrap();
            prop_assert!(h.projective_distance(&h0) < 1e-6);
        }
    }
}
