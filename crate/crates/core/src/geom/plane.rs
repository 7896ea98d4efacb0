use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::GeomError;

/// `normal · x = offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    /// Normalizes `normal`; the offset is rescaled to match.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, GeomError> {
        let n = normal.norm();
        if !(n > 1e-12) || !n.is_finite() || !offset.is_finite() {
            return Err(GeomError::Degenerate("plane normal must be finite and non-zero".into()));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self, GeomError> {
        let n = normal
            .try_normalize(1e-12)
            .ok_or_else(|| GeomError::Degenerate("zero plane normal".into()))?;
        Ok(Self {
            normal: n,
            offset: n.dot(point),
        })
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed distance along the normal.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Same plane with the normal (and offset) negated.
    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Plane moved by `distance` along its normal.
    pub fn shifted(&self, distance: f64) -> Self {
        Self {
            normal: self.normal,
            offset: self.offset + distance,
        }
    }

    /// Ray/plane intersection parameter `s` with `origin + s * dir` on the plane.
    pub fn intersect_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        Some((self.offset - self.normal.dot(origin)) / denom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Root-mean-square point-to-plane distance.
    pub rms: f64,
}

/// Total least-squares plane through a point set.
///
/// The normal is the eigenvector of the scatter matrix with the smallest
/// eigenvalue. Sign is canonicalized so that `offset >= 0`; when the plane
/// passes through the origin the largest normal component is positive.
pub fn fit_plane(points: &[Vector3<f64>]) -> Result<PlaneFit, GeomError> {
    if points.len() < 3 {
        return Err(GeomError::Degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (middle, largest) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(largest > 0.0) || middle <= largest * 1e-14 {
        return Err(GeomError::Degenerate("points are coincident or collinear".into()));
    }
    let mut normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let mut offset = normal.dot(&centroid);
    let scale = centroid.norm().max(largest.sqrt());
    if offset < -1e-12 * scale.max(1.0) {
        normal = -normal;
        offset = -offset;
    } else if offset.abs() <= 1e-12 * scale.max(1.0) {
        let imax = normal.iamax();
        if normal[imax] < 0.0 {
            normal = -normal;
            offset = -offset;
        }
    }
    let plane = Plane { normal, offset };
    let rms = (points.iter().map(|p| plane.signed_distance(p).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PlaneFit { plane, rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn horizontal_plane() {
        let pts: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 3.0), (-1.0, 5.0)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 0.0))
            .collect();
        let fit = fit_plane(&pts).unwrap();
        assert!((fit.plane.normal().z.abs() - 1.0).abs() < 1e-12);
        assert!(fit.plane.offset().abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn oblique_plane() {
        // x + y + z = 3
        let pts: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, -3.0), (-1.0, 5.0), (4.0, 4.0)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 3.0 - x - y))
            .collect();
        let fit = fit_plane(&pts).unwrap();
        let expected = Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        assert!((fit.plane.normal() - expected).norm() < 1e-12);
        assert!((fit.plane.offset() - 3f64.sqrt()).abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn two_points_is_degenerate() {
        let pts = [Vector3::zeros(), Vector3::x()];
        assert!(matches!(fit_plane(&pts), Err(GeomError::Degenerate(_))));
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 1.0)).collect();
        assert!(matches!(fit_plane(&pts), Err(GeomError::Degenerate(_))));
    }

    #[test]
    fn noisy_normal_error_scales_with_sigma() {
        let truth = Vector3::new(0.0, 10f64.to_radians().sin(), 10f64.to_radians().cos());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sigma in [1e-4, 1e-3, 1e-2] {
            let noise = Normal::new(0.0, sigma).unwrap();
            let u = truth.cross(&Vector3::x()).normalize();
            let v = truth.cross(&u);
            let pts: Vec<_> = (0..400)
                .map(|_| {
                    let a: f64 = rng.random_range(-5.0..5.0);
                    let b: f64 = rng.random_range(-5.0..5.0);
                    truth * 2.0 + u * a + v * b + truth * noise.sample(&mut rng)
                })
                .collect();
            let fit = fit_plane(&pts).unwrap();
            let angle = fit.plane.normal().dot(&truth).abs().min(1.0).acos();
            assert!(angle < 10.0 * sigma, "sigma {sigma}: angle {angle}");
            assert!((fit.rms - sigma).abs() < 0.2 * sigma);
        }
    }

    #[test]
    fn shifted_and_projected() {
        let p = Plane::new(Vector3::new(0.0, 0.0, 2.0), 4.0).unwrap();
        assert_eq!(p.offset(), 2.0);
        let q = p.shifted(-2.0);
        assert!(q.signed_distance(&Vector3::zeros()).abs() < 1e-15);
        let x = Vector3::new(1.0, 2.0, 7.0);
        assert!(p.signed_distance(&p.project(&x)).abs() < 1e-12);
    }
}
