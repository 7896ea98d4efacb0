use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SimError;
use crate::geom::Pose;

/// Accumulating random-walk pose error, a stand-in for odometry drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Translation noise standard deviation per step and axis.
    pub sigma_t: f64,
    /// Rotation-vector noise standard deviation per step and axis (radians).
    pub sigma_r: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sigma_t >= 0.0 && self.sigma_t.is_finite() && self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(SimError::InvalidParams(format!(
                "noise sigmas must be finite and non-negative (sigma_t={}, sigma_r={})",
                self.sigma_t, self.sigma_r
            )));
        }
        Ok(())
    }
}

/// Applies an accumulated random walk to a pose sequence. Pose `k` carries the
/// sum of `k` independent per-step perturbations: the translation error is
/// added in the world frame and the rotation error is composed on the right
/// (body frame). The first pose is left untouched.
pub fn corrupt_poses(poses: &[Pose], noise: &NoiseModel) -> Result<Vec<Pose>, SimError> {
    noise.validate()?;
    if noise.sigma_t == 0.0 && noise.sigma_r == 0.0 {
        return Ok(poses.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let nt = Normal::new(0.0, noise.sigma_t).expect("validated sigma");
    let nr = Normal::new(0.0, noise.sigma_r).expect("validated sigma");
    let mut t_err = Vector3::zeros();
    let mut r_err = Matrix3::identity();
    let mut out = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        if k > 0 {
            t_err += Vector3::from_fn(|_, _| nt.sample(&mut rng));
            let w = Vector3::from_fn(|_, _| nr.sample(&mut rng));
            r_err *= Rotation3::new(w).matrix();
        }
        // Re-orthonormalize to keep long walks inside the validation tolerance.
        let rot = Rotation3::from_matrix(&(pose.rotation() * r_err));
        out.push(Pose::new(*rot.matrix(), pose.translation() + t_err, pose.timestamp())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_trajectory, PlanarParams, TrajectoryKind};

    fn base(steps: usize) -> Vec<Pose> {
        generate_trajectory(&TrajectoryKind::Planar2Dof(PlanarParams::default()), steps).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let poses = base(50);
        let out = corrupt_poses(&poses, &NoiseModel::none()).unwrap();
        assert_eq!(out, poses);
    }

    #[test]
    fn same_seed_same_output() {
        let poses = base(50);
        let noise = NoiseModel {
            sigma_t: 0.01,
            sigma_r: 0.002,
            seed: 11,
        };
        assert_eq!(corrupt_poses(&poses, &noise).unwrap(), corrupt_poses(&poses, &noise).unwrap());
        let other = NoiseModel { seed: 12, ..noise };
        assert_ne!(corrupt_poses(&poses, &noise).unwrap(), corrupt_poses(&poses, &other).unwrap());
    }

    #[test]
    fn first_pose_untouched_and_timestamps_kept() {
        let poses = base(10);
        let noise = NoiseModel {
            sigma_t: 0.1,
            sigma_r: 0.1,
            seed: 1,
        };
        let out = corrupt_poses(&poses, &noise).unwrap();
        assert_eq!(out[0].translation(), poses[0].translation());
        for (a, b) in out.iter().zip(&poses) {
            assert_eq!(a.timestamp(), b.timestamp());
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let noise = NoiseModel {
            sigma_t: -1.0,
            sigma_r: 0.0,
            seed: 0,
        };
        assert!(corrupt_poses(&base(3), &noise).is_err());
    }

    #[test]
    fn translation_error_follows_sqrt_law() {
        let sigma = 0.01;
        let steps = 100;
        let seeds = 50;
        let poses = base(steps);
        let mut mean_err = vec![0.0; steps];
        for seed in 0..seeds {
            let noise = NoiseModel {
                sigma_t: sigma,
                sigma_r: 0.0,
                seed,
            };
            let out = corrupt_poses(&poses, &noise).unwrap();
            for k in 0..steps {
                mean_err[k] += (out[k].translation() - poses[k].translation()).norm() / seeds as f64;
            }
        }
        // Least-squares fit of mean_err[k] ≈ c·√k.
        let (num, den) = (1..steps).fold((0.0, 0.0), |(n, d), k| {
            let s = (k as f64).sqrt();
            (n + s * mean_err[k], d + s * s)
        });
        let c = num / den;
        // E‖e_k‖ for an isotropic 3-D Gaussian walk is σ√k·2√(2/π).
        let expected = sigma * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((c / expected - 1.0).abs() < 0.3, "fit {c} vs {expected}");
        for (k, err) in mean_err.iter().enumerate().skip(1) {
            let law = c * (k as f64).sqrt();
            assert!((err / law - 1.0).abs() < 0.3, "k={k}: {err} vs {law}");
        }
    }
}
