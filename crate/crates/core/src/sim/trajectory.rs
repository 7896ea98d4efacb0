use nalgebra::Vector3;

use super::SimError;
use crate::geom::{look_rotation, rot_z, Pose};

/// Unicycle motion on the ground plane with a forward-looking camera mounted
/// at a fixed height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarParams {
    /// Forward speed (units per second).
    pub linear_velocity: f64,
    /// Yaw rate (radians per second).
    pub angular_velocity: f64,
    pub dt: f64,
    pub camera_height: f64,
    /// Initial `(x, y, heading)`.
    pub start: [f64; 3],
}

impl Default for PlanarParams {
    fn default() -> Self {
        Self {
            linear_velocity: 0.5,
            angular_velocity: 0.05,
            dt: 0.04,
            camera_height: 0.3,
            start: [0.0, 0.0, 0.0],
        }
    }
}

/// A C²-continuous path through waypoints, with the camera looking along the
/// path tangent and rolling into turns.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineParams {
    pub waypoints: Vec<Vector3<f64>>,
    pub dt: f64,
    /// Roll angle per unit of signed curvature (radians · units).
    pub bank_gain: f64,
    pub max_bank: f64,
}

impl SplineParams {
    /// Gently undulating tunnel-like path heading along `+x`.
    pub fn corridor(length: f64, waypoint_count: usize) -> Self {
        let n = waypoint_count.max(2);
        let waypoints = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let x = s * length;
                Vector3::new(x, 0.35 * (1.3 * x).sin(), 0.2 * (0.9 * x + 1.0).sin())
            })
            .collect();
        Self {
            waypoints,
            dt: 0.04,
            bank_gain: 0.3,
            max_bank: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    Planar2Dof(PlanarParams),
    Smooth6Dof(SplineParams),
}

pub fn generate_trajectory(kind: &TrajectoryKind, steps: usize) -> Result<Vec<Pose>, SimError> {
    if steps < 2 {
        return Err(SimError::InvalidParams(format!("need at least 2 steps, got {steps}")));
    }
    match kind {
        TrajectoryKind::Planar2Dof(p) => planar(p, steps),
        TrajectoryKind::Smooth6Dof(p) => spline(p, steps),
    }
}

fn planar(p: &PlanarParams, steps: usize) -> Result<Vec<Pose>, SimError> {
    let finite = [p.linear_velocity, p.angular_velocity, p.dt, p.camera_height]
        .iter()
        .chain(p.start.iter())
        .all(|v| v.is_finite());
    if !finite || !(p.dt > 0.0) {
        return Err(SimError::InvalidParams("planar parameters must be finite with dt > 0".into()));
    }
    let [x0, y0, th0] = p.start;
    let (v, w) = (p.linear_velocity, p.angular_velocity);
    (0..steps)
        .map(|k| {
            let t = k as f64 * p.dt;
            let th = th0 + w * t;
            // Exact unicycle integration from the start state.
            let (x, y) = if w.abs() < 1e-12 {
                (x0 + v * t * th0.cos(), y0 + v * t * th0.sin())
            } else {
                let r = v / w;
                (x0 + r * (th.sin() - th0.sin()), y0 - r * (th.cos() - th0.cos()))
            };
            let forward = Vector3::new(th.cos(), th.sin(), 0.0);
            let rot = look_rotation(&forward, &Vector3::z()).expect("horizontal heading");
            Pose::new(rot, Vector3::new(x, y, p.camera_height), t).map_err(SimError::from)
        })
        .collect()
}

/// Natural cubic spline through uniformly parameterized knots, one axis.
struct CubicSpline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2y[i] + y[i-1]).
            let m = n - 2;
            let mut diag = vec![4.0; m];
            let mut rhs: Vec<f64> = (1..n - 1)
                .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]))
                .collect();
            for i in 1..m {
                let factor = 1.0 / diag[i - 1];
                diag[i] -= factor;
                rhs[i] -= factor * rhs[i - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - second[i + 2]) / diag[i];
            }
        }
        Self { values, second }
    }

    /// Value, first and second derivative at parameter `s ∈ [0, n-1]`.
    fn eval(&self, s: f64) -> (f64, f64, f64) {
        let last = self.values.len() - 1;
        let i = (s.floor() as usize).min(last - 1);
        let t = s - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let a = 1.0 - t;
        let value = a * y0 + t * y1 + ((a * a * a - a) * m0 + (t * t * t - t) * m1) / 6.0;
        let d1 = y1 - y0 + ((-3.0 * a * a + 1.0) * m0 + (3.0 * t * t - 1.0) * m1) / 6.0;
        let d2 = a * m0 + t * m1;
        (value, d1, d2)
    }
}

fn spline(p: &SplineParams, steps: usize) -> Result<Vec<Pose>, SimError> {
    if p.waypoints.len() < 2 {
        return Err(SimError::InvalidParams("need at least 2 waypoints".into()));
    }
    if !(p.dt > 0.0) || !p.bank_gain.is_finite() || !(p.max_bank >= 0.0) {
        return Err(SimError::InvalidParams("spline parameters must be finite with dt > 0".into()));
    }
    let axis = |k: usize| CubicSpline::new(p.waypoints.iter().map(|w| w[k]).collect());
    let (sx, sy, sz) = (axis(0), axis(1), axis(2));
    let span = (p.waypoints.len() - 1) as f64;
    let up = Vector3::z();
    (0..steps)
        .map(|k| {
            let s = span * k as f64 / (steps - 1) as f64;
            let (x, dx, ddx) = sx.eval(s);
            let (y, dy, ddy) = sy.eval(s);
            let (z, dz, ddz) = sz.eval(s);
            let vel = Vector3::new(dx, dy, dz);
            let acc = Vector3::new(ddx, ddy, ddz);
            let speed2 = vel.norm_squared();
            let base = look_rotation(&vel, &up)
                .ok_or_else(|| SimError::InvalidParams("path tangent is vertical or zero".into()))?;
            let forward = vel / speed2.sqrt();
            let curvature = forward.cross(&acc).dot(&up) / speed2;
            let bank = (p.bank_gain * curvature).clamp(-p.max_bank, p.max_bank);
            let rot = base * rot_z(bank);
            Pose::new(rot, Vector3::new(x, y, z), k as f64 * p.dt).map_err(SimError::from)
        })
        .collect()
}
