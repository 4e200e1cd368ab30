//! Fallback reference: a quintic lateral path from lane centre to shoulder
//! centre, sampled together with a goal velocity over the NMPC horizon.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("manoeuvre duration must be positive and finite, got {0} s")]
    DegenerateDuration(f64),
    #[error("boundary conditions produce a singular system")]
    Singular,
}

/// `p(t) = sum_i coeffs[i] t^i` on `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticPath {
    pub coeffs: [f64; 6],
    pub duration: f64,
    pub y_start: f64,
    pub y_goal: f64,
}

/// One horizon sample of the tracking reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub z_v_x: f64,
    pub z_d_y: f64,
    pub z_theta: f64,
}

/// Fit the quintic meeting position, slope and curvature at both ends.
pub fn fit_quintic(
    y0: f64,
    y0p: f64,
    y0pp: f64,
    yf: f64,
    yfp: f64,
    yfpp: f64,
    duration: f64,
) -> Result<QuinticPath, TrajectoryError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(TrajectoryError::DegenerateDuration(duration));
    }
    // The start conditions fix the three low-order coefficients directly; the
    // end conditions leave a 3x3 system for the rest.
    let t = duration;
    let (c0, c1, c2) = (y0, y0p, 0.5 * y0pp);
    let m = SMatrix::<f64, 3, 3>::new(
        t.powi(3),
        t.powi(4),
        t.powi(5),
        3.0 * t.powi(2),
        4.0 * t.powi(3),
        5.0 * t.powi(4),
        6.0 * t,
        12.0 * t.powi(2),
        20.0 * t.powi(3),
    );
    let rhs = SVector::<f64, 3>::new(
        yf - (c0 + c1 * t + c2 * t * t),
        yfp - (c1 + 2.0 * c2 * t),
        yfpp - 2.0 * c2,
    );
    let high = m.lu().solve(&rhs).ok_or(TrajectoryError::Singular)?;
    let coeffs = [c0, c1, c2, high[0], high[1], high[2]];
    Ok(QuinticPath {
        coeffs,
        duration,
        y_start: y0,
        y_goal: yf,
    })
}

impl QuinticPath {
    /// Rest-to-rest lateral move from `y_start` to `y_goal`.
    pub fn lane_change(y_start: f64, y_goal: f64, duration: f64) -> Result<Self, TrajectoryError> {
        fit_quintic(y_start, 0.0, 0.0, y_goal, 0.0, 0.0, duration)
    }

    pub fn position(&self, t: f64) -> f64 {
        let c = &self.coeffs;
        c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let c = &self.coeffs;
        c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])))
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        let c = &self.coeffs;
        2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]))
    }
}

/// Sample `horizon` reference points starting at `t_now` (path time, measured
/// from the start of the manoeuvre) with spacing `dt`.
///
/// The heading reference is the path slope converted with `heading_speed`,
/// the longitudinal speed the vehicle is expected to have along the path.
/// Past the end of the path the terminal point is held exactly.
pub fn sample_reference(
    path: &QuinticPath,
    t_now: f64,
    goal_velocity: f64,
    heading_speed: f64,
    horizon: usize,
    dt: f64,
) -> Vec<ReferencePoint> {
    (0..horizon)
        .map(|k| {
            let t = t_now + k as f64 * dt;
            if t >= path.duration {
                return ReferencePoint {
                    z_v_x: goal_velocity,
                    z_d_y: path.y_goal,
                    z_theta: 0.0,
                };
            }
            let t = t.max(0.0);
            ReferencePoint {
                z_v_x: goal_velocity,
                z_d_y: path.position(t),
                z_theta: (path.velocity(t) / heading_speed.max(f64::EPSILON)).atan(),
            }
        })
        .collect()
}
