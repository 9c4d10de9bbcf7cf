//! Constant-acceleration Kalman tracking of a neighbouring vehicle.
//!
//! The ego vehicle only senses its own position and the bumper gaps to its
//! neighbours. Each gap reading is converted into an absolute reference-point
//! position for the neighbour and filtered to recover its speed and acceleration.

use serde::{Deserialize, Serialize};

use crate::sim::Vehicle;
use crate::{Error, Result};

type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanParams {
    /// Standard deviation of the white-jerk process noise (m/s³).
    pub process_jerk_std: f64,
    /// Standard deviation of a position measurement (m).
    pub meas_std: f64,
    /// Diagonal of the initial covariance (position, velocity, acceleration).
    pub init_var: [f64; 3],
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_jerk_std: 2.0,
            meas_std: 0.05,
            init_var: [1.0, 4.0, 4.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanTrack {
    /// Position, velocity, acceleration.
    pub state: [f64; 3],
    pub covariance: Mat3,
    pub process_jerk_std: f64,
    pub meas_std: f64,
}

/// Which neighbour a track follows, relative to the ego vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Front,
    Rear,
}

fn transition(dt: f64) -> Mat3 {
    [[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn symmetrize(p: &mut Mat3) {
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let m = 0.5 * (p[i][j] + p[j][i]);
        p[i][j] = m;
        p[j][i] = m;
    }
}

impl KalmanTrack {
    pub fn new(position: f64, velocity: f64, acceleration: f64, params: &KalmanParams) -> Self {
        let [p0, p1, p2] = params.init_var;
        Self {
            state: [position, velocity, acceleration],
            covariance: [[p0, 0.0, 0.0], [0.0, p1, 0.0], [0.0, 0.0, p2]],
            process_jerk_std: params.process_jerk_std,
            meas_std: params.meas_std,
        }
    }

    pub fn position(&self) -> f64 {
        self.state[0]
    }

    pub fn velocity(&self) -> f64 {
        self.state[1]
    }

    pub fn acceleration(&self) -> f64 {
        self.state[2]
    }

    /// Discrete white-jerk process noise `q·G·Gᵀ` with `G = [dt³/6, dt²/2, dt]`.
    pub fn process_noise(&self, dt: f64) -> Mat3 {
        let q = self.process_jerk_std * self.process_jerk_std;
        let g = [dt * dt * dt / 6.0, 0.5 * dt * dt, dt];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = q * g[i] * g[j];
            }
        }
        out
    }

    pub fn predict(&self, dt: f64) -> Self {
        let f = transition(dt);
        let mut state = [0.0; 3];
        for (i, row) in f.iter().enumerate() {
            state[i] = (0..3).map(|k| row[k] * self.state[k]).sum();
        }
        let q = self.process_noise(dt);
        let mut cov = mat_mul(&mat_mul(&f, &self.covariance), &transpose(&f));
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += q[i][j];
            }
        }
        symmetrize(&mut cov);
        Self {
            state,
            covariance: cov,
            ..*self
        }
    }

    /// Position-only measurement update (Joseph form).
    pub fn update(&self, measured_position: f64) -> Self {
        let r = self.meas_std * self.meas_std;
        let p = &self.covariance;
        let s = p[0][0] + r;
        if s.is_nan() || s <= 0.0 || s.is_infinite() {
            return *self;
        }
        let k = [p[0][0] / s, p[1][0] / s, p[2][0] / s];
        let innovation = measured_position - self.state[0];
        let mut state = self.state;
        for i in 0..3 {
            state[i] += k[i] * innovation;
        }
        // (I - K H) with H = [1, 0, 0].
        let mut ikh = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            ikh[i][0] -= k[i];
        }
        let mut cov = mat_mul(&mat_mul(&ikh, p), &transpose(&ikh));
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += k[i] * r * k[j];
            }
        }
        symmetrize(&mut cov);
        Self {
            state,
            covariance: cov,
            ..*self
        }
    }
}

/// Absolute reference-point position of a neighbour implied by a gap reading.
///
/// Front neighbours are located by their rear bumper, rear neighbours by their
/// front bumper.
pub fn neighbor_position(ego: &Vehicle, gap_meas: f64, side: Side) -> Result<f64> {
    if !gap_meas.is_finite() {
        return Err(Error::NonFinite("gap_meas"));
    }
    if gap_meas < 0.0 {
        return Err(Error::NegativeGap(gap_meas));
    }
    Ok(match side {
        Side::Front => ego.state.x + gap_meas,
        Side::Rear => ego.state.x - ego.spec.length - gap_meas,
    })
}

/// One predict/update cycle of a neighbour track from a fresh gap reading.
pub fn track_neighbor(
    ego: &Vehicle,
    gap_meas: f64,
    side: Side,
    track: &KalmanTrack,
    dt: f64,
) -> Result<KalmanTrack> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidTimeStep(dt));
    }
    let z = neighbor_position(ego, gap_meas, side)?;
    Ok(track.predict(dt).update(z))
}
