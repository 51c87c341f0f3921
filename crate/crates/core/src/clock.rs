//! Two-state receiver clock model.
//!
//! The state is `[c·b_u, c·ḃ_u]`: clock bias in meters and clock drift in
//! meters per second. Keeping everything in meters means the speed of light
//! only shows up where oscillator parameters (given in seconds) are mapped
//! into the process noise.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Allan white-frequency coefficient of a typical TCXO (s).
pub const TCXO_H0: f64 = 9.4e-20;
/// Allan random-walk-frequency coefficient of a typical TCXO (1/s).
pub const TCXO_H_NEG2: f64 = 3.8e-21;

/// Receiver clock bias (m) and drift (m/s) at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockState {
    pub bias_m: f64,
    pub drift_mps: f64,
}

impl ClockState {
    pub const fn new(bias_m: f64, drift_mps: f64) -> Self {
        Self { bias_m, drift_mps }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.bias_m, self.drift_mps)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.bias_m.is_finite() && self.drift_mps.is_finite()
    }
}

/// Oscillator parameters and discretization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockModelParams {
    /// White frequency noise coefficient h0 (s).
    pub h0: f64,
    /// Random-walk frequency noise coefficient h₋₂ (1/s).
    pub h_neg2: f64,
    /// Discretization interval (s).
    pub dt_s: f64,
}

impl Default for ClockModelParams {
    fn default() -> Self {
        Self {
            h0: TCXO_H0,
            h_neg2: TCXO_H_NEG2,
            dt_s: 1.0,
        }
    }
}

impl ClockModelParams {
    /// Checks the parameters a filter or smoother needs: `h0 > 0` keeps Q
    /// invertible.
    pub fn validate(&self) -> Result<()> {
        self.validate_allow_noiseless()?;
        if self.h0 <= 0.0 {
            return Err(Error::invalid(format!("h0 must be > 0, got {}", self.h0)));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but admits `h0 = 0`, which is only
    /// meaningful for noiseless truth generation.
    pub fn validate_allow_noiseless(&self) -> Result<()> {
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(Error::invalid(format!("dt_s must be > 0, got {}", self.dt_s)));
        }
        if !(self.h0.is_finite() && self.h0 >= 0.0) {
            return Err(Error::invalid(format!("h0 must be >= 0, got {}", self.h0)));
        }
        if !(self.h_neg2.is_finite() && self.h_neg2 >= 0.0) {
            return Err(Error::invalid(format!(
                "h_neg2 must be >= 0, got {}",
                self.h_neg2
            )));
        }
        Ok(())
    }
}

/// Process noise covariance of `w_k`, in m², m²/s and m²/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoiseCov {
    pub q: Matrix2<f64>,
}

impl ProcessNoiseCov {
    /// Inverse of Q, failing when Q is singular.
    pub fn inverse(&self) -> Result<Matrix2<f64>> {
        let chol = self
            .q
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("process noise covariance"))?;
        Ok(chol.inverse())
    }

    /// Lower-triangular factor `L` with `L·Lᵀ = Q`, tolerating a singular Q.
    pub fn sqrt_psd(&self) -> Matrix2<f64> {
        let q = &self.q;
        let l00 = q[(0, 0)].max(0.0).sqrt();
        let l10 = if l00 > 0.0 { q[(1, 0)] / l00 } else { 0.0 };
        let l11 = (q[(1, 1)] - l10 * l10).max(0.0).sqrt();
        Matrix2::new(l00, 0.0, l10, l11)
    }
}

/// Discrete constant-drift transition `[[1, Δt], [0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub phi: Matrix2<f64>,
}

impl TransitionMatrix {
    pub fn dt(&self) -> f64 {
        self.phi[(0, 1)]
    }
}

pub fn transition_matrix(dt_s: f64) -> Result<TransitionMatrix> {
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(Error::invalid(format!("dt_s must be > 0, got {dt_s}")));
    }
    Ok(TransitionMatrix {
        phi: Matrix2::new(1.0, dt_s, 0.0, 1.0),
    })
}

/// Two-state clock process noise from Allan coefficients.
///
/// With `Sf = h0/2` and `Sg = 2π²·h₋₂`:
///
/// ```text
/// Q = c² · [ Sf·Δt + Sg·Δt³/3   Sg·Δt²/2 ]
///          [ Sg·Δt²/2           Sg·Δt    ]
/// ```
pub fn process_noise(params: &ClockModelParams) -> Result<ProcessNoiseCov> {
    params.validate_allow_noiseless()?;
    let dt = params.dt_s;
    let sf = params.h0 / 2.0;
    let sg = 2.0 * std::f64::consts::PI.powi(2) * params.h_neg2;
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    let q00 = c2 * (sf * dt + sg * dt.powi(3) / 3.0);
    let q01 = c2 * sg * dt.powi(2) / 2.0;
    let q11 = c2 * sg * dt;
    Ok(ProcessNoiseCov {
        q: Matrix2::new(q00, q01, q01, q11),
    })
}

/// One step of `x_k = Φ·x_{k-1} + w_k`.
pub fn propagate(
    state: ClockState,
    phi: &TransitionMatrix,
    noise: Option<Vector2<f64>>,
) -> ClockState {
    let mut next = phi.phi * state.to_vector();
    if let Some(w) = noise {
        next += w;
    }
    ClockState::from_vector(&next)
}

/// Simulates `epochs` steps of the clock from `x0`, returning `epochs + 1`
/// states (the initial state first). Deterministic for a given seed.
pub fn simulate_clock_truth(
    params: &ClockModelParams,
    x0: ClockState,
    epochs: usize,
    seed: u64,
) -> Result<Vec<ClockState>> {
    if epochs == 0 {
        return Err(Error::invalid("epoch count must be >= 1"));
    }
    if !x0.is_finite() {
        return Err(Error::invalid("initial clock state must be finite"));
    }
    let phi = transition_matrix(params.dt_s)?;
    let sqrt_q = process_noise(params)?.sqrt_psd();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(epochs + 1);
    states.push(x0);
    let mut x = x0;
    for _ in 0..epochs {
        let n0: f64 = StandardNormal.sample(&mut rng);
        let n1: f64 = StandardNormal.sample(&mut rng);
        let w = sqrt_q * Vector2::new(n0, n1);
        x = propagate(x, &phi, Some(w));
        states.push(x);
    }
    Ok(states)
}
