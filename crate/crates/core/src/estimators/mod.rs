//! Clock estimators: the Kalman-filter baseline and the attack-resilient
//! batch smoother.

pub mod banded;
pub mod ekf;
pub mod tsarm;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::clock::{ClockState, TransitionMatrix};
use crate::error::{Error, Result};
use crate::measurement::ResidualEpoch;

pub use ekf::ekf_run;
pub use tsarm::{
    d2_matrix, kkt_check, split_outputs, tsarm_objective, tsarm_solve, tsarm_solve_warm, D2Boundary,
    SolverConfig, SolverDiagnostics, SplitOutputs, TsarmProblem, TsarmSolution,
};

/// Clock states `x̂₀..x̂_K`; index `k` belongs to epoch `k` (1-based), with
/// `x̂₀` one step before the first measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub states: Vec<ClockState>,
}

impl StateTrajectory {
    /// Number of measurement epochs `K`.
    pub fn epochs(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Bias estimates at the measurement epochs.
    pub fn bias(&self) -> Vec<f64> {
        self.states.iter().skip(1).map(|s| s.bias_m).collect()
    }

    /// Drift estimates at the measurement epochs.
    pub fn drift(&self) -> Vec<f64> {
        self.states.iter().skip(1).map(|s| s.drift_mps).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(ClockState::is_finite)
    }
}

/// Estimated common-mode alterations at the measurement epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct AlterationTrajectory {
    pub s_bias_m: Vec<f64>,
    pub s_drift_mps: Vec<f64>,
}

impl AlterationTrajectory {
    pub fn zeros(epochs: usize) -> Self {
        Self {
            s_bias_m: vec![0.0; epochs],
            s_drift_mps: vec![0.0; epochs],
        }
    }

    pub fn len(&self) -> usize {
        self.s_bias_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_bias_m.is_empty()
    }
}

/// Weak Gaussian prior on `x₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub bias_std_m: f64,
    pub drift_std_mps: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            bias_std_m: 1000.0,
            drift_std_mps: 100.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bias_std_m > 0.0 && self.drift_std_mps > 0.0)
            || !(self.bias_std_m.is_finite() && self.drift_std_mps.is_finite())
        {
            return Err(Error::invalid("prior standard deviations must be finite and > 0"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.bias_std_m.powi(2), 0.0, 0.0, self.drift_std_mps.powi(2))
    }

    /// Prior on `x₀`: the first epoch's WLS solution stepped back once.
    pub fn around_first_epoch(
        &self,
        residuals: &[ResidualEpoch],
        phi: &TransitionMatrix,
    ) -> Result<(ClockState, Matrix2<f64>)> {
        let first = residuals
            .first()
            .ok_or_else(|| Error::Degenerate("no measurement epochs".into()))?;
        if first.n_sats() == 0 {
            return Err(Error::Degenerate("first epoch has no satellites".into()));
        }
        let (x1, _, _) = first.wls();
        let back = phi
            .phi
            .try_inverse()
            .expect("transition matrix is unit upper triangular");
        let m: Vector2<f64> = back * x1.to_vector();
        Ok((ClockState::from_vector(&m), self.covariance()))
    }
}

/// Checks `K ≥ min_epochs`, non-empty epochs and spacing equal to `dt_s`.
pub(crate) fn check_residual_grid(residuals: &[ResidualEpoch], dt_s: f64, min_epochs: usize) -> Result<()> {
    if residuals.len() < min_epochs {
        return Err(Error::Degenerate(format!(
            "need at least {min_epochs} epochs, got {}",
            residuals.len()
        )));
    }
    for (k, r) in residuals.iter().enumerate() {
        if r.n_sats() == 0 {
            return Err(Error::Degenerate(format!("epoch {k} has no satellites")));
        }
        if r.z.len() != r.r_diag.len() || r.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("epoch {k} has malformed residuals")));
        }
        if r.r_diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::NotPositiveDefinite("measurement noise covariance"));
        }
    }
    for (k, w) in residuals.windows(2).enumerate() {
        let step = w[1].t_s - w[0].t_s;
        if (step - dt_s).abs() > 1e-6 * dt_s {
            return Err(Error::invalid(format!(
                "epoch spacing {step} s at epoch {} differs from dt {dt_s} s",
                k + 1
            )));
        }
    }
    Ok(())
}
