//! Two-state Kalman filter on the clock residuals. The model is linear, so
//! the extended filter reduces to the standard recursion.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::{check_residual_grid, StateTrajectory};
use crate::clock::{ClockState, ProcessNoiseCov, TransitionMatrix};
use crate::error::{Error, Result};
use crate::measurement::ResidualEpoch;

/// Filters `residuals` from the prior `(x0, p0)` placed one step before the
/// first epoch. Returns `x̂₀..x̂_K` with `x̂₀ = x0`.
pub fn ekf_run(
    residuals: &[ResidualEpoch],
    q: &ProcessNoiseCov,
    phi: &TransitionMatrix,
    x0: ClockState,
    p0: &Matrix2<f64>,
) -> Result<StateTrajectory> {
    check_residual_grid(residuals, phi.dt(), 1)?;
    if p0.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("initial covariance"));
    }
    if q.q.iter().any(|v| !v.is_finite()) || q.q[(0, 0)] < 0.0 || q.q[(1, 1)] < 0.0 || q.q.determinant() < 0.0 {
        return Err(Error::NotPositiveDefinite("process noise covariance"));
    }
    let f = phi.phi;
    let mut x: Vector2<f64> = x0.to_vector();
    let mut p = *p0;
    let mut states = Vec::with_capacity(residuals.len() + 1);
    states.push(x0);
    for (k, epoch) in residuals.iter().enumerate() {
        x = f * x;
        p = f * p * f.transpose() + q.q;

        let h = &epoch.h;
        let r = DMatrix::from_diagonal(&epoch.r_diag);
        let pd = DMatrix::from_column_slice(2, 2, p.as_slice());
        let s = h * &pd * h.transpose() + &r;
        let chol = s.cholesky().ok_or(Error::SingularInnovation(k + 1))?;
        let pht = &pd * h.transpose();
        // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ with S symmetric.
        let gain = chol.solve(&pht.transpose()).transpose();
        let xd = DVector::from_column_slice(x.as_slice());
        let innov = &epoch.z - h * &xd;
        let xn = xd + &gain * innov;
        // Joseph form keeps P symmetric positive definite.
        let ikh = DMatrix::<f64>::identity(2, 2) - &gain * h;
        let pn = &ikh * &pd * ikh.transpose() + &gain * r * gain.transpose();
        x = Vector2::new(xn[0], xn[1]);
        p = Matrix2::new(pn[(0, 0)], pn[(0, 1)], pn[(1, 0)], pn[(1, 1)]);
        p = (p + p.transpose()) * 0.5;
        states.push(ClockState::from_vector(&x));
    }
    Ok(StateTrajectory { states })
}
