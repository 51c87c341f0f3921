//! Time-synchronization attack synthesis, injection, integrity checks and
//! derivative-order classification.
//!
//! An attack is a common-mode alteration `s_ρ[k]` added to every pseudorange
//! and `s_ρ̇[k]` added to every pseudorange rate. Derivatives follow the
//! backward difference `s'[k] = (s[k] − s[k−1]) / Δt` with `s[0] = 0`, the
//! predecessor of the first epoch.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{MeasurementEpoch, NoiseLevels};

/// Shape of the injected alteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackShape {
    /// Bias step; sparse in the drift.
    Step,
    /// Bias ramp from a drift step; sparse in the acceleration.
    Ramp,
    /// Trapezoidal drift integrated into a smooth bias; sparse in the jerk.
    TrapezoidDrift,
}

impl AttackShape {
    pub fn for_order(order: u8) -> Option<Self> {
        match order {
            1 => Some(Self::Step),
            2 => Some(Self::Ramp),
            3 => Some(Self::TrapezoidDrift),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub order: u8,
    pub start_s: f64,
    pub bias_max_m: f64,
    pub drift_max_mps: f64,
    pub shape: AttackShape,
    /// Rise and fall duration of the trapezoidal drift (order 3 only).
    pub ramp_time_s: f64,
    /// When false, only pseudoranges are altered. Such an attack breaks the
    /// pseudorange / pseudorange-rate consistency a careful spoofer keeps.
    pub inject_rate: bool,
}

impl AttackSpec {
    /// Synthetic attacks used for the 241 s clean-static recording:
    /// step to 1500 m at 100 s, 5 m/s ramp from 50 s reaching 955 m, and a
    /// 5 m/s trapezoid from 10 s reaching 750 m.
    pub fn preset(order: u8) -> Result<Self> {
        let shape = AttackShape::for_order(order)
            .ok_or_else(|| Error::invalid(format!("attack order must be 1, 2 or 3, got {order}")))?;
        let (start_s, bias_max_m, drift_max_mps) = match order {
            1 => (100.0, 1500.0, 1500.0),
            2 => (50.0, 955.0, 5.0),
            _ => (10.0, 750.0, 5.0),
        };
        Ok(Self {
            order,
            start_s,
            bias_max_m,
            drift_max_mps,
            shape,
            ramp_time_s: DEFAULT_RAMP_TIME_S,
            inject_rate: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = AttackShape::for_order(self.order).ok_or_else(|| {
            Error::invalid(format!("attack order must be 1, 2 or 3, got {}", self.order))
        })?;
        if expected != self.shape {
            return Err(Error::invalid(format!(
                "order {} requires shape {:?}, got {:?}",
                self.order, expected, self.shape
            )));
        }
        if !(self.start_s.is_finite() && self.start_s >= 0.0) {
            return Err(Error::invalid("attack start must be >= 0"));
        }
        if !self.bias_max_m.is_finite() || self.bias_max_m == 0.0 {
            return Err(Error::invalid("bias_max_m must be finite and non-zero"));
        }
        if self.order >= 2 {
            if !self.drift_max_mps.is_finite() || self.drift_max_mps == 0.0 {
                return Err(Error::invalid("drift_max_mps must be finite and non-zero"));
            }
            if self.drift_max_mps.signum() != self.bias_max_m.signum() {
                return Err(Error::invalid("bias_max_m and drift_max_mps must share a sign"));
            }
        }
        if self.order == 3 && !(self.ramp_time_s.is_finite() && self.ramp_time_s > 0.0) {
            return Err(Error::invalid("ramp_time_s must be > 0"));
        }
        Ok(())
    }
}

/// Default rise/fall time of the third-order trapezoid (s).
pub const DEFAULT_RAMP_TIME_S: f64 = 50.0;

/// Alteration sequences on the epoch grid `t_k = k·Δt`, `k = 1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    pub t_s: Vec<f64>,
    pub s_rho_m: Vec<f64>,
    pub s_rhodot_mps: Vec<f64>,
    pub s_rhoddot: Vec<f64>,
    pub s_jerk: Vec<f64>,
    /// Whether `inject` adds `s_rhodot_mps` to the pseudorange rates.
    pub rate_injected: bool,
}

impl AttackTrace {
    /// Builds the full derivative chain from a bias alteration sequence.
    pub fn from_bias(t_s: Vec<f64>, s_rho_m: Vec<f64>, dt_s: f64) -> Result<Self> {
        Error::check_len("attack trace", t_s.len(), s_rho_m.len())?;
        let [d1, d2, d3] = derivative_chain(&s_rho_m, dt_s);
        Ok(Self {
            t_s,
            s_rho_m,
            s_rhodot_mps: d1,
            s_rhoddot: d2,
            s_jerk: d3,
            rate_injected: true,
        })
    }

    pub fn zeros(epochs: usize, dt_s: f64) -> Self {
        let t_s = epoch_times(epochs, dt_s);
        Self {
            t_s,
            s_rho_m: vec![0.0; epochs],
            s_rhodot_mps: vec![0.0; epochs],
            s_rhoddot: vec![0.0; epochs],
            s_jerk: vec![0.0; epochs],
            rate_injected: true,
        }
    }

    pub fn len(&self) -> usize {
        self.s_rho_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_rho_m.is_empty()
    }

    /// Rate alteration actually applied at epoch index `k`.
    pub fn injected_rate(&self, k: usize) -> f64 {
        if self.rate_injected {
            self.s_rhodot_mps[k]
        } else {
            0.0
        }
    }

    /// `[s_ρ, s_ρ̇, s_ρ̈, s_jerk]`, indexed by derivative order.
    pub fn levels(&self) -> [&[f64]; 4] {
        [&self.s_rho_m, &self.s_rhodot_mps, &self.s_rhoddot, &self.s_jerk]
    }
}

pub(crate) fn epoch_times(epochs: usize, dt_s: f64) -> Vec<f64> {
    (1..=epochs).map(|k| k as f64 * dt_s).collect()
}

/// Backward difference with a zero predecessor.
pub fn backward_difference(seq: &[f64], dt_s: f64) -> Vec<f64> {
    let mut prev = 0.0;
    seq.iter()
        .map(|&v| {
            let d = (v - prev) / dt_s;
            prev = v;
            d
        })
        .collect()
}

/// First, second and third derivatives of `seq`.
pub fn derivative_chain(seq: &[f64], dt_s: f64) -> [Vec<f64>; 3] {
    let d1 = backward_difference(seq, dt_s);
    let d2 = backward_difference(&d1, dt_s);
    let d3 = backward_difference(&d2, dt_s);
    [d1, d2, d3]
}

/// Synthesizes the alteration sequences for `epochs` epochs spaced `dt_s`.
pub fn synth_attack(spec: &AttackSpec, epochs: usize, dt_s: f64) -> Result<AttackTrace> {
    spec.validate()?;
    if epochs == 0 || !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(Error::invalid("need epochs >= 1 and dt_s > 0"));
    }
    let t = epoch_times(epochs, dt_s);
    let t_end = epochs as f64 * dt_s;
    if spec.start_s >= t_end {
        return Err(Error::invalid(format!(
            "attack start {} s is not inside the {} s recording",
            spec.start_s, t_end
        )));
    }
    let sign = spec.bias_max_m.signum();
    let bias_mag = spec.bias_max_m.abs();
    let drift_mag = spec.drift_max_mps.abs();

    let s_rho: Vec<f64> = match spec.shape {
        AttackShape::Step => t
            .iter()
            .map(|&tk| if tk >= spec.start_s { spec.bias_max_m } else { 0.0 })
            .collect(),
        AttackShape::Ramp => {
            let reachable = drift_mag * (t_end - spec.start_s);
            if reachable < bias_mag * (1.0 - 1e-12) {
                return Err(Error::invalid(format!(
                    "ramp at {drift_mag} m/s reaches only {reachable} m, below bias_max {bias_mag} m"
                )));
            }
            let mut acc = 0.0_f64;
            t.iter()
                .map(|&tk| {
                    if tk > spec.start_s {
                        acc = (acc + drift_mag * dt_s).min(bias_mag);
                    }
                    sign * acc
                })
                .collect()
        }
        AttackShape::TrapezoidDrift => {
            let rise = spec.ramp_time_s;
            let hold = bias_mag / drift_mag - rise;
            if hold < 0.0 {
                return Err(Error::invalid(format!(
                    "trapezoid with {rise} s ramps at {drift_mag} m/s overshoots bias_max {bias_mag} m"
                )));
            }
            let end = spec.start_s + 2.0 * rise + hold;
            if end > t_end + 1e-9 {
                return Err(Error::invalid(format!(
                    "trapezoid ends at {end} s, after the {t_end} s recording"
                )));
            }
            let drift_at = |tk: f64| -> f64 {
                let u = tk - spec.start_s;
                if u <= 0.0 || tk >= end {
                    0.0
                } else if u < rise {
                    drift_mag * u / rise
                } else if u <= rise + hold {
                    drift_mag
                } else {
                    drift_mag * (end - tk) / rise
                }
            };
            let mut acc = 0.0;
            t.iter()
                .map(|&tk| {
                    acc += drift_at(tk) * dt_s;
                    sign * acc
                })
                .collect()
        }
    };

    let mut trace = AttackTrace::from_bias(t, s_rho, dt_s)?;
    trace.rate_injected = spec.inject_rate;
    Ok(trace)
}

/// Adds the same alteration to every channel of every epoch.
pub fn inject(measurements: &[MeasurementEpoch], trace: &AttackTrace) -> Result<Vec<MeasurementEpoch>> {
    Error::check_len("attack trace", measurements.len(), trace.len())?;
    Ok(measurements
        .iter()
        .enumerate()
        .map(|(k, epoch)| {
            let mut e = epoch.clone();
            let (ds, dr) = (trace.s_rho_m[k], trace.injected_rate(k));
            e.pr_m.iter_mut().for_each(|p| *p += ds);
            e.prr_mps.iter_mut().for_each(|p| *p += dr);
            e
        })
        .collect())
}

/// Multipath-like step on a strict subset of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathSpec {
    pub affected_sat_ids: Vec<u32>,
    pub d_pr_m: f64,
    pub d_prr_mps: f64,
    /// Active for epochs with `start_s <= t <= stop_s`.
    pub start_s: f64,
    pub stop_s: f64,
}

impl MultipathSpec {
    pub fn validate(&self) -> Result<()> {
        if self.affected_sat_ids.is_empty() {
            return Err(Error::invalid("multipath needs at least one affected satellite"));
        }
        let unique: HashSet<_> = self.affected_sat_ids.iter().collect();
        if unique.len() != self.affected_sat_ids.len() {
            return Err(Error::invalid("duplicate satellite ids in multipath spec"));
        }
        if !(self.start_s.is_finite() && self.stop_s.is_finite() && self.start_s <= self.stop_s) {
            return Err(Error::invalid("multipath window must satisfy start <= stop"));
        }
        if !(self.d_pr_m.is_finite() && self.d_prr_mps.is_finite()) {
            return Err(Error::invalid("multipath steps must be finite"));
        }
        Ok(())
    }
}

/// Applies a multipath step to the affected channels inside its window.
pub fn inject_multipath(
    measurements: &[MeasurementEpoch],
    mp: &MultipathSpec,
) -> Result<Vec<MeasurementEpoch>> {
    mp.validate()?;
    let affected: HashSet<u32> = mp.affected_sat_ids.iter().copied().collect();
    let mut out = Vec::with_capacity(measurements.len());
    for epoch in measurements {
        let hits = epoch.sats.iter().filter(|s| affected.contains(&s.sat_id)).count();
        if hits == epoch.n_sats() {
            return Err(Error::invalid(format!(
                "multipath covers every channel at t={} s; that is a common-mode attack",
                epoch.t_s
            )));
        }
        let mut e = epoch.clone();
        if (mp.start_s..=mp.stop_s).contains(&epoch.t_s) {
            for (i, sat) in epoch.sats.iter().enumerate() {
                if affected.contains(&sat.sat_id) {
                    e.pr_m[i] += mp.d_pr_m;
                    e.prr_mps[i] += mp.d_prr_mps;
                }
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Default per-channel tolerance for the pseudorange / rate consistency
/// check, `3·(σ_ρ·√2/Δt + σ_ρ̇)`.
pub fn measurement_tolerance(noise: &NoiseLevels, dt_s: f64) -> f64 {
    3.0 * (noise.sigma_pr_m * std::f64::consts::SQRT_2 / dt_s + noise.sigma_prr_mps)
}

/// Default tolerance for the clock-level check given bias and drift
/// standard deviations of the checked series.
pub fn clock_tolerance(sigma_bias_m: f64, sigma_drift_mps: f64, dt_s: f64) -> f64 {
    3.0 * (sigma_bias_m * std::f64::consts::SQRT_2 / dt_s + sigma_drift_mps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelCheck {
    pub sat_id: u32,
    /// `|(ρ[k] − ρ[k−1])/Δt − ρ̇[k]|`.
    pub residual_mps: f64,
    pub flagged: bool,
}

/// Channel checks at one epoch; satellites absent from the previous epoch
/// are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochIntegrity {
    pub t_s: f64,
    pub channels: Vec<ChannelCheck>,
}

impl EpochIntegrity {
    pub fn flagged(&self) -> bool {
        self.channels.iter().any(|c| c.flagged)
    }
}

/// Clock-level consistency `|(b[k] − b[k−1])/Δt − ḃ[k]|` for `k ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockIntegrity {
    pub tolerance_mps: f64,
    /// Entry `i` belongs to input index `i + 1`.
    pub residual_mps: Vec<f64>,
    pub flags: Vec<bool>,
}

impl ClockIntegrity {
    pub fn any_flagged(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrityReport {
    pub tolerance_mps: f64,
    /// One entry per epoch after the first.
    pub epochs: Vec<EpochIntegrity>,
    /// Clock-level check on per-epoch clock solutions, when available.
    pub clock: Option<ClockIntegrity>,
}

impl IntegrityReport {
    pub fn flagged_times(&self) -> Vec<f64> {
        self.epochs.iter().filter(|e| e.flagged()).map(|e| e.t_s).collect()
    }
}

/// Pseudorange / pseudorange-rate consistency per channel.
pub fn check_measurement_integrity(
    measurements: &[MeasurementEpoch],
    dt_s: f64,
    tol: f64,
) -> Result<IntegrityReport> {
    if measurements.len() < 2 {
        return Err(Error::invalid("integrity check needs at least 2 epochs"));
    }
    let epochs = measurements
        .windows(2)
        .map(|w| {
            let prev: HashMap<u32, f64> = w[0]
                .sats
                .iter()
                .zip(&w[0].pr_m)
                .map(|(s, &p)| (s.sat_id, p))
                .collect();
            let channels = w[1]
                .sats
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    prev.get(&s.sat_id).map(|&p0| {
                        let residual = ((w[1].pr_m[i] - p0) / dt_s - w[1].prr_mps[i]).abs();
                        ChannelCheck {
                            sat_id: s.sat_id,
                            residual_mps: residual,
                            flagged: residual > tol,
                        }
                    })
                })
                .collect();
            EpochIntegrity {
                t_s: w[1].t_s,
                channels,
            }
        })
        .collect();
    Ok(IntegrityReport {
        tolerance_mps: tol,
        epochs,
        clock: None,
    })
}

/// Bias / drift consistency of a clock series.
pub fn check_clock_integrity(bias_m: &[f64], drift_mps: &[f64], dt_s: f64, tol: f64) -> Result<ClockIntegrity> {
    Error::check_len("drift series", bias_m.len(), drift_mps.len())?;
    if bias_m.len() < 2 {
        return Err(Error::invalid("integrity check needs at least 2 epochs"));
    }
    let residual_mps: Vec<f64> = (1..bias_m.len())
        .map(|k| ((bias_m[k] - bias_m[k - 1]) / dt_s - drift_mps[k]).abs())
        .collect();
    let flags = residual_mps.iter().map(|&r| r > tol).collect();
    Ok(ClockIntegrity {
        tolerance_mps: tol,
        residual_mps,
        flags,
    })
}

/// What counts as a spike when testing a sequence for sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeThreshold {
    /// A sample is active when `|v| > fraction · max|v|` of its own level.
    RelativeToPeak(f64),
    /// A sample is active when `|v| > value`.
    Absolute(f64),
}

impl Default for SpikeThreshold {
    fn default() -> Self {
        Self::RelativeToPeak(1e-6)
    }
}

/// Default ratio of active samples below which a sequence is sparse.
pub const DEFAULT_SPARSITY_RATIO: f64 = 0.05;

pub fn is_sparse(seq: &[f64], threshold: SpikeThreshold, sparsity_ratio: f64) -> bool {
    if seq.is_empty() {
        return true;
    }
    let cut = match threshold {
        SpikeThreshold::RelativeToPeak(f) => f * seq.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        SpikeThreshold::Absolute(v) => v,
    };
    let active = seq.iter().filter(|v| v.abs() > cut).count();
    (active as f64) < sparsity_ratio * seq.len() as f64
}

/// Smallest derivative order (0 = bias, 1 = drift, 2 = acceleration,
/// 3 = jerk) at which the trace is sparse. `None` for an all-zero trace or
/// one that is dense up to the jerk.
pub fn classify_order(trace: &AttackTrace, threshold: SpikeThreshold, sparsity_ratio: f64) -> Option<u8> {
    if trace.s_rho_m.iter().all(|&v| v == 0.0) {
        return None;
    }
    trace
        .levels()
        .iter()
        .position(|level| is_sparse(level, threshold, sparsity_ratio))
        .map(|m| m as u8)
}
