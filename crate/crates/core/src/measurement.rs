//! Observable model for a stationary receiver: pseudoranges, pseudorange
//! rates, the known geometric sequence `c_k`, and the residual `z_k = y_k - c_k`
//! that feeds the clock estimators.
//!
//! Transmit-time iteration, atmospheric delays and Earth rotation are not
//! modeled. Observables are produced and consumed with the same geometry.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clock::ClockState;
use crate::error::{Error, Result};

/// Circular MEO orbit radius (m).
pub const ORBIT_RADIUS_M: f64 = 26_560_000.0;
/// Orbital period, 11 h 58 min (s).
pub const ORBIT_PERIOD_S: f64 = 11.0 * 3600.0 + 58.0 * 60.0;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_14e-3;
const MIN_ELEVATION_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteEpoch {
    pub sat_id: u32,
    pub pos_ecef_m: Vector3<f64>,
    pub vel_ecef_mps: Vector3<f64>,
    /// Satellite clock bias `c·b_n` (m).
    pub clock_bias_m: f64,
    /// Satellite clock drift `c·ḃ_n` (m/s).
    pub clock_drift_mps: f64,
}

/// Known receiver geometry plus its true clock trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverTruth {
    pub pos_ecef_m: Vector3<f64>,
    /// Always zero: the receiver is stationary.
    pub vel_ecef_mps: Vector3<f64>,
    pub clock: Vec<ClockState>,
}

impl ReceiverTruth {
    pub fn stationary(pos_ecef_m: Vector3<f64>, clock: Vec<ClockState>) -> Self {
        Self {
            pos_ecef_m,
            vel_ecef_mps: Vector3::zeros(),
            clock,
        }
    }
}

/// Observables of all tracked satellites at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEpoch {
    pub t_s: f64,
    pub sats: Vec<SatelliteEpoch>,
    pub pr_m: Vec<f64>,
    pub prr_mps: Vec<f64>,
    pub var_pr_m2: Vec<f64>,
    pub var_prr_m2ps2: Vec<f64>,
}

impl MeasurementEpoch {
    pub fn n_sats(&self) -> usize {
        self.sats.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sats.len();
        if n == 0 {
            return Err(Error::Degenerate(format!(
                "epoch t={} has no satellites",
                self.t_s
            )));
        }
        Error::check_len("pseudoranges", n, self.pr_m.len())?;
        Error::check_len("pseudorange rates", n, self.prr_mps.len())?;
        Error::check_len("pseudorange variances", n, self.var_pr_m2.len())?;
        Error::check_len("pseudorange-rate variances", n, self.var_prr_m2ps2.len())?;
        if self
            .var_pr_m2
            .iter()
            .chain(&self.var_prr_m2ps2)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid(format!(
                "epoch t={} has non-positive variances",
                self.t_s
            )));
        }
        Ok(())
    }

    /// Stacked observation vector `y_k = [ρ; ρ̇]`.
    pub fn observation(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.n_sats(),
            self.pr_m.iter().chain(&self.prr_mps).copied(),
        )
    }

    /// Diagonal of `R_k`.
    pub fn variances(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.n_sats(),
            self.var_pr_m2.iter().chain(&self.var_prr_m2ps2).copied(),
        )
    }
}

/// Residual `z_k` with its measurement matrix and noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEpoch {
    pub t_s: f64,
    pub z: DVector<f64>,
    pub h: DMatrix<f64>,
    /// Diagonal of `R_k`, same ordering as `z`.
    pub r_diag: DVector<f64>,
}

impl ResidualEpoch {
    pub fn n_sats(&self) -> usize {
        self.z.len() / 2
    }

    /// Information matrix `Hᵀ R⁻¹ H`, diagonal because of the stacked layout.
    pub fn information(&self) -> (f64, f64) {
        let n = self.n_sats();
        let wb = self.r_diag.rows(0, n).iter().map(|v| 1.0 / v).sum();
        let wd = self.r_diag.rows(n, n).iter().map(|v| 1.0 / v).sum();
        (wb, wd)
    }

    /// Weighted least-squares clock solution of this epoch alone, with its
    /// bias and drift variances.
    pub fn wls(&self) -> (ClockState, f64, f64) {
        let n = self.n_sats();
        let (wb, wd) = self.information();
        let bias = (0..n).map(|i| self.z[i] / self.r_diag[i]).sum::<f64>() / wb;
        let drift = (n..2 * n).map(|i| self.z[i] / self.r_diag[i]).sum::<f64>() / wd;
        (ClockState::new(bias, drift), 1.0 / wb, 1.0 / wd)
    }
}

/// `H_k`: ones mapping bias onto the pseudorange block and drift onto the
/// pseudorange-rate block.
pub fn measurement_matrix(n_sats: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(2 * n_sats, 2);
    for i in 0..n_sats {
        h[(i, 0)] = 1.0;
        h[(n_sats + i, 1)] = 1.0;
    }
    h
}

fn line_of_sight(sat_pos: &Vector3<f64>, user_pos: &Vector3<f64>) -> Result<(f64, Vector3<f64>)> {
    let d = sat_pos - user_pos;
    let range = d.norm();
    if !range.is_finite() {
        return Err(Error::invalid("non-finite position"));
    }
    if range == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    Ok((range, d / range))
}

/// `ρ = ‖p_n − p_u‖ + (c·b_u − c·b_n) + ϵ`.
pub fn pseudorange(
    sat: &SatelliteEpoch,
    user_pos: &Vector3<f64>,
    user_clock_bias_m: f64,
    noise_m: f64,
) -> Result<f64> {
    let (range, _) = line_of_sight(&sat.pos_ecef_m, user_pos)?;
    Ok(range + (user_clock_bias_m - sat.clock_bias_m) + noise_m)
}

/// `ρ̇ = (v_n − v_u)ᵀ·(p_n − p_u)/‖p_n − p_u‖ + (c·ḃ_u − c·ḃ_n) + ϵ`.
pub fn pseudorange_rate(
    sat: &SatelliteEpoch,
    user_pos: &Vector3<f64>,
    user_vel: &Vector3<f64>,
    user_clock_drift_mps: f64,
    noise_mps: f64,
) -> Result<f64> {
    let (_, los) = line_of_sight(&sat.pos_ecef_m, user_pos)?;
    let range_rate = (sat.vel_ecef_mps - user_vel).dot(&los);
    Ok(range_rate + (user_clock_drift_mps - sat.clock_drift_mps) + noise_mps)
}

/// The known sequence `c_k` for a stationary receiver at `user_pos`.
pub fn known_sequence(epoch: &MeasurementEpoch, user_pos: &Vector3<f64>) -> Result<DVector<f64>> {
    let n = epoch.n_sats();
    let mut c = DVector::zeros(2 * n);
    for (i, sat) in epoch.sats.iter().enumerate() {
        let (range, los) = line_of_sight(&sat.pos_ecef_m, user_pos)?;
        c[i] = range - sat.clock_bias_m;
        c[n + i] = sat.vel_ecef_mps.dot(&los) - sat.clock_drift_mps;
    }
    Ok(c)
}

/// `z_k = y_k − c_k` together with `H_k` and the diagonal of `R_k`.
pub fn residual(epoch: &MeasurementEpoch, c: &DVector<f64>) -> Result<ResidualEpoch> {
    epoch.validate()?;
    let n = epoch.n_sats();
    Error::check_len("known sequence", 2 * n, c.len())?;
    Ok(ResidualEpoch {
        t_s: epoch.t_s,
        z: epoch.observation() - c,
        h: measurement_matrix(n),
        r_diag: epoch.variances(),
    })
}

/// Residuals for a whole recording.
pub fn residuals(epochs: &[MeasurementEpoch], user_pos: &Vector3<f64>) -> Result<Vec<ResidualEpoch>> {
    epochs
        .iter()
        .map(|e| residual(e, &known_sequence(e, user_pos)?))
        .collect()
}

/// Geodetic site on the WGS-84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodeticSite {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
}

impl Default for GeodeticSite {
    /// Austin, Texas.
    fn default() -> Self {
        Self {
            lat_deg: 30.2866,
            lon_deg: -97.7366,
            height_m: 180.0,
        }
    }
}

impl GeodeticSite {
    pub fn to_ecef(&self) -> Vector3<f64> {
        let (lat, lon) = (self.lat_deg.to_radians(), self.lon_deg.to_radians());
        let n = WGS84_A / (1.0 - WGS84_E2 * lat.sin().powi(2)).sqrt();
        Vector3::new(
            (n + self.height_m) * lat.cos() * lon.cos(),
            (n + self.height_m) * lat.cos() * lon.sin(),
            (n * (1.0 - WGS84_E2) + self.height_m) * lat.sin(),
        )
    }
}

/// Local east/north/up unit vectors at an ECEF position (spherical normal).
fn enu_basis(pos: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let up = pos.normalize();
    let east = Vector3::z().cross(&up).normalize();
    let north = up.cross(&east);
    (east, north, up)
}

fn elevation_deg(sat_pos: &Vector3<f64>, user_pos: &Vector3<f64>) -> f64 {
    let (_, _, up) = enu_basis(user_pos);
    let los = (sat_pos - user_pos).normalize();
    los.dot(&up).asin().to_degrees()
}

/// A circular orbit parameterized by its position at `t = 0`.
#[derive(Debug, Clone, Copy)]
struct CircularOrbit {
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    clock_bias0_m: f64,
    clock_drift_mps: f64,
}

impl CircularOrbit {
    fn at(&self, sat_id: u32, t_s: f64) -> SatelliteEpoch {
        let omega = 2.0 * std::f64::consts::PI / ORBIT_PERIOD_S;
        let (s, c) = (omega * t_s).sin_cos();
        SatelliteEpoch {
            sat_id,
            pos_ecef_m: ORBIT_RADIUS_M * (c * self.e1 + s * self.e2),
            vel_ecef_mps: ORBIT_RADIUS_M * omega * (-s * self.e1 + c * self.e2),
            clock_bias_m: self.clock_bias0_m + self.clock_drift_mps * t_s,
            clock_drift_mps: self.clock_drift_mps,
        }
    }
}

/// Builds `n_sats` circular MEO orbits that stay above the horizon of
/// `user_pos` for epochs `t_k = k·dt_s`, `k = 1..=epochs`.
///
/// Each satellite starts at a drawn azimuth/elevation and moves in a plane of
/// drawn orientation. Satellite clocks follow `a0 + a1·t` with constant
/// coefficients. Returned as one list per epoch, sorted by satellite id.
pub fn synth_constellation(
    seed: u64,
    n_sats: usize,
    epochs: usize,
    dt_s: f64,
    user_pos: &Vector3<f64>,
) -> Result<Vec<Vec<SatelliteEpoch>>> {
    if !(4..=12).contains(&n_sats) {
        return Err(Error::invalid(format!(
            "satellite count must be in 4..=12, got {n_sats}"
        )));
    }
    if epochs == 0 {
        return Err(Error::invalid("epoch count must be >= 1"));
    }
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(Error::invalid(format!("dt_s must be > 0, got {dt_s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prns: Vec<u32> = (1..=32).collect();
    prns.shuffle(&mut rng);
    let mut ids: Vec<u32> = prns[..n_sats].to_vec();
    ids.sort_unstable();

    let (east, north, up) = enu_basis(user_pos);
    let sector = 360.0 / n_sats as f64;
    let times: Vec<f64> = (1..=epochs).map(|k| k as f64 * dt_s).collect();

    let mut orbits = Vec::with_capacity(n_sats);
    for i in 0..n_sats {
        let mut accepted = None;
        for _ in 0..1000 {
            let az = (i as f64 * sector + rng.gen_range(0.0..sector)).to_radians();
            let el = rng.gen_range(20.0_f64..75.0).to_radians();
            let los = el.cos() * (az.sin() * east + az.cos() * north) + el.sin() * up;
            // |p_u + r·los| = R
            let b = user_pos.dot(&los);
            let r = -b + (b * b - user_pos.norm_squared() + ORBIT_RADIUS_M.powi(2)).sqrt();
            let p0 = user_pos + r * los;
            let e1 = p0 / ORBIT_RADIUS_M;
            let t1 = Vector3::z().cross(&e1).normalize();
            let t2 = e1.cross(&t1);
            let psi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let e2 = psi.cos() * t1 + psi.sin() * t2;
            let orbit = CircularOrbit {
                e1,
                e2,
                clock_bias0_m: rng.gen_range(-3.0e4..3.0e4),
                clock_drift_mps: rng.gen_range(-0.3..0.3),
            };
            let visible = times
                .iter()
                .all(|&t| elevation_deg(&orbit.at(0, t).pos_ecef_m, user_pos) > MIN_ELEVATION_DEG);
            if visible {
                accepted = Some(orbit);
                break;
            }
        }
        orbits.push(accepted.ok_or_else(|| {
            Error::invalid("could not place a satellite above the horizon for the whole run")
        })?);
    }

    Ok(times
        .iter()
        .map(|&t| {
            ids.iter()
                .zip(&orbits)
                .map(|(&id, orbit)| orbit.at(id, t))
                .collect()
        })
        .collect())
}

/// Per-channel measurement noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLevels {
    pub sigma_pr_m: f64,
    pub sigma_prr_mps: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            sigma_pr_m: 5.0,
            sigma_prr_mps: 0.5,
        }
    }
}

impl NoiseLevels {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_pr_m > 0.0 && self.sigma_prr_mps > 0.0)
            || !self.sigma_pr_m.is_finite()
            || !self.sigma_prr_mps.is_finite()
        {
            return Err(Error::invalid("noise standard deviations must be > 0"));
        }
        Ok(())
    }
}

/// Generates observables for epochs `k = 1..=K` from a constellation and the
/// receiver truth (whose clock holds `K + 1` states, index 0 being `t = 0`).
///
/// With `noisy = false` the observables are exact but the declared variances
/// are still those of `noise`.
pub fn generate_measurements(
    constellation: &[Vec<SatelliteEpoch>],
    receiver: &ReceiverTruth,
    dt_s: f64,
    noise: &NoiseLevels,
    noisy: bool,
    seed: u64,
) -> Result<Vec<MeasurementEpoch>> {
    noise.validate()?;
    Error::check_len("receiver clock states", constellation.len() + 1, receiver.clock.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pr = Normal::new(0.0, noise.sigma_pr_m).map_err(|e| Error::invalid(e.to_string()))?;
    let n_prr = Normal::new(0.0, noise.sigma_prr_mps).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(constellation.len());
    for (k, sats) in constellation.iter().enumerate() {
        let clock = receiver.clock[k + 1];
        let n = sats.len();
        let mut pr = Vec::with_capacity(n);
        let mut prr = Vec::with_capacity(n);
        for sat in sats {
            let (e_pr, e_prr) = if noisy {
                (n_pr.sample(&mut rng), n_prr.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            pr.push(pseudorange(sat, &receiver.pos_ecef_m, clock.bias_m, e_pr)?);
            prr.push(pseudorange_rate(
                sat,
                &receiver.pos_ecef_m,
                &receiver.vel_ecef_mps,
                clock.drift_mps,
                e_prr,
            )?);
        }
        out.push(MeasurementEpoch {
            t_s: (k + 1) as f64 * dt_s,
            sats: sats.clone(),
            pr_m: pr,
            prr_mps: prr,
            var_pr_m2: vec![noise.sigma_pr_m.powi(2); n],
            var_prr_m2ps2: vec![noise.sigma_prr_mps.powi(2); n],
        });
    }
    Ok(out)
}
