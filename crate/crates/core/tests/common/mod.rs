//! Shared test support: an independent brute-force reference for the
//! sparse smoother and the model invariants as deterministic proptest
//! runners. Used by the property, oracle and acceptance targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsa_core::attack::{
    check_measurement_integrity, classify_order, derivative_chain, inject, is_sparse, synth_attack, AttackShape,
    AttackSpec, AttackTrace, SpikeThreshold, DEFAULT_SPARSITY_RATIO,
};
use tsa_core::clock::{process_noise, simulate_clock_truth, transition_matrix, ClockModelParams, ClockState};
use tsa_core::estimators::{
    d2_matrix, ekf_run, tsarm_objective, tsarm_solve, D2Boundary, PriorConfig, SolverConfig, TsarmProblem,
};
use tsa_core::measurement::{
    generate_measurements, residuals, synth_constellation, GeodeticSite, MeasurementEpoch, NoiseLevels,
    ReceiverTruth, ResidualEpoch,
};

const C: f64 = 299_792_458.0;

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

/// Stationary receiver data with an optional alteration.
pub fn scenario_data(
    epochs: usize,
    n_sats: usize,
    seed: u64,
    x0: ClockState,
    trace: Option<&AttackTrace>,
) -> (Vec<ClockState>, Vec<MeasurementEpoch>, nalgebra::Vector3<f64>) {
    let clock = simulate_clock_truth(&ClockModelParams::default(), x0, epochs, seed).unwrap();
    let user = GeodeticSite::default().to_ecef();
    let sats = synth_constellation(seed, n_sats, epochs, 1.0, &user).unwrap();
    let truth = ReceiverTruth::stationary(user, clock.clone());
    let mut meas = generate_measurements(&sats, &truth, 1.0, &NoiseLevels::default(), true, seed ^ 0x5a5a).unwrap();
    if let Some(tr) = trace {
        meas = inject(&meas, tr).unwrap();
    }
    (clock, meas, user)
}

// ---------------------------------------------------------------------------
// Brute-force reference

pub struct OracleInstance {
    pub residuals: Vec<ResidualEpoch>,
    pub clock: ClockModelParams,
    pub cfg: SolverConfig,
}

/// Random tiny problem: K = 8 epochs, N = 4 satellites, a step or ramp
/// alteration, random λ and μ.
pub fn oracle_instance(seed: u64, boundary: D2Boundary) -> OracleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 8;
    let at = rng.gen_range(2..k - 1);
    let amp: f64 = rng.gen_range(-200.0..200.0);
    let ramp = rng.gen_bool(0.5);
    let bias: Vec<f64> = (0..k)
        .map(|i| match (i < at, ramp) {
            (true, _) => 0.0,
            (false, true) => 0.05 * amp * (i - at + 1) as f64,
            (false, false) => amp,
        })
        .collect();
    let t: Vec<f64> = (1..=k).map(|i| i as f64).collect();
    let trace = AttackTrace::from_bias(t, bias, 1.0).unwrap();
    let x0 = ClockState::new(rng.gen_range(-500.0..500.0), rng.gen_range(-3.0..3.0));
    let (_, meas, user) = scenario_data(k, 4, seed, x0, Some(&trace));
    let cfg = SolverConfig {
        lambda: 10f64.powf(rng.gen_range(-1.0..2.0)),
        mu_integrity: 10f64.powf(rng.gen_range(-1.0..1.0)),
        lambda_drift: 0.0,
        d2_boundary: boundary,
        ..SolverConfig::default()
    };
    OracleInstance {
        residuals: residuals(&meas, &user).unwrap(),
        clock: ClockModelParams::default(),
        cfg,
    }
}

/// Dense restatement of the objective in its own variable layout:
/// `[x₀, x₁, …, x_K, s₁, …, s_K]`, two entries each.
struct Dense {
    k: usize,
    z: Vec<DVector<f64>>,
    h: Vec<DMatrix<f64>>,
    rinv: Vec<DMatrix<f64>>,
    phi: Matrix2<f64>,
    qinv: Matrix2<f64>,
    m0: Vector2<f64>,
    p0inv: Matrix2<f64>,
    lambda: f64,
    mu: f64,
    eps: f64,
    dt: f64,
    d2: DMatrix<f64>,
}

impl Dense {
    fn new(inst: &OracleInstance) -> Self {
        let k = inst.residuals.len();
        let dt = inst.clock.dt_s;
        let (sf, sg) = (inst.clock.h0 / 2.0, 2.0 * std::f64::consts::PI.powi(2) * inst.clock.h_neg2);
        let q = C * C * Matrix2::new(sf * dt + sg * dt.powi(3) / 3.0, sg * dt * dt / 2.0, sg * dt * dt / 2.0, sg * dt);
        let phi = Matrix2::new(1.0, dt, 0.0, 1.0);
        let r0 = &inst.residuals[0];
        let rinv0 = DMatrix::from_diagonal(&r0.r_diag.map(|v| 1.0 / v));
        let info = r0.h.transpose() * &rinv0 * &r0.h;
        let x1 = info.clone().lu().solve(&(r0.h.transpose() * &rinv0 * &r0.z)).unwrap();
        let m0 = phi.try_inverse().unwrap() * Vector2::new(x1[0], x1[1]);
        assert_eq!(inst.cfg.prior, PriorConfig::default());
        let d2 = match inst.cfg.d2_boundary {
            D2Boundary::Interior => {
                let mut d = DMatrix::zeros(k - 2, k);
                for i in 0..k - 2 {
                    d[(i, i)] = 1.0;
                    d[(i, i + 1)] = -2.0;
                    d[(i, i + 2)] = 1.0;
                }
                d
            }
            D2Boundary::Causal => {
                let mut d = DMatrix::zeros(k, k);
                for i in 0..k {
                    d[(i, i)] = 1.0;
                    if i >= 1 {
                        d[(i, i - 1)] = -2.0;
                    }
                    if i >= 2 {
                        d[(i, i - 2)] = 1.0;
                    }
                }
                d
            }
        };
        Dense {
            k,
            z: inst.residuals.iter().map(|r| r.z.clone()).collect(),
            h: inst.residuals.iter().map(|r| r.h.clone()).collect(),
            rinv: inst
                .residuals
                .iter()
                .map(|r| DMatrix::from_diagonal(&r.r_diag.map(|v| 1.0 / v)))
                .collect(),
            phi,
            qinv: q.try_inverse().unwrap(),
            m0,
            p0inv: Matrix2::new(1e-6, 0.0, 0.0, 1e-4),
            lambda: inst.cfg.lambda,
            mu: inst.cfg.mu_integrity,
            eps: inst.cfg.eps_ridge,
            dt,
            d2,
        }
    }

    fn n(&self) -> usize {
        4 * self.k + 2
    }

    fn x(&self, v: &DVector<f64>, j: usize) -> Vector2<f64> {
        Vector2::new(v[2 * j], v[2 * j + 1])
    }

    fn s_at(&self, k: usize) -> usize {
        2 * (self.k + 1) + 2 * (k - 1)
    }

    fn s(&self, v: &DVector<f64>, k: usize) -> Vector2<f64> {
        Vector2::new(v[self.s_at(k)], v[self.s_at(k) + 1])
    }

    fn smooth(&self, v: &DVector<f64>) -> f64 {
        let mut f = 0.0;
        for k in 1..=self.k {
            let y = self.x(v, k) + self.s(v, k);
            let e = &self.z[k - 1] - &self.h[k - 1] * DVector::from_column_slice(y.as_slice());
            f += 0.5 * (e.transpose() * &self.rinv[k - 1] * &e)[0];
            let w = self.x(v, k) - self.phi * self.x(v, k - 1);
            f += 0.5 * (w.transpose() * self.qinv * w)[0];
            let prev = if k > 1 { self.s(v, k - 1)[0] } else { 0.0 };
            let c = self.s(v, k)[0] - prev - self.dt * self.s(v, k)[1];
            f += self.mu * c * c + self.eps * self.s(v, k).norm_squared();
        }
        let d = self.x(v, 0) - self.m0;
        f + 0.5 * (d.transpose() * self.p0inv * d)[0]
    }

    /// Rows of the ℓ₁ operator in this layout.
    fn l1_rows(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.d2.nrows(), self.n());
        for i in 0..self.d2.nrows() {
            for k in 1..=self.k {
                a[(i, self.s_at(k) + 1)] = self.d2[(i, k - 1)];
            }
        }
        a
    }

    fn objective(&self, v: &DVector<f64>) -> f64 {
        self.smooth(v) + self.lambda * (self.l1_rows() * v).abs().sum()
    }

    fn pack(&self, sol: &tsa_core::estimators::TsarmSolution) -> DVector<f64> {
        let mut v = DVector::zeros(self.n());
        for (j, st) in sol.states.states.iter().enumerate() {
            v[2 * j] = st.bias_m;
            v[2 * j + 1] = st.drift_mps;
        }
        for k in 1..=self.k {
            v[self.s_at(k)] = sol.alterations.s_bias_m[k - 1];
            v[self.s_at(k) + 1] = sol.alterations.s_drift_mps[k - 1];
        }
        v
    }

    /// Exact minimum: every sign pattern of the ℓ₁ rows gives an
    /// equality-constrained quadratic solved by LU; the true objective is
    /// evaluated at each candidate and the smallest kept.
    fn brute_force(&self) -> (f64, DVector<f64>) {
        let n = self.n();
        let g0 = self.smooth(&DVector::zeros(n));
        let unit = |i: usize| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        let gi: Vec<f64> = (0..n).map(|i| self.smooth(&unit(i))).collect();
        // polarization of the quadratic smooth part
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // g(eᵢ+eⱼ) − g(eᵢ) − g(eⱼ) + g(0) = Pᵢⱼ, also for i = j
                let pij = self.smooth(&(unit(i) + unit(j))) - gi[i] - gi[j] + g0;
                p[(i, j)] = pij;
                p[(j, i)] = pij;
            }
        }
        let q = DVector::from_fn(n, |i, _| gi[i] - g0 - 0.5 * p[(i, i)]);
        let a = self.l1_rows();
        let m = a.nrows();
        let mut best = (f64::INFINITY, DVector::zeros(n));
        for code in 0..3usize.pow(m as u32) {
            let mut c = code;
            let signs: Vec<i32> = (0..m)
                .map(|_| {
                    let s = (c % 3) as i32 - 1;
                    c /= 3;
                    s
                })
                .collect();
            let zero: Vec<usize> = (0..m).filter(|&i| signs[i] == 0).collect();
            let dim = n + zero.len();
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p);
            let mut rhs = DVector::zeros(dim);
            let mut lin = -q.clone();
            for i in 0..m {
                if signs[i] != 0 {
                    lin -= self.lambda * signs[i] as f64 * a.row(i).transpose();
                }
            }
            rhs.rows_mut(0, n).copy_from(&lin);
            for (r, &i) in zero.iter().enumerate() {
                for col in 0..n {
                    kkt[(n + r, col)] = a[(i, col)];
                    kkt[(col, n + r)] = a[(i, col)];
                }
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let v = sol.rows(0, n).into_owned();
            let f = self.objective(&v);
            if f < best.0 {
                best = (f, v);
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub oracle_objective: f64,
    /// Solver-reported objective vs the brute-force minimum.
    pub rel_err_reported: f64,
    /// Reference objective evaluated at the solver's point vs the minimum.
    pub rel_err_at_solution: f64,
    /// Library objective vs reference objective at the solver's point.
    pub rel_err_definition: f64,
    pub kkt_scaled: f64,
    pub converged: bool,
}

pub fn check_oracle(inst: &OracleInstance) -> OracleOutcome {
    let dense = Dense::new(inst);
    let (fmin, _) = dense.brute_force();
    let sol = tsarm_solve(&inst.residuals, &inst.clock, &inst.cfg).unwrap();
    let v = dense.pack(&sol);
    let at_sol = dense.objective(&v);
    let lib = tsarm_objective(&sol.states, &sol.alterations, &inst.residuals, &inst.clock, &inst.cfg).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let z_norm = TsarmProblem::new(&inst.residuals, &inst.clock, &inst.cfg).unwrap().z_norm();
    OracleOutcome {
        oracle_objective: fmin,
        rel_err_reported: rel(sol.diagnostics.objective, fmin),
        rel_err_at_solution: rel(at_sol, fmin),
        rel_err_definition: rel(lib, at_sol),
        kkt_scaled: sol.diagnostics.kkt_residual / (1.0 + z_norm),
        converged: sol.diagnostics.converged,
    }
}

// ---------------------------------------------------------------------------
// Model invariants

type PropResult = Result<(), String>;

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> PropResult {
    r.map_err(|e| e.to_string())
}

/// `Φ(a)Φ(b) = Φ(a+b)`, `Q(a+b) = Φ(b)Q(a)Φ(b)ᵀ + Q(b)` and `Q ⪰ 0`.
pub fn prop_clock_semigroup(cases: u32) -> PropResult {
    let strat = (-24.0..-18.0f64, -24.0..-18.0f64, 0.01..50.0f64, 0.01..50.0f64);
    report(runner(cases).run(&strat, |(l0, l2, a, b)| {
        let params = |dt| ClockModelParams {
            h0: 10f64.powf(l0),
            h_neg2: 10f64.powf(l2),
            dt_s: dt,
        };
        let (pa, pb, pab) = (
            transition_matrix(a).unwrap().phi,
            transition_matrix(b).unwrap().phi,
            transition_matrix(a + b).unwrap().phi,
        );
        prop_assert!((pa * pb - pab).abs().max() < 1e-9 * (a + b));
        let (qa, qb, qab) = (
            process_noise(&params(a)).unwrap().q,
            process_noise(&params(b)).unwrap().q,
            process_noise(&params(a + b)).unwrap().q,
        );
        let composed = pb * qa * pb.transpose() + qb;
        prop_assert!((composed - qab).abs().max() <= 1e-9 * qab.abs().max());
        let eig = qab.symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-12 * eig.max());
        Ok(())
    }))
}

/// Each derivative level integrates back to the previous one:
/// `v[k] − v[k−1] = Δt · v′[k]` with a zero predecessor.
pub fn prop_chain_closure(cases: u32) -> PropResult {
    let strat = (prop::collection::vec(-2000.0..2000.0f64, 1..120), 0.05..5.0f64);
    report(runner(cases).run(&strat, |(seq, dt)| {
        let [d1, d2, d3] = derivative_chain(&seq, dt);
        for (lower, upper) in [(&seq, &d1), (&d1, &d2), (&d2, &d3)] {
            let scale = lower.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            let mut prev = 0.0;
            for (lo, up) in lower.iter().zip(upper.iter()) {
                prop_assert!((lo - prev - dt * up).abs() <= 1e-12 * scale);
                prev = *lo;
            }
        }
        Ok(())
    }))
}

/// The chain holds for synthesized attacks too, and with the rate injected
/// the altered measurements stay as consistent as the clean ones.
pub fn prop_attack_chain_and_integrity(cases: u32) -> PropResult {
    let strat = (1u8..=3, 0u64..1000);
    report(runner(cases).run(&strat, |(order, seed)| {
        let spec = AttackSpec::preset(order).unwrap();
        let tr = synth_attack(&spec, 241, 1.0).unwrap();
        let mut prev = 0.0;
        for k in 0..tr.len() {
            prop_assert!((tr.s_rho_m[k] - prev - tr.s_rhodot_mps[k]).abs() < 1e-9);
            prev = tr.s_rho_m[k];
        }
        let (_, clean, _) = scenario_data(30, 5, seed, ClockState::new(100.0, 0.5), None);
        let short = AttackTrace::from_bias(
            tr.t_s[..30].to_vec(),
            (0..30).map(|k| 3.0 * (k as f64).powi(2)).collect(),
            1.0,
        )
        .unwrap();
        let attacked = inject(&clean, &short).unwrap();
        let tol = 1e9;
        let a = check_measurement_integrity(&clean, 1.0, tol).unwrap();
        let b = check_measurement_integrity(&attacked, 1.0, tol).unwrap();
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            for (ca, cb) in ea.channels.iter().zip(&eb.channels) {
                prop_assert!((ca.residual_mps - cb.residual_mps).abs() < 1e-6);
            }
        }
        Ok(())
    }))
}

/// The interior second difference maps every affine sequence to zero; the
/// causal form only sees it in its two boundary rows.
pub fn prop_d2_annihilates_affine(cases: u32) -> PropResult {
    let strat = (3usize..80, -1e4..1e4f64, -100.0..100.0f64);
    report(runner(cases).run(&strat, |(k, a, b)| {
        let seq = DVector::from_fn(k, |i, _| a + b * i as f64);
        let scale = a.abs() + b.abs() * k as f64;
        let inner = d2_matrix(k, D2Boundary::Interior).unwrap() * &seq;
        prop_assert_eq!(inner.len(), k - 2);
        prop_assert!(inner.amax() <= 1e-12 * scale.max(1.0));
        let causal = d2_matrix(k, D2Boundary::Causal).unwrap() * &seq;
        prop_assert!(causal.rows(2, k - 2).amax() <= 1e-12 * scale.max(1.0));
        Ok(())
    }))
}

/// Adding a dynamically consistent common-mode offset `c + d·t` to every
/// pseudorange and `d` to every rate shifts both estimators' clock by the
/// same offset and leaves the alteration estimates unchanged.
pub fn prop_common_mode_equivariance(cases: u32) -> PropResult {
    let strat = (0u64..1000, -5000.0..5000.0f64, -20.0..20.0f64, 1u8..=2);
    report(runner(cases).run(&strat, |(seed, c, d, order)| {
        let k = 14;
        let bias: Vec<f64> = (0..k)
            .map(|i| match (i < 6, order) {
                (true, _) => 0.0,
                (false, 1) => 300.0,
                (false, _) => 20.0 * (i - 5) as f64,
            })
            .collect();
        let t: Vec<f64> = (1..=k).map(|i| i as f64).collect();
        let tr = AttackTrace::from_bias(t, bias, 1.0).unwrap();
        let (_, meas, user) = scenario_data(k, 5, seed, ClockState::new(50.0, 0.2), Some(&tr));
        let shifted: Vec<MeasurementEpoch> = meas
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.pr_m.iter_mut().for_each(|p| *p += c + d * e.t_s);
                e.prr_mps.iter_mut().for_each(|p| *p += d);
                e
            })
            .collect();
        let (ra, rb) = (residuals(&meas, &user).unwrap(), residuals(&shifted, &user).unwrap());
        let params = ClockModelParams::default();
        let cfg = SolverConfig {
            lambda: 5.0,
            ..SolverConfig::default()
        };
        let (sa, sb) = (
            tsarm_solve(&ra, &params, &cfg).unwrap(),
            tsarm_solve(&rb, &params, &cfg).unwrap(),
        );
        let tol = 1e-5 * (1.0 + c.abs() + 20.0 * d.abs());
        for (j, (xa, xb)) in sa.states.states.iter().zip(&sb.states.states).enumerate() {
            let tj = j as f64;
            prop_assert!((xb.bias_m - xa.bias_m - c - d * tj).abs() < tol, "bias at {}", j);
            prop_assert!((xb.drift_mps - xa.drift_mps - d).abs() < tol, "drift at {}", j);
        }
        for i in 0..k {
            prop_assert!((sa.alterations.s_bias_m[i] - sb.alterations.s_bias_m[i]).abs() < tol);
            prop_assert!((sa.alterations.s_drift_mps[i] - sb.alterations.s_drift_mps[i]).abs() < tol);
        }
        let phi = transition_matrix(1.0).unwrap();
        let q = process_noise(&params).unwrap();
        let prior = PriorConfig::default();
        let (xa0, p0) = prior.around_first_epoch(&ra, &phi).unwrap();
        let (xb0, _) = prior.around_first_epoch(&rb, &phi).unwrap();
        let (ea, eb) = (
            ekf_run(&ra, &q, &phi, xa0, &p0).unwrap(),
            ekf_run(&rb, &q, &phi, xb0, &p0).unwrap(),
        );
        for (j, (xa, xb)) in ea.states.iter().zip(&eb.states).enumerate() {
            prop_assert!((xb.bias_m - xa.bias_m - c - d * j as f64).abs() < 1e-6 * (1.0 + c.abs()));
        }
        Ok(())
    }))
}

/// A trace built from isolated spikes at derivative order `n` classifies as
/// order `n` and stays sparse at every higher order.
pub fn prop_higher_order_containment(cases: u32) -> PropResult {
    let strat = (
        1usize..=3,
        prop::collection::vec((0usize..200, -50.0..50.0f64), 1..4),
    );
    report(runner(cases).run(&strat, |(order, spikes)| {
        let k = 241;
        let mut level = vec![0.0; k];
        for (at, amp) in &spikes {
            let amp = if amp.abs() < 1.0 { amp.signum() * 1.0 + amp } else { *amp };
            level[20 + at] += amp;
        }
        prop_assume!(level.iter().any(|v| v.abs() > 0.5));
        let mut bias = level.clone();
        for _ in 0..order {
            let mut acc = 0.0;
            bias = bias.iter().map(|v| {
                acc += v;
                acc
            }).collect();
        }
        let tr = AttackTrace::from_bias((1..=k).map(|i| i as f64).collect(), bias, 1.0).unwrap();
        let th = SpikeThreshold::RelativeToPeak(1e-6);
        let got = classify_order(&tr, th, DEFAULT_SPARSITY_RATIO);
        prop_assert!(got.is_some_and(|g| g as usize <= order), "classified {:?} for order {}", got, order);
        let levels = tr.levels();
        for m in order..4 {
            prop_assert!(is_sparse(levels[m], th, DEFAULT_SPARSITY_RATIO), "order {} level {}", order, m);
        }
        for (a, b) in levels[order].iter().zip(&level) {
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
        Ok(())
    }))
}

/// The shipped attack shapes classify at their own order and are sparse
/// at every higher one.
pub fn prop_preset_classification(cases: u32) -> PropResult {
    let strat = (1u8..=3, 0.5..1.5f64, 0.5..1.5f64);
    report(runner(cases).run(&strat, |(order, fb, fs)| {
        let base = AttackSpec::preset(order).unwrap();
        let spec = AttackSpec {
            bias_max_m: base.bias_max_m * fb,
            drift_max_mps: if order == 1 { base.drift_max_mps } else { base.drift_max_mps * fs },
            ..base
        };
        let spec = if spec.shape == AttackShape::TrapezoidDrift {
            // keep the trapezoid's hold non-negative
            AttackSpec {
                bias_max_m: spec.bias_max_m.max(spec.drift_max_mps * spec.ramp_time_s + 1.0),
                ..spec
            }
        } else {
            spec
        };
        let Ok(tr) = synth_attack(&spec, 241, 1.0) else {
            return Err(TestCaseError::reject("unreachable shape"));
        };
        let th = SpikeThreshold::default();
        prop_assert_eq!(classify_order(&tr, th, DEFAULT_SPARSITY_RATIO), Some(order));
        for m in order as usize..4 {
            prop_assert!(is_sparse(tr.levels()[m], th, DEFAULT_SPARSITY_RATIO));
        }
        Ok(())
    }))
}

/// Common-mode injection leaves every inter-satellite difference intact.
pub fn prop_inject_preserves_differences(cases: u32) -> PropResult {
    let strat = (1u8..=3, 0u64..1000);
    report(runner(cases).run(&strat, |(order, seed)| {
        let tr = synth_attack(&AttackSpec::preset(order).unwrap(), 241, 1.0).unwrap();
        let (_, clean, _) = scenario_data(241, 6, seed, ClockState::new(10.0, 0.1), None);
        let att = inject(&clean, &tr).unwrap();
        for (a, b) in clean.iter().zip(&att) {
            for i in 1..a.n_sats() {
                let da = a.pr_m[i] - a.pr_m[0];
                let db = b.pr_m[i] - b.pr_m[0];
                prop_assert!((da - db).abs() < 1e-6);
                prop_assert!((a.prr_mps[i] - a.prr_mps[0] - (b.prr_mps[i] - b.prr_mps[0])).abs() < 1e-9);
            }
        }
        Ok(())
    }))
}
