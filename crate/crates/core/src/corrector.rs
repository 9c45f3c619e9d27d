//! Monte Carlo construction of the corrector G and the corrected Lyapunov
//! functional V.
//!
//! G solves the Poisson problem LG = F for the generator L of the projective
//! process, normalized by μ_∞(G) = 0, and admits the representation
//!
//! ```text
//! G(π) = − ∫_0^∞ E[ F(π_t) | π_0 = π ] dt ,
//! ```
//!
//! the sign fixed by L ∫_0^∞ P_t F dt = μ_∞(F) − F = −F, so that the
//! generator identity LG = F holds along trajectories. The integral
//! converges because the projective semigroup contracts a cut-off
//! Wasserstein distance d_R = d_P ∧ R at some rate ζ′ > 0. The estimator
//! truncates at T, subtracts F along a coupled near-stationary trajectory as
//! a control variate, and reports a tail bound ‖F‖_∞ e^{−ζ′T}/ζ′ with the
//! empirically fitted ζ′.
//!
//! The corrected functional V(r) = r^{−η}(1 + ηG(π)) is admissible while
//! 2η‖G‖_∞ ≤ 1; the admissible range η ≤ η₀ is evaluated from measured
//! proxies for ‖G‖_∞ and ‖G‖_Lip, so η₀ is an estimate rather than a
//! certified constant, and is published as such in the reports.

use crate::ensemble::{lsq_slope, mean_se, percentile, run_indexed};
use crate::error::LabError;
use crate::grid::GridDescriptor;
use crate::linear::{steps_for, FlowParams, LinearFlowStepper};
use crate::lyapunov::{sample_exponent, ExponentConfig};
use crate::noise::CorrelationKernel;
use crate::projective::{hilbert_distance_values, ProjectivePoint, DP_RESOLVABLE};
use crate::rng::{CounterRng, NoiseStream};
use crate::Result;

/// One corrector evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CorrectorEstimate {
    pub value: f64,
    pub se: f64,
    pub truncation_t: f64,
    /// ‖F‖_∞ e^{−ζ′T} / ζ′ with the fitted ζ′.
    pub tail_bound: f64,
}

/// State of the corrected functional V = r^{−η}(1 + ηG).
#[derive(Clone, Copy, Debug)]
pub struct VState {
    pub eta: f64,
    pub v0: f64,
    pub g_val: f64,
    pub v: f64,
}

impl VState {
    /// Build V from r and G(π); enforces the admissibility invariant
    /// 1 + ηG ≥ 1/2 under 2η‖G‖_∞ ≤ 1.
    pub fn new(eta: f64, r: f64, g_val: f64, g_sup: f64) -> Result<VState> {
        if 2.0 * eta * g_sup <= 1.0 && 1.0 + eta * g_val < 0.5 - 1e-12 {
            return Err(LabError::InvalidConfig(format!(
                "corrector admissibility violated: 1 + eta G = {}",
                1.0 + eta * g_val
            )));
        }
        let v0 = r.powf(-eta);
        Ok(VState { eta, v0, g_val, v: v0 * (1.0 + eta * g_val) })
    }
}

/// Calibration of the projective contraction and the F/G norms, measured
/// once per (kernel, γ) configuration.
#[derive(Clone, Copy, Debug)]
pub struct CorrectorCalibration {
    pub lambda: f64,
    pub se_lambda: f64,
    /// Fitted contraction rate of the cut-off Wasserstein distance.
    pub zeta_prime: f64,
    /// Cut-off radius R (99th percentile of observed d_P to the stationary
    /// proxy during burn-in).
    pub big_r: f64,
    /// Measured Lipschitz ratio of F in d_R.
    pub f_lip_dr: f64,
    /// Exact bound ‖F‖_∞ = |λ − γ| + ‖κ‖_∞/2.
    pub f_sup: f64,
    /// Measured Lipschitz proxy for G (max ratio over sampled pairs).
    pub g_lip: f64,
    /// Lemma-route bound ‖F‖_Lip(d_R)/ζ′ for comparison with `g_lip`.
    pub g_lip_bound: f64,
    /// Max |G| over the calibration scan.
    pub g_sup_scan: f64,
    /// Admissible eta threshold from measured quantities.
    pub eta0: f64,
}

/// Driver for corrector estimates on one (kernel, γ, λ̂) configuration.
pub struct CorrectorMachine<'k> {
    pub kernel: &'k CorrelationKernel,
    pub gamma: f64,
    pub lambda: f64,
    pub zeta_prime: f64,
    pub dt: f64,
    pub record_dt: f64,
    /// Burn-in length of the coupled stationary proxy.
    pub burn_in: f64,
    pub seed: u64,
}

impl<'k> CorrectorMachine<'k> {
    pub fn f_sup(&self) -> f64 {
        (self.lambda - self.gamma).abs() + 0.5 * self.kernel.sup_norm
    }

    /// F(π) from raw projective values.
    pub fn f_of_values(&self, pi: &[f64]) -> f64 {
        self.gamma - self.lambda - 0.5 * self.kernel.q_functional_values(pi)
    }

    /// Per-path integral ∫_0^T [F(π^p_t) − F(π^∞_t)] dt with the coupled
    /// stationary proxy, plus the same integral extended over [h, T+h] when
    /// `shift_h` is set (used by the generator check).
    fn path_integrals(
        &self,
        p: &ProjectivePoint,
        trunc_t: f64,
        shift_h: f64,
        stream: NoiseStream,
    ) -> Result<(f64, f64)> {
        let grid = self.kernel.grid;
        let n_tot = grid.total_points();
        let dt = self.dt;
        let burn_steps = steps_for(self.burn_in, dt)?;
        let rec_every = (self.record_dt / dt).round().max(1.0) as u64;
        let h_steps = if shift_h > 0.0 { steps_for(shift_h, dt)? } else { 0 };
        let main_steps = steps_for(trunc_t, dt)?;
        let total_steps = main_steps + h_steps;
        let mut stepper = LinearFlowStepper::new(
            self.kernel,
            stream,
            FlowParams { gamma: self.gamma, damping: 0.0, dt },
            0,
        );
        let proxy = stepper.add_column(&vec![1.0; n_tot])?;
        stepper.advance(burn_steps);
        let target = stepper.add_column(p.values())?;
        let mut buf = vec![0.0; n_tot];
        // Record F differences on the record grid; integrate by trapezoid.
        let mut times = vec![0.0];
        stepper.pi_into(target, &mut buf);
        let mut f_t = self.f_of_values(&buf);
        stepper.pi_into(proxy, &mut buf);
        let mut f_p = self.f_of_values(&buf);
        let mut diffs = vec![f_t - f_p];
        for step in 1..=total_steps {
            stepper.step();
            if step % rec_every == 0 || step == total_steps {
                stepper.pi_into(target, &mut buf);
                f_t = self.f_of_values(&buf);
                stepper.pi_into(proxy, &mut buf);
                f_p = self.f_of_values(&buf);
                times.push(step as f64 * dt);
                diffs.push(f_t - f_p);
            }
        }
        let trapz = |lo: f64, hi: f64| -> f64 {
            let mut acc = 0.0;
            for i in 1..times.len() {
                let (t0, t1) = (times[i - 1], times[i]);
                if t1 <= lo || t0 >= hi {
                    continue;
                }
                let a = t0.max(lo);
                let b = t1.min(hi);
                // Linear interpolation of the integrand on the clipped window.
                let w = (b - a) / (t1 - t0);
                let mid = 0.5 * (a + b);
                let frac = (mid - t0) / (t1 - t0);
                let val = diffs[i - 1] * (1.0 - frac) + diffs[i] * frac;
                acc += val * w * (t1 - t0);
            }
            acc
        };
        // G carries the minus sign of the Poisson representation.
        let base = -trapz(0.0, trunc_t);
        let shifted = if h_steps > 0 { -trapz(shift_h, trunc_t + shift_h) } else { base };
        Ok((base, shifted))
    }

    /// Estimate G(p) by the truncated, control-variate corrected integral.
    pub fn estimate_g(
        &self,
        p: &ProjectivePoint,
        n_paths: usize,
        trunc_t: f64,
        salt: u64,
    ) -> Result<CorrectorEstimate> {
        if self.zeta_prime <= 0.0 {
            return Err(LabError::NoContractionObserved(self.zeta_prime));
        }
        let vals: Vec<Result<f64>> = run_indexed(n_paths, |j| {
            let stream = NoiseStream::new(self.seed, j as u64).derive(salt);
            Ok(self.path_integrals(p, trunc_t, 0.0, stream)?.0)
        });
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        let (value, se) = mean_se(&vals);
        let tail_bound = self.f_sup() * (-self.zeta_prime * trunc_t).exp() / self.zeta_prime;
        Ok(CorrectorEstimate { value, se, truncation_t: trunc_t, tail_bound })
    }

    /// Residual of the generator identity (E[G(π_h)|π_0 = p] − G(p))/h − F(p)
    /// with common random numbers; returns (residual, se).
    pub fn generator_residual(
        &self,
        p: &ProjectivePoint,
        h: f64,
        n_paths: usize,
        trunc_t: f64,
        salt: u64,
    ) -> Result<(f64, f64)> {
        if !(1e-3..=1e-1).contains(&h) {
            return Err(LabError::InvalidConfig(format!("h = {h} outside [1e-3, 1e-1]")));
        }
        let fp = self.f_of_values(p.values());
        let vals: Vec<Result<f64>> = run_indexed(n_paths, |j| {
            let stream = NoiseStream::new(self.seed, j as u64).derive(salt ^ 0x9e1);
            let (base, shifted) = self.path_integrals(p, trunc_t, h, stream)?;
            Ok((shifted - base) / h - fp)
        });
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        Ok(mean_se(&vals))
    }
}

/// Direction 𝒩(π) = π·(κ∗π) − ⟨π·(κ∗π), 1⟩ π, tangent to P at π.
pub fn frechet_direction(p: &ProjectivePoint, kernel: &CorrelationKernel) -> Vec<f64> {
    let cellvol = kernel.grid.cell_volume();
    let mut conv = Vec::new();
    kernel.kappa_conv(p.values(), &mut conv);
    let mut inner = 0.0;
    for (pi, cv) in p.values().iter().zip(conv.iter()) {
        inner += pi * cv;
    }
    inner *= cellvol;
    p.values().iter().zip(conv.iter()).map(|(pv, cv)| pv * cv - inner * pv).collect()
}

/// Outcome of the Fréchet-derivative bound check at one point.
#[derive(Clone, Copy, Debug)]
pub struct FrechetReport {
    /// |G(project(p + δ𝒩)) − G(p)|/δ at the smallest usable δ.
    pub lhs: f64,
    pub lhs_se: f64,
    /// 2 · (measured ‖G‖_Lip) · ‖𝒩(p)/p‖_∞.
    pub rhs: f64,
    /// ‖𝒩(p)/p‖_∞, which never exceeds 2‖κ‖_∞.
    pub n_over_p_sup: f64,
    pub delta_used: f64,
}

/// Check the Fréchet bound |⟨DG(π), 𝒩(π)⟩| ≤ 2‖G‖_Lip ‖𝒩(π)/π‖_∞ by finite
/// differences along 𝒩, measuring the Lipschitz ratio on the same pairs.
pub fn frechet_bound_check(
    machine: &CorrectorMachine,
    p: &ProjectivePoint,
    n_paths: usize,
    trunc_t: f64,
    salt: u64,
) -> Result<FrechetReport> {
    let kernel = machine.kernel;
    let dir = frechet_direction(p, kernel);
    let n_over_p_sup = dir
        .iter()
        .zip(p.values().iter())
        .fold(0.0f64, |m, (n, pv)| m.max((n / pv).abs()));
    // Find a delta keeping p + δ𝒩 in the positive cone.
    let mut delta = 1e-2;
    let mut points = Vec::new();
    while delta >= 1e-6 {
        let cand: Vec<f64> =
            p.values().iter().zip(dir.iter()).map(|(pv, d)| pv + delta * d).collect();
        if cand.iter().all(|v| *v > 0.0) {
            points.push((delta, cand));
            if points.len() == 2 {
                break;
            }
        }
        delta /= 10.0;
    }
    if points.is_empty() {
        return Err(LabError::NotInPositiveCone);
    }
    // CRN estimates of G at p and at the displaced points, plus the measured
    // Lipschitz ratio including these very pairs.
    let g_p = machine.estimate_g(p, n_paths, trunc_t, salt)?;
    let (delta_used, displaced) = points.last().cloned().unwrap();
    let q = ProjectivePoint::from_values(kernel.grid, displaced)?;
    let g_q = machine.estimate_g(&q, n_paths, trunc_t, salt)?;
    let dp = hilbert_distance_values(p.values(), q.values());
    let g_lip_pair = if dp > DP_RESOLVABLE { (g_q.value - g_p.value).abs() / dp } else { 0.0 };
    let lhs = (g_q.value - g_p.value).abs() / delta_used;
    let lhs_se = (g_p.se + g_q.se) / delta_used;
    let rhs = 2.0 * g_lip_pair * n_over_p_sup;
    Ok(FrechetReport { lhs, lhs_se, rhs, n_over_p_sup, delta_used })
}

/// Options for the calibration pass.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationConfig {
    pub gamma: f64,
    pub dt: f64,
    pub record_dt: f64,
    pub seed: u64,
    /// Paths and horizon of the λ estimate.
    pub lambda_paths: usize,
    pub lambda_horizon: f64,
    pub lambda_burn_in: f64,
    /// Coupled pairs for R and ζ′.
    pub contraction_pairs: usize,
    pub contraction_horizon: f64,
    /// Proxy burn-in (stationarity of the reference trajectory).
    pub burn_in: f64,
    /// Points and inner paths of the G Lipschitz/sup scan.
    pub scan_points: usize,
    pub scan_inner_paths: usize,
    pub scan_trunc_t: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            gamma: 0.6,
            dt: 2e-3,
            record_dt: 0.05,
            seed: 1,
            lambda_paths: 48,
            lambda_horizon: 30.0,
            lambda_burn_in: 3.0,
            contraction_pairs: 32,
            contraction_horizon: 8.0,
            burn_in: 8.0,
            scan_points: 10,
            scan_inner_paths: 16,
            scan_trunc_t: 8.0,
        }
    }
}

/// Deterministic scan points: smooth random Fourier bumps and sharp spikes
/// with d_P to uniform up to ~8.
pub fn scan_point(grid: GridDescriptor, index: usize) -> ProjectivePoint {
    let mut rng = CounterRng::from_key(0xace0_0000 + index as u64);
    let n_tot = grid.total_points();
    let two_pi = 2.0 * std::f64::consts::PI;
    let vals: Vec<f64> = if index % 3 == 2 {
        // Near-degenerate spike.
        let c = rng.uniform();
        let w = 0.03 + 0.07 * rng.uniform();
        (0..n_tot)
            .map(|i| {
                let (x, y) = grid.coords(i);
                let dx = GridDescriptor::torus_dist(x, c);
                let dy = if grid.dim == 2 { GridDescriptor::torus_dist(y, c) } else { 0.0 };
                1.5e-3 + (-(dx * dx + dy * dy) / (2.0 * w * w)).exp()
            })
            .collect()
    } else {
        // Log-normal Fourier bump.
        let amps: Vec<(f64, f64)> = (0..4).map(|_| (rng.normal(), rng.normal())).collect();
        (0..n_tot)
            .map(|i| {
                let (x, _) = grid.coords(i);
                let mut l = 0.0;
                for (k, (a, b)) in amps.iter().enumerate() {
                    let kk = (k + 1) as f64;
                    l += (a * (two_pi * kk * x).cos() + b * (two_pi * kk * x).sin()) / kk;
                }
                (0.8 * l).exp()
            })
            .collect()
    };
    ProjectivePoint::from_values(grid, vals).expect("scan point in the cone")
}

/// Measure λ, the contraction rate ζ′, the cut-off radius R and the F/G
/// norms for one (kernel, γ) configuration.
pub fn calibrate(kernel: &CorrelationKernel, cfg: &CalibrationConfig) -> Result<CorrectorCalibration> {
    let grid = kernel.grid;
    let n_tot = grid.total_points();
    // λ with standard error.
    let (est, _) = sample_exponent(
        kernel,
        &ExponentConfig {
            gamma: cfg.gamma,
            damping: 0.0,
            dt: cfg.dt,
            horizon: cfg.lambda_horizon,
            burn_in: cfg.lambda_burn_in,
            record_dt: cfg.record_dt,
            n_paths: cfg.lambda_paths,
            seed: cfg.seed ^ 0xa11,
            w0: None,
        },
    )?;
    let lambda = est.lambda_sample;

    // Coupled pairs (scan start vs uniform proxy) for R and ζ′.
    let rec_every = (cfg.record_dt / cfg.dt).round().max(1.0) as u64;
    let n_steps = steps_for(cfg.contraction_horizon, cfg.dt)?;
    let pair_series: Vec<Result<Vec<f64>>> = run_indexed(cfg.contraction_pairs, |j| {
        let stream = NoiseStream::new(cfg.seed ^ 0xc0, j as u64);
        let mut stepper = LinearFlowStepper::new(
            kernel,
            stream,
            FlowParams { gamma: cfg.gamma, damping: 0.0, dt: cfg.dt },
            0,
        );
        let a = stepper.add_column(scan_point(grid, j).values())?;
        let b = stepper.add_column(&vec![1.0; n_tot])?;
        let mut pa = vec![0.0; n_tot];
        let mut pb = vec![0.0; n_tot];
        let mut series = Vec::new();
        stepper.pi_into(a, &mut pa);
        stepper.pi_into(b, &mut pb);
        series.push(hilbert_distance_values(&pa, &pb));
        for step in 1..=n_steps {
            stepper.step();
            if step % rec_every == 0 {
                stepper.pi_into(a, &mut pa);
                stepper.pi_into(b, &mut pb);
                series.push(hilbert_distance_values(&pa, &pb));
            }
        }
        Ok(series)
    });
    let pair_series: Vec<Vec<f64>> = pair_series.into_iter().collect::<Result<_>>()?;
    // R: 99th percentile of d_P during the burn-in window.
    let burn_records = (cfg.burn_in / cfg.record_dt).round() as usize;
    let mut burn_dps = Vec::new();
    for s in &pair_series {
        for d in s.iter().take(burn_records.min(s.len())) {
            burn_dps.push(*d);
        }
    }
    let big_r = percentile(&burn_dps, 99.0);
    // ζ′ from the decay of the ensemble mean of d_R.
    let n_records = pair_series[0].len();
    let mut ts = Vec::new();
    let mut lm = Vec::new();
    for r in 0..n_records {
        let mean: f64 = pair_series.iter().map(|s| s[r].min(big_r)).sum::<f64>()
            / pair_series.len() as f64;
        if mean > DP_RESOLVABLE {
            ts.push(r as f64 * cfg.record_dt);
            lm.push(mean.ln());
        }
    }
    if ts.len() < 4 {
        return Err(LabError::NoContractionObserved(f64::NAN));
    }
    let (slope, _) = lsq_slope(&ts, &lm);
    let zeta_prime = -slope;
    if zeta_prime <= 0.0 {
        return Err(LabError::NoContractionObserved(zeta_prime));
    }

    // F norms.
    let f_sup = (lambda - cfg.gamma).abs() + 0.5 * kernel.sup_norm;
    let mut f_lip_dr = 0.0f64;
    {
        let mut rng = CounterRng::from_key(cfg.seed ^ 0xf11b);
        let machine = CorrectorMachine {
            kernel,
            gamma: cfg.gamma,
            lambda,
            zeta_prime,
            dt: cfg.dt,
            record_dt: cfg.record_dt,
            burn_in: cfg.burn_in,
            seed: cfg.seed ^ 0x6c0,
        };
        for _ in 0..400 {
            let i = (rng.uniform() * 1e6) as usize;
            let p = scan_point(grid, i % 64);
            let q = scan_point(grid, (i / 64) % 64);
            let d = hilbert_distance_values(p.values(), q.values()).min(big_r);
            if d > 1e-9 {
                let df = (machine.f_of_values(p.values()) - machine.f_of_values(q.values())).abs();
                f_lip_dr = f_lip_dr.max(df / d);
            }
        }
    }

    // G scan: Lipschitz ratio and sup over scan points.
    let machine = CorrectorMachine {
        kernel,
        gamma: cfg.gamma,
        lambda,
        zeta_prime,
        dt: cfg.dt,
        record_dt: cfg.record_dt,
        burn_in: cfg.burn_in,
        seed: cfg.seed ^ 0x6c0,
    };
    let g_vals: Vec<Result<(f64, f64)>> = run_indexed(cfg.scan_points, |i| {
        let p = scan_point(grid, i);
        let est = machine.estimate_g(&p, cfg.scan_inner_paths, cfg.scan_trunc_t, 0x5ca + i as u64)?;
        let d = {
            let uniform = vec![1.0; n_tot];
            hilbert_distance_values(p.values(), &uniform).min(big_r)
        };
        Ok((est.value, d))
    });
    let g_vals: Vec<(f64, f64)> = g_vals.into_iter().collect::<Result<_>>()?;
    let mut g_sup_scan = 0.0f64;
    let mut g_lip = 0.0f64;
    for i in 0..g_vals.len() {
        g_sup_scan = g_sup_scan.max(g_vals[i].0.abs());
        for j in (i + 1)..g_vals.len() {
            let p = scan_point(grid, i);
            let q = scan_point(grid, j);
            let d = hilbert_distance_values(p.values(), q.values()).min(big_r);
            if d > 1e-6 {
                g_lip = g_lip.max((g_vals[i].0 - g_vals[j].0).abs() / d);
            }
        }
    }
    let g_lip_bound = f_lip_dr / zeta_prime;

    let eta0 = if lambda > 0.0 {
        let drift_term =
            0.5 * lambda / (0.5 * kernel.sup_norm + 8.0 * g_lip * kernel.sup_norm).max(1e-300);
        let sup_term = 0.5 / g_sup_scan.max(1e-300);
        drift_term.min(sup_term)
    } else {
        f64::NAN
    };

    Ok(CorrectorCalibration {
        lambda,
        se_lambda: est.se_sample,
        zeta_prime,
        big_r,
        f_lip_dr,
        f_sup,
        g_lip,
        g_lip_bound,
        g_sup_scan,
        eta0,
    })
}

/// Supermartingale checkpoint outcome for the corrected functional.
#[derive(Clone, Copy, Debug)]
pub struct SupermartingaleCheckpoint {
    pub t: f64,
    /// E[e^{ηλt/2} V(r_t)] / V(r_0).
    pub corrected_ratio: f64,
    pub corrected_se: f64,
    /// E[r_t^{-η}]^{1/η} / (3 e^{-λt/2} r_0) for the uncorrected form.
    pub weak_form_ratio: f64,
    /// Raw moment E[r_t^{-η}] with its standard error.
    pub mean_r_neg_eta: f64,
    pub se_r_neg_eta: f64,
    pub pass_corrected: bool,
    pub pass_weak: bool,
}

/// Configuration for the supermartingale check.
#[derive(Clone, Debug)]
pub struct SupermartingaleConfig {
    pub eta: f64,
    pub checkpoints: Vec<f64>,
    pub n_paths: usize,
    pub inner_paths: usize,
    pub inner_trunc_t: f64,
    pub seed: u64,
}

/// Verify the supermartingale property of e^{ηλt/2} V(r_t) at checkpoints,
/// together with the weaker uncorrected moment bound
/// E[r_t^{-η}]^{1/η} ≤ 3 e^{-λt/2} r_0.
pub fn supermartingale_check(
    machine: &CorrectorMachine,
    calib: &CorrectorCalibration,
    cfg: &SupermartingaleConfig,
) -> Result<Vec<SupermartingaleCheckpoint>> {
    if !calib.eta0.is_finite() || cfg.eta > calib.eta0 {
        return Err(LabError::EtaAboveThreshold { eta: cfg.eta, eta0: calib.eta0 });
    }
    let kernel = machine.kernel;
    let grid = kernel.grid;
    let n_tot = grid.total_points();
    let eta = cfg.eta;
    let horizon = cfg.checkpoints.iter().cloned().fold(0.0f64, f64::max);
    let n_steps = steps_for(horizon, machine.dt)?;
    let checkpoint_steps: Vec<u64> =
        cfg.checkpoints.iter().map(|t| (t / machine.dt).round() as u64).collect();
    let p0 = ProjectivePoint::uniform(grid);
    let g0 = machine.estimate_g(&p0, cfg.inner_paths * 4, cfg.inner_trunc_t, 0xb00)?;
    let v0 = VState::new(eta, 1.0, g0.value, calib.g_sup_scan)?;

    // Outer paths: r and π at checkpoints, with fresh inner G estimates.
    struct PathOut {
        v_vals: Vec<f64>,
        r_neg_eta: Vec<f64>,
    }
    let outs: Vec<Result<PathOut>> = run_indexed(cfg.n_paths, |j| {
        let stream = NoiseStream::new(cfg.seed, j as u64);
        let mut stepper = LinearFlowStepper::new(
            kernel,
            stream,
            FlowParams { gamma: machine.gamma, damping: 0.0, dt: machine.dt },
            0,
        );
        let col = stepper.add_column(&vec![1.0; n_tot])?;
        let mut buf = vec![0.0; n_tot];
        let mut v_vals = Vec::new();
        let mut r_neg = Vec::new();
        let mut next = 0usize;
        for step in 1..=n_steps {
            stepper.step();
            if next < checkpoint_steps.len() && checkpoint_steps[next] == step {
                let log_r = stepper.log_r(col);
                stepper.pi_into(col, &mut buf);
                let pi = ProjectivePoint::from_values(grid, buf.clone())?;
                // Fresh inner streams branch off the outer path state.
                let inner = machine.estimate_g(
                    &pi,
                    cfg.inner_paths,
                    cfg.inner_trunc_t,
                    0x77aa ^ ((j as u64) << 8) ^ next as u64,
                )?;
                v_vals.push((-eta * log_r).exp() * (1.0 + eta * inner.value));
                r_neg.push((-eta * log_r).exp());
                next += 1;
            }
        }
        Ok(PathOut { v_vals, r_neg_eta: r_neg })
    });
    let outs: Vec<PathOut> = outs.into_iter().collect::<Result<_>>()?;

    let mut checkpoints = Vec::new();
    for (ci, &t) in cfg.checkpoints.iter().enumerate() {
        let grow = (eta * machine.lambda * t / 2.0).exp();
        let vs: Vec<f64> = outs.iter().map(|o| grow * o.v_vals[ci]).collect();
        let (mean_v, se_v) = mean_se(&vs);
        // λ uncertainty propagates through the growth factor.
        let lambda_slack = (eta * 3.0 * calib.se_lambda * t / 2.0).exp();
        let corrected_ratio = mean_v / v0.v;
        let corrected_se = se_v / v0.v;
        let pass_corrected = mean_v / lambda_slack <= v0.v + 3.0 * se_v;
        let rn: Vec<f64> = outs.iter().map(|o| o.r_neg_eta[ci]).collect();
        let (mean_rn, se_rn) = mean_se(&rn);
        let weak_lhs = mean_rn.powf(1.0 / eta);
        let weak_rhs = 3.0 * (-machine.lambda * t / 2.0).exp();
        let weak_se = (mean_rn + 3.0 * se_rn).powf(1.0 / eta) - weak_lhs;
        let lambda_slack_weak = (3.0 * calib.se_lambda * t / 2.0).exp();
        let pass_weak = weak_lhs <= weak_rhs * lambda_slack_weak + weak_se;
        checkpoints.push(SupermartingaleCheckpoint {
            t,
            corrected_ratio,
            corrected_se,
            weak_form_ratio: weak_lhs / weak_rhs,
            mean_r_neg_eta: mean_rn,
            se_r_neg_eta: se_rn,
            pass_corrected,
            pass_weak,
        });
    }
    Ok(checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{build_kernel, KernelSpec};

    fn constant_machine(kernel: &CorrelationKernel, gamma: f64) -> CorrectorMachine<'_> {
        CorrectorMachine {
            kernel,
            gamma,
            lambda: gamma - 0.5 * kernel.sup_norm,
            zeta_prime: 1.0,
            dt: 2e-3,
            record_dt: 0.05,
            burn_in: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn g_vanishes_for_constant_kernel() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let machine = constant_machine(&k, 0.9);
        let p = scan_point(g, 4);
        let est = machine.estimate_g(&p, 8, 4.0, 0).unwrap();
        assert!(est.value.abs() <= 3.0 * est.se + 1e-12, "{est:?}");
        assert!(est.tail_bound > 0.0);
    }

    #[test]
    fn generator_residual_zero_for_constant_kernel() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let machine = constant_machine(&k, 0.9);
        let p = scan_point(g, 1);
        let (res, se) = machine.generator_residual(&p, 0.02, 8, 4.0, 1).unwrap();
        assert!(res.abs() <= 3.0 * se + 1e-10, "residual {res} se {se}");
    }

    #[test]
    fn frechet_direction_vanishes_for_constant_kernel() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let p = scan_point(g, 2);
        let dir = frechet_direction(&p, &k);
        for d in &dir {
            assert!(d.abs() < 1e-12, "direction should cancel, got {d}");
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn frechet_direction_matches_brute_force() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let p = ProjectivePoint::uniform(g);
        let dir = frechet_direction(&p, &k);
        let n = g.total_points();
        let cellvol = g.cell_volume();
        for i in 0..n {
            let mut conv = 0.0;
            for j in 0..n {
                conv += k.kappa_at(i, j) * p.values()[j];
            }
            conv *= cellvol;
            let mut inner = 0.0;
            for x in 0..n {
                let mut cx = 0.0;
                for j in 0..n {
                    cx += k.kappa_at(x, j) * p.values()[j];
                }
                inner += p.values()[x] * cx * cellvol;
            }
            inner *= cellvol;
            let brute = p.values()[i] * conv - inner * p.values()[i];
            assert!((dir[i] - brute).abs() < 1e-12, "{} vs {brute}", dir[i]);
        }
    }

    #[test]
    fn n_over_p_uniform_bound() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let mut rng = CounterRng::from_key(0x41);
        for _ in 0..1000 {
            let vals: Vec<f64> =
                (0..g.total_points()).map(|_| (rng.normal() * 0.9).exp()).collect();
            let p = ProjectivePoint::from_values(g, vals).unwrap();
            let dir = frechet_direction(&p, &k);
            let sup = dir
                .iter()
                .zip(p.values().iter())
                .fold(0.0f64, |m, (n, pv)| m.max((n / pv).abs()));
            assert!(sup <= 2.0 * k.sup_norm * (1.0 + 1e-12), "sup {sup}");
        }
    }

    #[test]
    fn frechet_bound_check_chain() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let machine = CorrectorMachine {
            kernel: &k,
            gamma: 0.6,
            lambda: 0.3,
            zeta_prime: 2.0,
            dt: 2e-3,
            record_dt: 0.05,
            burn_in: 3.0,
            seed: 19,
        };
        let p = scan_point(g, 1);
        let rep = frechet_bound_check(&machine, &p, 8, 4.0, 3).unwrap();
        assert!(rep.n_over_p_sup <= 2.0 * k.sup_norm * (1.0 + 1e-12));
        assert!(rep.delta_used > 0.0);
        // The chain lhs <= 2 ||G||_Lip ||N/p||_inf holds up to the finite
        // delta and the CRN Monte Carlo slack.
        assert!(
            rep.lhs <= rep.rhs + 3.0 * rep.lhs_se + 0.05 * rep.lhs.abs() + 1e-12,
            "{rep:?}"
        );
        // Constant kernel: the direction cancels and the quotient vanishes.
        let kc = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let mc = CorrectorMachine {
            kernel: &kc,
            gamma: 0.9,
            lambda: 0.4,
            zeta_prime: 1.0,
            dt: 2e-3,
            record_dt: 0.05,
            burn_in: 2.0,
            seed: 20,
        };
        let repc = frechet_bound_check(&mc, &p, 4, 2.0, 1).unwrap();
        assert!(repc.n_over_p_sup < 1e-12);
        assert!(repc.lhs.abs() < 1e-9, "lhs should vanish, got {}", repc.lhs);
    }

    #[test]
    fn vstate_invariant() {
        let v = VState::new(0.05, 2.0, -3.0, 4.0).unwrap();
        assert!(v.v > 0.0);
        assert!((v.v0 - 2.0f64.powf(-0.05)).abs() < 1e-15);
        // eta = 0 is trivially flat.
        let v0 = VState::new(0.0, 5.0, 7.0, 100.0).unwrap();
        assert_eq!(v0.v, 1.0);
    }

    #[test]
    fn calibrate_gaussian_kernel() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let cfg = CalibrationConfig {
            gamma: 0.6,
            lambda_paths: 16,
            lambda_horizon: 20.0,
            contraction_pairs: 12,
            contraction_horizon: 6.0,
            burn_in: 4.0,
            scan_points: 6,
            scan_inner_paths: 8,
            scan_trunc_t: 4.0,
            ..Default::default()
        };
        let calib = calibrate(&k, &cfg).unwrap();
        assert!(calib.zeta_prime > 0.0, "{calib:?}");
        assert!(calib.big_r > 0.0);
        assert!(calib.f_sup >= 0.5 * k.sup_norm);
        assert!(calib.g_sup_scan.is_finite());
        assert!(calib.eta0 > 0.0, "{calib:?}");
    }

    #[test]
    fn supermartingale_gbm_closed_form() {
        // Constant kernel: r is geometric Brownian motion and the corrected
        // functional reduces to r^{-eta}; compare against the closed form.
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let gamma = 1.0;
        let eta = 0.1;
        let n_paths = 400;
        let dt = 1e-3;
        let checkpoints = [1.0, 2.0];
        let n_steps = (2.0 / dt) as u64;
        let vals: Vec<Vec<f64>> = run_indexed(n_paths, |j| {
            let mut stepper = LinearFlowStepper::new(
                &k,
                NoiseStream::new(21, j as u64),
                FlowParams { gamma, damping: 0.0, dt },
                0,
            );
            let col = stepper.add_column(&[1.0; 16]).unwrap();
            let mut out = Vec::new();
            for step in 1..=n_steps {
                stepper.step();
                let t = step as f64 * dt;
                if checkpoints.iter().any(|c| (c - t).abs() < dt / 2.0) {
                    out.push((-eta * stepper.log_r(col)).exp());
                }
            }
            out
        });
        for (ci, &t) in checkpoints.iter().enumerate() {
            let xs: Vec<f64> = vals.iter().map(|v| v[ci]).collect();
            let (mean, se) = mean_se(&xs);
            let exact = (eta * (-gamma + (1.0 + eta) * 0.5) * t).exp();
            assert!((mean - exact).abs() <= 3.0 * se, "t={t}: {mean} vs {exact} (se {se})");
        }
    }
}
