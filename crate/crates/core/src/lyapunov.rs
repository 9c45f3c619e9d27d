//! Lyapunov-exponent estimators and the functionals driving them.
//!
//! The radial part r_t = ‖Φ_t w‖_{L¹} of the linear flow satisfies
//!
//! ```text
//! d log r_t = γ dt − ½ Q(π_t) dt + dM_t,
//! Q(π) = ∫∫ π(x) π(y) κ(x, y) dx dy,   ⟨M⟩_t = ∫_0^t Q(π_s) ds ≤ ‖κ‖_∞ t,
//! ```
//!
//! so the exponent λ = lim t⁻¹ log r_t admits two estimators on the same
//! trajectories: the per-path regression slope of log r, and the
//! Furstenberg–Khasminskii average λ = γ − ½ E[Q(π_∞)]. The centred
//! fluctuation F(π) = γ − λ − ½Q(π) feeds the corrector module.

use crate::ensemble::{lsq_slope, mean_se, run_indexed};
use crate::error::LabError;
use crate::grid::Field;
use crate::linear::{steps_for, FlowParams, LinearFlowStepper, LinearTrajectory};
use crate::noise::CorrelationKernel;
use crate::projective::ProjectivePoint;
use crate::rng::NoiseStream;
use crate::Result;

/// Q(π) = ∫∫ π(x) π(y) κ(x, y) dx dy; satisfies 0 ≤ Q ≤ ‖κ‖_∞.
pub fn q_functional(p: &ProjectivePoint, kernel: &CorrelationKernel) -> f64 {
    kernel.q_functional_values(p.values())
}

/// Centred fluctuation F(π) = γ − λ − ½ Q(π).
pub fn f_functional(
    p: &ProjectivePoint,
    kernel: &CorrelationKernel,
    gamma: f64,
    lambda: f64,
) -> f64 {
    gamma - lambda - 0.5 * q_functional(p, kernel)
}

/// Per-path time series of the radial decomposition.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub log_r: Vec<f64>,
    pub q_vals: Vec<f64>,
    pub f_vals: Vec<f64>,
    /// Increment of log r minus the drift (γ − Q/2) dt over each record
    /// window (trapezoid in Q); index 0 is zero by convention.
    pub martingale_residual: Vec<f64>,
}

impl TrajectoryRecord {
    /// Predictable quadratic variation ∫ Q dt of the residual martingale up
    /// to the record horizon (trapezoid).
    pub fn predictable_qv(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.times.len() {
            acc += 0.5 * (self.q_vals[i - 1] + self.q_vals[i]) * (self.times[i] - self.times[i - 1]);
        }
        acc
    }
}

/// Decompose log r along a stored linear trajectory.
pub fn log_radius_decompose(
    traj: &LinearTrajectory,
    kernel: &CorrelationKernel,
    gamma: f64,
    lambda: f64,
) -> Result<TrajectoryRecord> {
    let mut log_r = Vec::with_capacity(traj.times.len());
    let mut q_vals = Vec::with_capacity(traj.times.len());
    for field in &traj.fields {
        let mass = field.l1_norm();
        if mass.is_nan() || mass <= 0.0 {
            return Err(LabError::NotInPositiveCone);
        }
        log_r.push(mass.ln());
        let pi = crate::projective::project(field)?;
        q_vals.push(q_functional(&pi, kernel));
    }
    let f_vals: Vec<f64> = q_vals.iter().map(|q| gamma - lambda - 0.5 * q).collect();
    let mut martingale_residual = vec![0.0];
    for i in 1..traj.times.len() {
        let dt = traj.times[i] - traj.times[i - 1];
        let drift = (gamma - 0.25 * (q_vals[i - 1] + q_vals[i])) * dt;
        martingale_residual.push(log_r[i] - log_r[i - 1] - drift);
    }
    Ok(TrajectoryRecord { times: traj.times.clone(), log_r, q_vals, f_vals, martingale_residual })
}

/// Ensemble configuration for the exponent estimators.
#[derive(Clone, Debug)]
pub struct ExponentConfig {
    pub gamma: f64,
    /// Exponential dampening (0 for Φ, λ/2 for Ξ); the FK drift uses γ minus
    /// this value.
    pub damping: f64,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub record_dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial condition; uniform when absent.
    pub w0: Option<Field>,
}

/// Point estimates with standard errors for both estimator routes.
#[derive(Clone, Copy, Debug)]
pub struct LyapunovEstimate {
    pub lambda_sample: f64,
    pub lambda_fk: f64,
    pub se_sample: f64,
    pub se_fk: f64,
    pub gamma: f64,
    pub burn_in: f64,
    pub n_paths: usize,
    pub n_excluded: usize,
}

/// Per-path summary written to the ensemble CSV.
#[derive(Clone, Copy, Debug)]
pub struct PathSummary {
    pub path: usize,
    pub slope: f64,
    pub mean_q: f64,
    pub excluded: bool,
}

/// Estimate λ by per-path least squares on log r over [burn_in, horizon] and
/// by the FK average on the same trajectories (common random numbers).
pub fn sample_exponent(
    kernel: &CorrelationKernel,
    cfg: &ExponentConfig,
) -> Result<(LyapunovEstimate, Vec<PathSummary>)> {
    if cfg.horizon <= cfg.burn_in {
        return Err(LabError::InvalidConfig("horizon must exceed burn_in".into()));
    }
    let n_steps = steps_for(cfg.horizon, cfg.dt)?;
    let rec_every = (cfg.record_dt / cfg.dt).round().max(1.0) as u64;
    let w0 = match &cfg.w0 {
        Some(f) => {
            if f.grid != kernel.grid {
                return Err(LabError::GridMismatch("w0 grid mismatch".into()));
            }
            f.clone()
        }
        None => Field::constant(kernel.grid, 1.0),
    };
    let summaries: Vec<Result<PathSummary>> = run_indexed(cfg.n_paths, |p| {
        let mut stepper = LinearFlowStepper::new(
            kernel,
            NoiseStream::new(cfg.seed, p as u64),
            FlowParams { gamma: cfg.gamma, damping: cfg.damping, dt: cfg.dt },
            0,
        );
        let col = stepper.add_column(&w0.values)?;
        let mut scratch = Vec::new();
        let mut ts = Vec::new();
        let mut logs = Vec::new();
        let mut qs = Vec::new();
        let mut excluded = false;
        for step in 1..=n_steps {
            stepper.step();
            if step % rec_every == 0 || step == n_steps {
                let t = step as f64 * cfg.dt;
                if t >= cfg.burn_in {
                    let lr = stepper.log_r(col);
                    if !lr.is_finite() {
                        excluded = true;
                        break;
                    }
                    ts.push(t);
                    logs.push(lr);
                    qs.push(stepper.q_of_column(col, &mut scratch));
                }
            }
        }
        if excluded || ts.len() < 3 {
            return Ok(PathSummary { path: p, slope: f64::NAN, mean_q: f64::NAN, excluded: true });
        }
        let (slope, _) = lsq_slope(&ts, &logs);
        let mean_q = crate::ensemble::pairwise_sum(&qs) / qs.len() as f64;
        Ok(PathSummary { path: p, slope, mean_q, excluded: false })
    });
    let summaries: Vec<PathSummary> = summaries.into_iter().collect::<Result<_>>()?;
    let kept: Vec<&PathSummary> = summaries.iter().filter(|s| !s.excluded).collect();
    let n_excluded = summaries.len() - kept.len();
    if n_excluded * 10 > summaries.len() {
        return Err(LabError::EnsembleUnreliable { excluded: n_excluded, total: summaries.len() });
    }
    let slopes: Vec<f64> = kept.iter().map(|s| s.slope).collect();
    let fk_vals: Vec<f64> =
        kept.iter().map(|s| cfg.gamma - cfg.damping - 0.5 * s.mean_q).collect();
    let (lambda_sample, se_sample) = mean_se(&slopes);
    let (lambda_fk, se_fk) = mean_se(&fk_vals);
    Ok((
        LyapunovEstimate {
            lambda_sample,
            lambda_fk,
            se_sample,
            se_fk,
            gamma: cfg.gamma,
            burn_in: cfg.burn_in,
            n_paths: cfg.n_paths,
            n_excluded,
        },
        summaries,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDescriptor;
    use crate::linear::{evolve_linear, solve_y};
    use crate::noise::{build_kernel, KernelSpec};
    use crate::projective::{hilbert_distance, project};
    use crate::rng::CounterRng;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn random_point(g: GridDescriptor, rng: &mut CounterRng) -> ProjectivePoint {
        let vals: Vec<f64> = (0..g.total_points()).map(|_| (rng.normal() * 0.7).exp()).collect();
        ProjectivePoint::from_values(g, vals).unwrap()
    }

    #[test]
    fn q_is_double_average_for_uniform_pi() {
        let g = GridDescriptor::d1(64);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let pi = ProjectivePoint::uniform(g);
        let q = q_functional(&pi, &k);
        let n = g.total_points();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                brute += k.kappa_at(i, j);
            }
        }
        brute *= g.cell_volume() * g.cell_volume();
        assert!((q - brute).abs() < 1e-12, "{q} vs {brute}");
    }

    #[test]
    fn q_constant_kernel_is_variance() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.7), g).unwrap();
        let mut rng = CounterRng::from_key(0x51);
        for _ in 0..10 {
            let pi = random_point(g, &mut rng);
            assert!((q_functional(&pi, &k) - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn q_cosine_kernel_oracle() {
        let g = GridDescriptor::d1(64);
        let n = g.total_points();
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                vals[i * n + j] = (TWO_PI * (g.coord(i) - g.coord(j))).cos();
            }
        }
        let k = build_kernel(&KernelSpec::Matrix { values: vals }, g).unwrap();
        let pi = project(&Field::from_fn(g, |x, _| 1.0 + 0.5 * (TWO_PI * x).sin())).unwrap();
        let q = q_functional(&pi, &k);
        // Brute-force double sum.
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                brute += pi.values()[i] * pi.values()[j] * k.kappa_at(i, j);
            }
        }
        brute *= g.cell_volume() * g.cell_volume();
        assert!((q - brute).abs() < 1e-12);
        // Analytic: only the sin modes pair with the cosine kernel:
        // Q = (0.5 * 0.25)^2-type overlap = 1/16.
        assert!((q - 0.0625).abs() < 1e-12, "q = {q}");
        assert!(q >= 0.0 && q <= k.sup_norm);
    }

    #[test]
    fn f_cancellation_cases() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let mut rng = CounterRng::from_key(0x7);
        let gamma = 0.9;
        let lambda = gamma - 0.5;
        for _ in 0..10 {
            let pi = random_point(g, &mut rng);
            assert!(f_functional(&pi, &k, gamma, lambda).abs() < 1e-12);
        }
        let k0 = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let pi = random_point(g, &mut rng);
        assert!(f_functional(&pi, &k0, 0.4, 0.4).abs() < 1e-15);
    }

    #[test]
    fn f_lipschitz_and_sup_bounds() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let gamma = 0.6f64;
        let lambda = 0.2f64;
        let f_sup = (lambda - gamma).abs() + 0.5 * k.sup_norm;
        let mut rng = CounterRng::from_key(0x99);
        for _ in 0..1000 {
            let p = random_point(g, &mut rng);
            let q = random_point(g, &mut rng);
            let fp = f_functional(&p, &k, gamma, lambda);
            let fq = f_functional(&q, &k, gamma, lambda);
            let d = hilbert_distance(&p, &q);
            assert!((fp - fq).abs() <= k.sup_norm * d.exp_m1() + 1e-12);
            assert!(fp.abs() <= f_sup + 1e-12);
        }
    }

    #[test]
    fn noiseless_exponent_is_drift() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let cfg = ExponentConfig {
            gamma: 0.3,
            damping: 0.0,
            dt: 1e-2,
            horizon: 30.0,
            burn_in: 2.0,
            record_dt: 0.1,
            n_paths: 3,
            seed: 1,
            w0: Some(Field::from_fn(g, |x, _| 1.0 + 0.5 * (TWO_PI * x).sin())),
        };
        let (est, _) = sample_exponent(&k, &cfg).unwrap();
        assert!((est.lambda_sample - 0.3).abs() < 1e-6, "{}", est.lambda_sample);
        assert!((est.lambda_fk - 0.3).abs() < 1e-12);
        assert_eq!(est.n_excluded, 0);
    }

    #[test]
    fn gbm_exponent_small_ensemble() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let cfg = ExponentConfig {
            gamma: 1.0,
            damping: 0.0,
            dt: 1e-3,
            horizon: 20.0,
            burn_in: 2.0,
            record_dt: 0.05,
            n_paths: 60,
            seed: 42,
            w0: None,
        };
        let (est, summaries) = sample_exponent(&k, &cfg).unwrap();
        assert!((est.lambda_sample - 0.5).abs() < 3.0 * est.se_sample, "{est:?}");
        assert!((est.lambda_fk - 0.5).abs() < 3.0 * est.se_fk.max(1e-12), "{est:?}");
        assert_eq!(summaries.len(), 60);
    }

    #[test]
    fn ito_correction_makes_lambda_negative() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let cfg = ExponentConfig {
            gamma: 0.0,
            damping: 0.0,
            dt: 2e-3,
            horizon: 20.0,
            burn_in: 2.0,
            record_dt: 0.05,
            n_paths: 40,
            seed: 7,
            w0: None,
        };
        let (est, _) = sample_exponent(&k, &cfg).unwrap();
        assert!(
            est.lambda_sample + 3.0 * est.se_sample < 0.0,
            "Ito noise must push lambda below zero: {est:?}"
        );
    }

    #[test]
    fn slope_independent_of_initial_condition() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let mk = |w0: Field| ExponentConfig {
            gamma: 0.5,
            damping: 0.0,
            dt: 2e-3,
            horizon: 30.0,
            burn_in: 5.0,
            record_dt: 0.05,
            n_paths: 4,
            seed: 77,
            w0: Some(w0),
        };
        let a = sample_exponent(&k, &mk(Field::constant(g, 1.0))).unwrap().1;
        let spiky = Field::from_fn(g, |x, _| 0.05 + (-(x - 0.3) * (x - 0.3) * 40.0).exp());
        let b = sample_exponent(&k, &mk(spiky)).unwrap().1;
        for (sa, sb) in a.iter().zip(b.iter()) {
            assert!((sa.slope - sb.slope).abs() < 1e-3, "{} vs {}", sa.slope, sb.slope);
        }
    }

    #[test]
    fn decompose_constant_kernel_recovers_brownian_increments() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let stream = NoiseStream::new(15, 0);
        let dt = 1e-3;
        let ou = solve_y(&k, 0.8, 1.0, dt, stream).unwrap();
        let traj = evolve_linear(&Field::constant(g, 1.0), &ou, &k, 0.0).unwrap();
        let rec = log_radius_decompose(&traj, &k, 0.8, 0.3).unwrap();
        let mut buf = vec![0.0; 16];
        for i in 1..rec.times.len() {
            k.sample_into(&stream, (i - 1) as u64, dt, &mut buf);
            assert!(
                (rec.martingale_residual[i] - buf[0]).abs() < 1e-6,
                "step {i}: {} vs {}",
                rec.martingale_residual[i],
                buf[0]
            );
        }
        assert!(rec.predictable_qv() <= k.sup_norm * 1.0 + 1e-12);
    }

    #[test]
    fn decompose_noiseless_residual_is_zero() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let ou = solve_y(&k, 0.4, 1.0, 1e-3, NoiseStream::new(2, 0)).unwrap();
        let w0 = Field::from_fn(g, |x, _| 1.0 + 0.3 * (TWO_PI * x).sin());
        let traj = evolve_linear(&w0, &ou, &k, 0.0).unwrap();
        let rec = log_radius_decompose(&traj, &k, 0.4, 0.4).unwrap();
        for (i, r) in rec.martingale_residual.iter().enumerate() {
            assert!(r.abs() < 1e-12, "residual[{i}] = {r}");
        }
        for i in 1..rec.times.len() {
            let dlog = rec.log_r[i] - rec.log_r[i - 1];
            assert!((dlog - 0.4 * 1e-3).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_mean_is_centred() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let n_paths = 300;
        let dt = 2e-3;
        let horizon = 5.0;
        let finals: Vec<f64> = run_indexed(n_paths, |p| {
            let mut stepper = LinearFlowStepper::new(
                &k,
                NoiseStream::new(33, p as u64),
                FlowParams { gamma: 0.5, damping: 0.0, dt },
                0,
            );
            let col = stepper.add_column(&vec![1.0; 32]).unwrap();
            let mut scratch = Vec::new();
            let mut acc = 0.0;
            let mut prev_log = stepper.log_r(col);
            let mut prev_q = stepper.q_of_column(col, &mut scratch);
            let n_steps = (horizon / dt).round() as u64;
            let rec = 25u64;
            for step in 1..=n_steps {
                stepper.step();
                if step % rec == 0 {
                    let lr = stepper.log_r(col);
                    let q = stepper.q_of_column(col, &mut scratch);
                    let wdt = rec as f64 * dt;
                    acc += lr - prev_log - (0.5 - 0.25 * (q + prev_q)) * wdt;
                    prev_log = lr;
                    prev_q = q;
                }
            }
            acc
        });
        let (mean, se) = mean_se(&finals);
        assert!(mean.abs() < 3.0 * se, "residual mean {mean} (se {se})");
    }
}
