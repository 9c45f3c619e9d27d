//! The projective space P of strictly positive unit-mass functions, with
//! Hilbert's projective metric
//!
//! ```text
//! d_P(φ, ψ) = log max_x (φ/ψ) − log min_x (φ/ψ),
//! ```
//!
//! and the projective process π_t = Φ_t[w]/‖Φ_t[w]‖_{L¹}. The projective
//! dynamics are produced by normalizing the linear flow, never by
//! discretizing the nonlocal SPDE of π directly. Birkhoff's contraction
//! principle makes every strictly positive flow kernel a d_P-contraction,
//! which the synchronization experiments measure both through coupled pairs
//! and through the kernel's projective diameter.

use crate::ensemble::{lsq_slope, mean_se, run_indexed};
use crate::error::LabError;
use crate::grid::{Field, GridDescriptor};
use crate::linear::{
    compute_kernel_k, kernel_stats, solve_y, FlowParams, LinearFlowStepper, OUPath,
};
use crate::noise::CorrelationKernel;
use crate::rng::NoiseStream;
use crate::Result;

/// Positivity floor: smaller minima trigger a diagnostic error rather than
/// clamping, which would bias Hilbert distances.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// A strictly positive field with unit L¹ mass.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectivePoint {
    field: Field,
}

impl ProjectivePoint {
    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn grid(&self) -> GridDescriptor {
        self.field.grid
    }

    pub fn into_field(self) -> Field {
        self.field
    }

    /// Uniform point π ≡ 1.
    pub fn uniform(grid: GridDescriptor) -> Self {
        ProjectivePoint { field: Field::constant(grid, 1.0) }
    }

    /// Wrap raw values, renormalizing to unit mass; errors outside the cone.
    pub fn from_values(grid: GridDescriptor, values: Vec<f64>) -> Result<Self> {
        project(&Field::new(grid, values)?)
    }
}

/// Normalize a strictly positive field to unit L¹ mass.
pub fn project(field: &Field) -> Result<ProjectivePoint> {
    if !field.is_finite() {
        return Err(LabError::NonFiniteField);
    }
    if field.min() <= POSITIVITY_FLOOR {
        return Err(LabError::NotInPositiveCone);
    }
    let mass = field.mean();
    let values = field.values.iter().map(|v| v / mass).collect();
    Ok(ProjectivePoint { field: Field { grid: field.grid, values } })
}

/// Hilbert's projective metric between two strictly positive points.
pub fn hilbert_distance(p: &ProjectivePoint, q: &ProjectivePoint) -> f64 {
    hilbert_distance_values(p.values(), q.values())
}

/// Hilbert distance on raw strictly positive slices.
pub fn hilbert_distance_values(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    for (a, b) in p.iter().zip(q.iter()) {
        let r = a / b;
        max_ratio = max_ratio.max(r);
        min_ratio = min_ratio.min(r);
    }
    (max_ratio / min_ratio).ln()
}

/// Evolve the projective process from `p0` by normalizing the linear flow at
/// every stored time of the path.
pub fn evolve_projective(
    p0: &ProjectivePoint,
    ou: &OUPath,
    kernel: &CorrelationKernel,
) -> Result<Vec<ProjectivePoint>> {
    if p0.grid() != kernel.grid {
        return Err(LabError::GridMismatch("projective point on a different grid".into()));
    }
    let mut stepper = LinearFlowStepper::new(
        kernel,
        ou.stream,
        FlowParams { gamma: ou.gamma, damping: 0.0, dt: ou.dt },
        ou.start_step,
    );
    let col = stepper.add_column(p0.values())?;
    let n_tot = kernel.grid.total_points();
    let mut out = Vec::with_capacity(ou.times.len());
    out.push(p0.clone());
    let mut buf = vec![0.0; n_tot];
    for _ in 0..ou.n_steps() {
        stepper.step();
        stepper.pi_into(col, &mut buf);
        out.push(ProjectivePoint::from_values(kernel.grid, buf.clone())?);
    }
    Ok(out)
}

/// Coupled two-trajectory record: d_P between two projective trajectories
/// driven by the same noise.
#[derive(Clone, Debug)]
pub struct SyncRecord {
    pub times: Vec<f64>,
    pub d_p: Vec<f64>,
    /// Least-squares slope of log d_P over the fit window (within the
    /// numerically resolvable range of d_P).
    pub fitted_rate: f64,
    /// Observed d_P ratios over consecutive unit windows, while resolvable.
    pub window_ratios: Vec<f64>,
}

/// Numerical resolvability floor for d_P: below ~1e-13 the ratio extremes
/// are dominated by float cancellation.
pub const DP_RESOLVABLE: f64 = 1e-13;

/// Configuration of the synchronization/contraction experiment.
#[derive(Clone, Debug)]
pub struct SyncConfig {
    pub gamma: f64,
    pub dt: f64,
    pub horizon: f64,
    pub record_dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Fit window for the rate; defaults to the second half of the horizon,
    /// always intersected with the resolvable range.
    pub fit_window: Option<(f64, f64)>,
    /// Number of leading paths on which the flow kernel per unit window is
    /// computed for the Birkhoff factor tanh(diameter/4).
    pub kernel_tau_paths: usize,
    /// Unit windows per sampled path for the kernel factor.
    pub kernel_tau_windows: usize,
}

/// Aggregate outcome of the synchronization experiment.
#[derive(Clone, Debug)]
pub struct SyncOutcome {
    pub records: Vec<SyncRecord>,
    /// (tanh(diameter/4), observed ratio) pairs on sampled unit windows.
    pub kernel_tau_pairs: Vec<(f64, f64)>,
    pub mean_window_ratio: f64,
    pub se_window_ratio: f64,
    pub mean_kernel_tau: f64,
}

fn fit_rate(times: &[f64], d_p: &[f64], window: Option<(f64, f64)>) -> f64 {
    // Restrict to the resolvable range.
    let mut t_max = f64::NEG_INFINITY;
    for (t, d) in times.iter().zip(d_p.iter()) {
        if *d > DP_RESOLVABLE {
            t_max = *t;
        } else {
            break;
        }
    }
    if !t_max.is_finite() {
        return f64::NAN;
    }
    let (mut lo, mut hi) = window.unwrap_or((times[times.len() - 1] / 2.0, times[times.len() - 1]));
    hi = hi.min(t_max);
    if lo >= hi {
        lo = t_max / 2.0;
        hi = t_max;
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, d) in times.iter().zip(d_p.iter()) {
        if *t >= lo && *t <= hi && *d > DP_RESOLVABLE {
            ts.push(*t);
            ys.push(d.ln());
        }
    }
    if ts.len() < 3 {
        return f64::NAN;
    }
    lsq_slope(&ts, &ys).0
}

/// Evolve one coupled pair and record d_P at the record cadence.
#[allow(clippy::too_many_arguments)]
pub fn coupled_pair_record(
    p0: &ProjectivePoint,
    q0: &ProjectivePoint,
    kernel: &CorrelationKernel,
    gamma: f64,
    dt: f64,
    horizon: f64,
    record_dt: f64,
    stream: NoiseStream,
    fit_window: Option<(f64, f64)>,
) -> Result<SyncRecord> {
    let n_steps = crate::linear::steps_for(horizon, dt)?;
    let rec_every = (record_dt / dt).round().max(1.0) as u64;
    let mut stepper =
        LinearFlowStepper::new(kernel, stream, FlowParams { gamma, damping: 0.0, dt }, 0);
    let ca = stepper.add_column(p0.values())?;
    let cb = stepper.add_column(q0.values())?;
    let n_tot = kernel.grid.total_points();
    let mut pa = vec![0.0; n_tot];
    let mut pb = vec![0.0; n_tot];
    let mut times = vec![0.0];
    let mut d_p = vec![hilbert_distance(p0, q0)];
    for step in 1..=n_steps {
        stepper.step();
        if step % rec_every == 0 || step == n_steps {
            stepper.pi_into(ca, &mut pa);
            stepper.pi_into(cb, &mut pb);
            times.push(step as f64 * dt);
            d_p.push(hilbert_distance_values(&pa, &pb));
        }
    }
    let fitted_rate = fit_rate(&times, &d_p, fit_window);
    // Ratios over consecutive unit windows while resolvable.
    let mut window_ratios = Vec::new();
    let mut unit = 1.0f64;
    let mut prev = d_p[0];
    for (t, d) in times.iter().zip(d_p.iter()) {
        if (*t - unit).abs() < 0.51 * record_dt.max(dt) {
            if prev > DP_RESOLVABLE && *d > 0.0 {
                window_ratios.push(*d / prev);
            }
            prev = *d;
            unit += 1.0;
        }
    }
    Ok(SyncRecord { times, d_p, fitted_rate, window_ratios })
}

/// Synchronization experiment over an ensemble of coupled pairs.
///
/// Every pair shares one noise path; the ensemble reports per-path fitted
/// rates, per-window observed contraction ratios, and on a subsample of
/// (path, window) cells the kernel-based Birkhoff factor tanh(diameter/4)
/// next to the observed ratio.
pub fn synchronization_experiment(
    p0: &ProjectivePoint,
    q0: &ProjectivePoint,
    kernel: &CorrelationKernel,
    cfg: &SyncConfig,
) -> Result<SyncOutcome> {
    let records: Vec<Result<SyncRecord>> = run_indexed(cfg.n_paths, |p| {
        coupled_pair_record(
            p0,
            q0,
            kernel,
            cfg.gamma,
            cfg.dt,
            cfg.horizon,
            cfg.record_dt,
            NoiseStream::new(cfg.seed, p as u64),
            cfg.fit_window,
        )
    });
    let records: Vec<SyncRecord> = records.into_iter().collect::<Result<_>>()?;

    // Kernel-based contraction factors on a subsample of unit windows,
    // paired with the observed ratio on the same window and noise.
    let n_tau_paths = cfg.kernel_tau_paths.min(cfg.n_paths);
    let tau_jobs: Vec<(usize, usize)> = (0..n_tau_paths)
        .flat_map(|p| (0..cfg.kernel_tau_windows).map(move |w| (p, w)))
        .collect();
    let kernel_tau_pairs: Vec<Result<(f64, f64)>> = run_indexed(tau_jobs.len(), |j| {
        let (p, w) = tau_jobs[j];
        let stream = NoiseStream::new(cfg.seed, p as u64);
        let (s, t) = (w as f64, (w + 1) as f64);
        let ou = solve_y(kernel, cfg.gamma, t, cfg.dt, stream)?;
        let fk = compute_kernel_k(&ou, kernel, s, t, 0.0)?;
        let tau = kernel_stats(&fk).contraction_factor;
        let rec = &records[p];
        let find = |tt: f64| -> Option<f64> {
            rec.times
                .iter()
                .zip(rec.d_p.iter())
                .find(|(rt, _)| (**rt - tt).abs() < 0.51 * cfg.record_dt.max(cfg.dt))
                .map(|(_, d)| *d)
        };
        let before = find(s).unwrap_or(f64::NAN);
        let after = find(t).unwrap_or(f64::NAN);
        let observed =
            if before > DP_RESOLVABLE { after / before } else { f64::NAN };
        Ok((tau, observed))
    });
    let kernel_tau_pairs: Vec<(f64, f64)> = kernel_tau_pairs.into_iter().collect::<Result<_>>()?;

    let all_ratios: Vec<f64> =
        records.iter().flat_map(|r| r.window_ratios.iter().copied()).collect();
    let (mean_window_ratio, se_window_ratio) = mean_se(&all_ratios);
    let taus: Vec<f64> = kernel_tau_pairs.iter().map(|(t, _)| *t).collect();
    let mean_kernel_tau = if taus.is_empty() { f64::NAN } else { mean_se(&taus).0 };

    Ok(SyncOutcome {
        records,
        kernel_tau_pairs,
        mean_window_ratio,
        se_window_ratio,
        mean_kernel_tau,
    })
}
