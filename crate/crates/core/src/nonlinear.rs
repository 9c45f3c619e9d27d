//! The nonlinear flow Ψ of du = Δu dt + f(u) dt + σ(u) dW, the auxiliary
//! processes X and Y, the cut-off/stopping machinery of the piecewise
//! linearised processes, and the negative-moment instability experiment.
//!
//! The nonlinear solver is a mild exponential-Euler step
//!
//! ```text
//! u_{n+1} = P_dt( u_n + f(u_n) dt + σ(u_n) ΔW_n ),
//! ```
//!
//! floored at zero with a counted diagnostic, with blow-up declared once
//! ‖u‖_∞ exceeds 1e12 (after blow-up the solution counts as +∞ and negative
//! powers of its minimum as 0). The piecewise machinery evolves its linear
//! comparison flows with the same mild scheme on the same noise cells, so
//! the pointwise dominations it certifies are scheme-consistent.

use crate::ensemble::{lsq_slope, mean_se, run_indexed};
use crate::error::LabError;
use crate::grid::{BlowUpFlag, Field, GridDescriptor};
use crate::linear::steps_for;
use crate::noise::CorrelationKernel;
use crate::rng::NoiseStream;
use crate::spectral::Spectral;
use crate::Result;
use rustfft::num_complex::Complex64;

/// Blow-up threshold in sup norm.
pub const BLOW_UP_SUP: f64 = 1e12;

/// Reaction and diffusion coefficients with f(0) = σ(0) = 0, σ′(0) = 1.
///
/// Noise strength is carried by the correlation kernel's variance, not by
/// σ itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Nonlinearity {
    /// f(u) = γu, σ(u) = u: the linearised dynamics themselves.
    Linear { gamma: f64 },
    /// f(u) = γu − βu², σ(u) = u (partially linear case). β may be negative.
    Logistic { gamma: f64, beta: f64 },
    /// Allen-Cahn shifted to its fixed point: v = 1 − u turns
    /// du = Δu + (α/2)(u³−u) + (σ/2)(1−u²) dW into
    /// f(v) = (α/2) v(1−v)(2−v), σ(v) = v − v²/2, with f′(0) = α, σ′(0) = 1.
    ShiftedAllenCahn { alpha: f64 },
}

impl Nonlinearity {
    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Linear { gamma } => gamma * u,
            Nonlinearity::Logistic { gamma, beta } => gamma * u - beta * u * u,
            Nonlinearity::ShiftedAllenCahn { alpha } => {
                0.5 * alpha * u * (1.0 - u) * (2.0 - u)
            }
        }
    }

    #[inline]
    pub fn sigma(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Linear { .. } | Nonlinearity::Logistic { .. } => u,
            Nonlinearity::ShiftedAllenCahn { .. } => u - 0.5 * u * u,
        }
    }

    pub fn f_prime_0(&self) -> f64 {
        match self {
            Nonlinearity::Linear { gamma } => *gamma,
            Nonlinearity::Logistic { gamma, .. } => *gamma,
            Nonlinearity::ShiftedAllenCahn { alpha } => *alpha,
        }
    }

    /// σ(u) = u exactly (the partially linear case).
    pub fn sigma_is_linear(&self) -> bool {
        matches!(self, Nonlinearity::Linear { .. } | Nonlinearity::Logistic { .. })
    }

    /// Validate f(0) = σ(0) = 0 and σ(u)/u → 1 at small sampled amplitudes.
    pub fn validate(&self) -> Result<()> {
        if self.f(0.0) != 0.0 || self.sigma(0.0) != 0.0 {
            return Err(LabError::InvalidConfig("nonlinearity must vanish at 0".into()));
        }
        let mut prev = f64::INFINITY;
        for &u in &[1e-3, 1e-4, 1e-5] {
            let dev = (self.sigma(u) / u - 1.0).abs();
            if dev > prev.max(1e-3) {
                return Err(LabError::InvalidConfig(
                    "sigma'(0) = 1 normalization violated".into(),
                ));
            }
            prev = dev;
        }
        Ok(())
    }
}

/// Shared physical-space helper: heat multiplier application and spectral
/// gradient sup norms, with persistent scratch.
struct PhysOps {
    sp: Spectral,
    heat_full: Vec<f64>,
    grad_syms: Vec<Vec<f64>>,
    cbuf: Vec<Complex64>,
    cbuf2: Vec<Complex64>,
}

impl PhysOps {
    fn new(grid: GridDescriptor, dt: f64) -> Self {
        let sp = Spectral::for_grid(grid);
        let heat_full = sp.heat_multiplier(dt);
        let grad_syms = (0..grid.dim as usize).map(|a| sp.gradient_symbol(a)).collect();
        let n_tot = grid.total_points();
        PhysOps {
            sp,
            heat_full,
            grad_syms,
            cbuf: vec![Complex64::default(); n_tot],
            cbuf2: vec![Complex64::default(); n_tot],
        }
    }

    fn heat_in_place(&mut self, buf: &mut [f64]) {
        Spectral::real_to_complex(buf, &mut self.cbuf);
        self.sp.forward(&mut self.cbuf);
        for (c, &h) in self.cbuf.iter_mut().zip(self.heat_full.iter()) {
            *c *= h;
        }
        self.sp.inverse(&mut self.cbuf);
        Spectral::complex_to_real(&self.cbuf, buf);
    }

    /// sup_x |∇φ| (euclidean norm over axes).
    #[allow(clippy::needless_range_loop)]
    fn grad_sup(&mut self, buf: &[f64]) -> f64 {
        let n_tot = buf.len();
        let mut acc = vec![0.0f64; n_tot];
        Spectral::real_to_complex(buf, &mut self.cbuf);
        self.sp.forward(&mut self.cbuf);
        for sym in &self.grad_syms {
            for i in 0..n_tot {
                let c = self.cbuf[i];
                self.cbuf2[i] = Complex64::new(-c.im * sym[i], c.re * sym[i]);
            }
            self.sp.inverse(&mut self.cbuf2);
            for (a, c) in acc.iter_mut().zip(self.cbuf2.iter()) {
                *a += c.re * c.re;
            }
        }
        acc.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt()
    }
}

/// Mild exponential-Euler stepper for the nonlinear flow Ψ.
pub struct NonlinearStepper<'k> {
    kernel: &'k CorrelationKernel,
    pub nl: Nonlinearity,
    stream: NoiseStream,
    dt: f64,
    start_step: u64,
    steps_done: u64,
    pub u: Vec<f64>,
    noise: Vec<f64>,
    ops: PhysOps,
    pub floor_events: u64,
    pub blow_up: BlowUpFlag,
}

impl<'k> NonlinearStepper<'k> {
    pub fn new(
        kernel: &'k CorrelationKernel,
        nl: Nonlinearity,
        u0: &Field,
        stream: NoiseStream,
        dt: f64,
        start_step: u64,
    ) -> Result<Self> {
        nl.validate()?;
        if u0.grid != kernel.grid {
            return Err(LabError::GridMismatch("u0 grid mismatch".into()));
        }
        if !u0.is_finite() {
            return Err(LabError::NonFiniteField);
        }
        if u0.min() < 0.0 {
            return Err(LabError::NotNonnegative);
        }
        let n_tot = kernel.grid.total_points();
        Ok(NonlinearStepper {
            kernel,
            nl,
            stream,
            dt,
            start_step,
            steps_done: 0,
            u: u0.values.clone(),
            noise: vec![0.0; n_tot],
            ops: PhysOps::new(kernel.grid, dt),
            floor_events: 0,
            blow_up: BlowUpFlag::default(),
        })
    }

    pub fn elapsed(&self) -> f64 {
        self.steps_done as f64 * self.dt
    }

    pub fn grid_steps(&self) -> u64 {
        self.steps_done
    }

    pub fn step(&mut self) {
        if self.blow_up.blown_up {
            self.steps_done += 1;
            return;
        }
        let abs_step = self.start_step + self.steps_done;
        self.kernel.sample_into(&self.stream, abs_step, self.dt, &mut self.noise);
        for (u, &dw) in self.u.iter_mut().zip(self.noise.iter()) {
            *u += self.nl.f(*u) * self.dt + self.nl.sigma(*u) * dw;
        }
        self.ops.heat_in_place(&mut self.u);
        let mut sup = 0.0f64;
        let mut bad = false;
        for u in self.u.iter_mut() {
            if !u.is_finite() {
                bad = true;
                break;
            }
            if *u < 0.0 {
                *u = 0.0;
                self.floor_events += 1;
            }
            sup = sup.max(*u);
        }
        self.steps_done += 1;
        if bad || sup > BLOW_UP_SUP {
            self.blow_up = BlowUpFlag::at(self.elapsed());
        }
    }

    pub fn min_u(&self) -> f64 {
        self.u.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_u(&self) -> f64 {
        self.u.iter().cloned().fold(0.0, f64::max)
    }

    /// (min_x u)^(-η), with the blow-up convention u ≡ ∞ ⇒ 0.
    pub fn min_u_neg_pow(&self, eta: f64) -> f64 {
        if self.blow_up.blown_up {
            0.0
        } else {
            self.min_u().powf(-eta)
        }
    }

    pub fn field(&self) -> Field {
        Field { grid: self.kernel.grid, values: self.u.clone() }
    }
}

/// Stored nonlinear trajectory.
#[derive(Clone, Debug)]
pub struct NonlinearTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub blow_up: BlowUpFlag,
    pub floor_events: u64,
    /// Total pointwise updates (grid points × steps), the denominator of the
    /// floor-event diagnostic.
    pub grid_steps: u64,
}

/// Evolve Ψ_{0,·}[u0], storing the field every `record_every` steps. After a
/// blow-up, fields stop being stored and the flag carries the time.
pub fn evolve_nonlinear(
    u0: &Field,
    nl: Nonlinearity,
    kernel: &CorrelationKernel,
    stream: NoiseStream,
    dt: f64,
    horizon: f64,
    record_every: u64,
) -> Result<NonlinearTrajectory> {
    let n_steps = steps_for(horizon, dt)?;
    let mut st = NonlinearStepper::new(kernel, nl, u0, stream, dt, 0)?;
    let mut times = vec![0.0];
    let mut fields = vec![u0.clone()];
    for step in 1..=n_steps {
        st.step();
        if st.blow_up.blown_up {
            break;
        }
        if step % record_every.max(1) == 0 || step == n_steps {
            times.push(step as f64 * dt);
            fields.push(st.field());
        }
    }
    Ok(NonlinearTrajectory {
        times,
        fields,
        blow_up: st.blow_up,
        floor_events: st.floor_events,
        grid_steps: st.grid_steps() * kernel.grid.total_points() as u64,
    })
}

/// Solve dX = ΔX dt + (f(Ψ)/Ψ) dt + (σ(Ψ)/Ψ) dW with X_s = 0 along a stored
/// strictly positive trajectory, on the same noise cells.
pub fn solve_x(
    u_fields: &[Field],
    nl: Nonlinearity,
    kernel: &CorrelationKernel,
    stream: NoiseStream,
    dt: f64,
    start_step: u64,
) -> Result<Vec<Field>> {
    let grid = kernel.grid;
    let n_tot = grid.total_points();
    let mut ops = PhysOps::new(grid, dt);
    let mut x = vec![0.0; n_tot];
    let mut noise = vec![0.0; n_tot];
    let mut out = Vec::with_capacity(u_fields.len());
    out.push(Field::constant(grid, 0.0));
    for (idx, u) in u_fields.iter().enumerate().take(u_fields.len() - 1) {
        if u.min() <= 0.0 {
            return Err(LabError::PositivityLost(idx as f64 * dt));
        }
        kernel.sample_into(&stream, start_step + idx as u64, dt, &mut noise);
        for i in 0..n_tot {
            let uu = u.values[i];
            x[i] += self_ratio(nl, uu).0 * dt + self_ratio(nl, uu).1 * noise[i];
        }
        ops.heat_in_place(&mut x);
        out.push(Field { grid, values: x.clone() });
    }
    Ok(out)
}

#[inline]
fn self_ratio(nl: Nonlinearity, u: f64) -> (f64, f64) {
    (nl.f(u) / u, nl.sigma(u) / u)
}

/// Why a segment of the piecewise process ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Deterministic cap s + 𝔱.
    Cap,
    /// Sup-norm exit: ‖flow‖_∞ reached ε₀ (resp. ε₁).
    SupExit,
    /// ‖X − Y‖_∞ + (t−s)^ρ ‖∇(X − Y)‖_∞ reached δ.
    XDrift,
    /// ‖Y‖_{C¹} reached M.
    YNorm,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Cap => "cap",
            StopReason::SupExit => "sup-exit",
            StopReason::XDrift => "x-drift",
            StopReason::YNorm => "y-norm",
        }
    }
}

/// Parameters of the cut-off and stopping machinery.
#[derive(Clone, Copy, Debug)]
pub struct StoppingParams {
    /// Deterministic segment cap 𝔱 > 1.
    pub frak_t: f64,
    /// Sup-exit level ε₀ of the partially linear case.
    pub eps0: f64,
    /// Cut-off level ε < ε₀ (resp. < ε₁).
    pub eps: f64,
    /// Sup-exit level ε₁ of the fully nonlinear case.
    pub eps1: f64,
    /// X-drift level δ.
    pub delta: f64,
    /// C¹ cap M for Y.
    pub big_m: f64,
    /// Blow-up weight ρ ∈ (0, 1/2) on the gradient part of the X monitor.
    pub rho: f64,
    /// Constant C in the admissibility constraint δ e^{C 𝔱 M²} ≤ 1.
    pub c_dtm: f64,
}

impl Default for StoppingParams {
    fn default() -> Self {
        StoppingParams {
            frak_t: 2.0,
            eps0: 0.05,
            eps: 0.005,
            eps1: 0.01,
            delta: 2e-3,
            big_m: 1.5,
            rho: 0.2,
            c_dtm: 1.0,
        }
    }
}

impl StoppingParams {
    pub fn validate(&self, fully_nonlinear: bool) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(LabError::InvalidConfig(format!("rho must lie in (0, 1/2), got {}", self.rho)));
        }
        if self.frak_t <= 1.0 {
            return Err(LabError::InvalidConfig("frak_t must exceed 1".into()));
        }
        if fully_nonlinear {
            if self.eps >= self.eps1 {
                return Err(LabError::InvalidConfig("eps must be below eps1".into()));
            }
            let lhs = self.delta * (self.c_dtm * self.frak_t * self.big_m * self.big_m).exp();
            if lhs > 1.0 {
                return Err(LabError::InvalidConfig(format!(
                    "delta e^(C t M^2) = {lhs:.3e} must not exceed 1"
                )));
            }
        } else if self.eps >= self.eps0 {
            return Err(LabError::InvalidConfig("eps must be below eps0".into()));
        }
        Ok(())
    }
}

/// Pointwise cut-off (Tφ)(x) = min(φ(x), ε).
pub fn cutoff(values: &mut [f64], eps: f64) {
    for v in values.iter_mut() {
        if *v > eps {
            *v = eps;
        }
    }
}

/// Piecewise linearised (or piecewise nonlinear) process record.
#[derive(Clone, Debug)]
pub struct PiecewiseRecord {
    /// τ_0 = 0 < τ_1 < ... (last entry is the horizon).
    pub jump_times: Vec<f64>,
    /// Stop reason per segment.
    pub which_stop: Vec<StopReason>,
    /// Record grid.
    pub times: Vec<f64>,
    pub min_w: Vec<f64>,
    pub sup_w: Vec<f64>,
    pub min_u: Vec<f64>,
    pub sup_u: Vec<f64>,
    /// min over stored times/points of u − w (partially linear) or u̲ − w/2
    /// (fully nonlinear).
    pub domination_margin: f64,
    /// min over stored times/points of u − u̲ (fully nonlinear; NaN otherwise).
    pub underline_margin: f64,
    /// max over stored times of the piecewise process' sup norm.
    pub piecewise_sup_max: f64,
    pub blow_up: BlowUpFlag,
}

/// Which piecewise construction to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiecewiseMode {
    PartiallyLinear,
    FullyNonlinear,
}

/// One-segment stopping monitor: evolve from the (already cut) state and
/// report the first trigger among the monitored conditions.
///
/// In the partially linear mode only the sup-exit of the dampened linear
/// flow and the cap are monitored; the fully nonlinear mode watches Ψ, the
/// X − Y drift and the C¹ norm of Y.
pub struct SegmentOutcome {
    pub tau: f64,
    pub which: StopReason,
    /// Left limit of the monitored flow at τ (before the next cut).
    pub end_state: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn stopping_monitor(
    state0: &[f64],
    nl: Nonlinearity,
    kernel: &CorrelationKernel,
    params: &StoppingParams,
    mode: PiecewiseMode,
    damping: f64,
    stream: NoiseStream,
    dt: f64,
    start_step: u64,
) -> Result<SegmentOutcome> {
    let grid = kernel.grid;
    let n_tot = grid.total_points();
    params.validate(mode == PiecewiseMode::FullyNonlinear)?;
    let cap_steps = (params.frak_t / dt).round() as u64;
    let mut ops = PhysOps::new(grid, dt);
    let mut noise = vec![0.0; n_tot];
    let mut flow: Vec<f64> = state0.to_vec();
    let gamma = nl.f_prime_0();
    match mode {
        PiecewiseMode::PartiallyLinear => {
            // Dampened linear flow, mild Euler on the same noise cells.
            let gamma_eff = gamma - damping;
            for n in 1..=cap_steps {
                kernel.sample_into(&stream, start_step + n - 1, dt, &mut noise);
                for (w, &dw) in flow.iter_mut().zip(noise.iter()) {
                    *w += gamma_eff * *w * dt + *w * dw;
                }
                ops.heat_in_place(&mut flow);
                let sup = flow.iter().cloned().fold(0.0f64, f64::max);
                if sup >= params.eps0 {
                    return Ok(SegmentOutcome {
                        tau: n as f64 * dt,
                        which: StopReason::SupExit,
                        end_state: flow,
                    });
                }
            }
            Ok(SegmentOutcome {
                tau: params.frak_t,
                which: StopReason::Cap,
                end_state: flow,
            })
        }
        PiecewiseMode::FullyNonlinear => {
            let mut x = vec![0.0; n_tot];
            let mut y = vec![0.0; n_tot];
            let mut xy = vec![0.0; n_tot];
            for n in 1..=cap_steps {
                kernel.sample_into(&stream, start_step + n - 1, dt, &mut noise);
                for i in 0..n_tot {
                    let u = flow[i];
                    let (fr, sr) = if u > 0.0 { self_ratio(nl, u) } else { (gamma, 1.0) };
                    x[i] += fr * dt + sr * noise[i];
                    y[i] += gamma * dt + noise[i];
                    flow[i] += nl.f(u) * dt + nl.sigma(u) * noise[i];
                }
                ops.heat_in_place(&mut flow);
                ops.heat_in_place(&mut x);
                ops.heat_in_place(&mut y);
                for v in flow.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let t = n as f64 * dt;
                let sup = flow.iter().cloned().fold(0.0f64, f64::max);
                if sup >= params.eps1 {
                    return Ok(SegmentOutcome { tau: t, which: StopReason::SupExit, end_state: flow });
                }
                for i in 0..n_tot {
                    xy[i] = x[i] - y[i];
                }
                let xy_sup = xy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let xy_grad = ops.grad_sup(&xy);
                if xy_sup + t.powf(params.rho) * xy_grad >= params.delta {
                    return Ok(SegmentOutcome { tau: t, which: StopReason::XDrift, end_state: flow });
                }
                let y_sup = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let y_c1 = y_sup + ops.grad_sup(&y);
                if y_c1 >= params.big_m {
                    return Ok(SegmentOutcome { tau: t, which: StopReason::YNorm, end_state: flow });
                }
            }
            Ok(SegmentOutcome { tau: params.frak_t, which: StopReason::Cap, end_state: flow })
        }
    }
}

/// Construct the piecewise process on [0, horizon] and check its invariants
/// against the untruncated solution driven by the same noise.
#[allow(clippy::too_many_arguments)]
pub fn piecewise_process(
    u0: &Field,
    nl: Nonlinearity,
    kernel: &CorrelationKernel,
    params: &StoppingParams,
    mode: PiecewiseMode,
    damping: f64,
    stream: NoiseStream,
    dt: f64,
    horizon: f64,
    record_every: u64,
) -> Result<PiecewiseRecord> {
    params.validate(mode == PiecewiseMode::FullyNonlinear)?;
    if mode == PiecewiseMode::PartiallyLinear && !nl.sigma_is_linear() {
        return Err(LabError::InvalidConfig(
            "partially linear mode requires sigma(u) = u".into(),
        ));
    }
    let grid = kernel.grid;
    let n_tot = grid.total_points();
    let n_steps = steps_for(horizon, dt)?;
    let cap_steps = (params.frak_t / dt).round().max(1.0) as u64;
    let gamma = nl.f_prime_0();
    let mut ops = PhysOps::new(grid, dt);
    let mut noise = vec![0.0; n_tot];

    // Untruncated solution u.
    let mut u_st = NonlinearStepper::new(kernel, nl, u0, stream, dt, 0)?;

    // Piecewise flow (w in the partially linear case, u-underline in the
    // fully nonlinear case) plus the per-segment linear comparison flow and
    // the X/Y monitors of the fully nonlinear case.
    let sup_level = if mode == PiecewiseMode::PartiallyLinear { params.eps0 } else { params.eps1 };
    let mut w: Vec<f64> = u0.values.clone();
    cutoff(&mut w, params.eps);
    let mut lin: Vec<f64> = w.clone();
    let mut x = vec![0.0; n_tot];
    let mut y = vec![0.0; n_tot];
    let mut xy = vec![0.0; n_tot];

    let mut jump_times = vec![0.0];
    let mut which_stop = Vec::new();
    let mut times = vec![0.0];
    let mut min_w = vec![w.iter().cloned().fold(f64::INFINITY, f64::min)];
    let mut sup_w = vec![w.iter().cloned().fold(0.0f64, f64::max)];
    let mut min_u = vec![u_st.min_u()];
    let mut sup_u = vec![u_st.sup_u()];
    let mut domination_margin = f64::INFINITY;
    let mut underline_margin = if mode == PiecewiseMode::FullyNonlinear {
        f64::INFINITY
    } else {
        f64::NAN
    };
    let mut piecewise_sup_max = sup_w[0];
    let mut seg_steps: u64 = 0;

    for step in 1..=n_steps {
        let abs_step = step - 1;
        kernel.sample_into(&stream, abs_step, dt, &mut noise);
        u_st.step();
        if u_st.blow_up.blown_up {
            break;
        }
        seg_steps += 1;
        let t = step as f64 * dt;
        match mode {
            PiecewiseMode::PartiallyLinear => {
                let gamma_eff = gamma - damping;
                for (wv, &dw) in w.iter_mut().zip(noise.iter()) {
                    *wv += gamma_eff * *wv * dt + *wv * dw;
                }
                ops.heat_in_place(&mut w);
            }
            PiecewiseMode::FullyNonlinear => {
                for i in 0..n_tot {
                    let uu = w[i];
                    let (fr, sr) = if uu > 0.0 { self_ratio(nl, uu) } else { (gamma, 1.0) };
                    x[i] += fr * dt + sr * noise[i];
                    y[i] += gamma * dt + noise[i];
                    w[i] += nl.f(uu) * dt + nl.sigma(uu) * noise[i];
                    lin[i] += gamma * lin[i] * dt + lin[i] * noise[i];
                }
                ops.heat_in_place(&mut w);
                ops.heat_in_place(&mut x);
                ops.heat_in_place(&mut y);
                ops.heat_in_place(&mut lin);
                for v in w.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }

        // Record before any restart: the stored value at a jump time is the
        // post-cut state of the next segment, matching the cadlag convention.
        let mut triggered: Option<StopReason> = None;
        let sup = w.iter().cloned().fold(0.0f64, f64::max);
        if sup >= sup_level {
            triggered = Some(StopReason::SupExit);
        } else if mode == PiecewiseMode::FullyNonlinear {
            for i in 0..n_tot {
                xy[i] = x[i] - y[i];
            }
            let xy_sup = xy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let ts = seg_steps as f64 * dt;
            if xy_sup + ts.powf(params.rho) * ops.grad_sup(&xy) >= params.delta {
                triggered = Some(StopReason::XDrift);
            } else {
                let y_sup = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if y_sup + ops.grad_sup(&y) >= params.big_m {
                    triggered = Some(StopReason::YNorm);
                }
            }
        }
        if triggered.is_none() && seg_steps >= cap_steps {
            triggered = Some(StopReason::Cap);
        }
        if let Some(reason) = triggered {
            jump_times.push(t);
            which_stop.push(reason);
            cutoff(&mut w, params.eps);
            if mode == PiecewiseMode::FullyNonlinear {
                lin.copy_from_slice(&w);
                for v in x.iter_mut() {
                    *v = 0.0;
                }
                for v in y.iter_mut() {
                    *v = 0.0;
                }
            }
            seg_steps = 0;
            if jump_times.len() as u64 > n_steps / 2 {
                return Err(LabError::StoppingCascade { segments: jump_times.len(), time: t });
            }
        }

        if step % record_every.max(1) == 0 || step == n_steps {
            times.push(t);
            let wmin = w.iter().cloned().fold(f64::INFINITY, f64::min);
            let wsup = w.iter().cloned().fold(0.0f64, f64::max);
            min_w.push(wmin);
            sup_w.push(wsup);
            min_u.push(u_st.min_u());
            sup_u.push(u_st.sup_u());
            piecewise_sup_max = piecewise_sup_max.max(wsup);
            match mode {
                PiecewiseMode::PartiallyLinear => {
                    for (uu, ww) in u_st.u.iter().zip(w.iter()) {
                        domination_margin = domination_margin.min(uu - ww);
                    }
                }
                PiecewiseMode::FullyNonlinear => {
                    for ((uu, ww), ll) in u_st.u.iter().zip(w.iter()).zip(lin.iter()) {
                        underline_margin = underline_margin.min(uu - ww);
                        domination_margin = domination_margin.min(ww - 0.5 * ll);
                    }
                }
            }
        }
    }
    jump_times.push(horizon.min(u_st.elapsed()));
    Ok(PiecewiseRecord {
        jump_times,
        which_stop,
        times,
        min_w,
        sup_w,
        min_u,
        sup_u,
        domination_margin,
        underline_margin,
        piecewise_sup_max,
        blow_up: u_st.blow_up,
    })
}

/// Configuration of the negative-moment experiment.
#[derive(Clone, Debug)]
pub struct MomentConfig {
    pub eta: f64,
    /// Constant initial conditions u0 ≡ scale, one ensemble per scale.
    pub u0_scales: Vec<f64>,
    pub checkpoints: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Estimated Lyapunov exponent of the linearization; λ ≤ 0 switches the
    /// experiment into contrast mode (no decay fit).
    pub lambda_hat: f64,
}

/// One (scale, checkpoint) cell of the moment table.
#[derive(Clone, Copy, Debug)]
pub struct MomentCell {
    pub scale: f64,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub n_blowups: usize,
}

/// Outcome of the negative-moment experiment with the decay fit
/// E[(min u_t)^{-η}] ≈ C₁ e^{-ζ t} (min u₀)^{-η} + C₂.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub cells: Vec<MomentCell>,
    pub contrast_mode: bool,
    pub fit_c1: f64,
    pub fit_zeta: f64,
    pub fit_c2: f64,
    /// Root-mean-square relative residual of the fit.
    pub fit_residual: f64,
}

/// Tabulate E[(min_x u_t)^{-η}] over checkpoints and initial scales; blown-up
/// paths contribute 0.
pub fn negative_moment_experiment(
    nl: Nonlinearity,
    kernel: &CorrelationKernel,
    cfg: &MomentConfig,
) -> Result<MomentReport> {
    let horizon = cfg.checkpoints.iter().cloned().fold(0.0f64, f64::max);
    let n_steps = steps_for(horizon, cfg.dt)?;
    let checkpoint_steps: Vec<u64> =
        cfg.checkpoints.iter().map(|t| (t / cfg.dt).round() as u64).collect();
    let mut cells = Vec::new();
    for (si, &scale) in cfg.u0_scales.iter().enumerate() {
        let u0 = Field::constant(kernel.grid, scale);
        let per_path: Vec<Result<(Vec<f64>, bool)>> = run_indexed(cfg.n_paths, |p| {
            let stream = NoiseStream::new(cfg.seed, (si * cfg.n_paths + p) as u64);
            let mut st = NonlinearStepper::new(kernel, nl, &u0, stream, cfg.dt, 0)?;
            let mut vals = Vec::with_capacity(checkpoint_steps.len());
            let mut next = 0usize;
            for step in 1..=n_steps {
                st.step();
                while next < checkpoint_steps.len() && checkpoint_steps[next] == step {
                    vals.push(st.min_u_neg_pow(cfg.eta));
                    next += 1;
                }
                if next >= checkpoint_steps.len() {
                    break;
                }
            }
            while vals.len() < checkpoint_steps.len() {
                vals.push(st.min_u_neg_pow(cfg.eta));
            }
            Ok((vals, st.blow_up.blown_up))
        });
        let per_path: Vec<(Vec<f64>, bool)> = per_path.into_iter().collect::<Result<_>>()?;
        let n_blowups = per_path.iter().filter(|(_, b)| *b).count();
        for (ci, &t) in cfg.checkpoints.iter().enumerate() {
            let vals: Vec<f64> = per_path.iter().map(|(v, _)| v[ci]).collect();
            let (mean, se) = mean_se(&vals);
            cells.push(MomentCell { scale, t, mean, se, n_blowups });
        }
    }

    let contrast_mode = cfg.lambda_hat <= 0.0;
    let (fit_c1, fit_zeta, fit_c2, fit_residual) = if contrast_mode {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        fit_decay(&cells, cfg.eta)
    };
    Ok(MomentReport { cells, contrast_mode, fit_c1, fit_zeta, fit_c2, fit_residual })
}

/// Least squares for (C₁, C₂) on a grid of decay rates ζ; the model is
/// linear in (C₁, C₂) once ζ is fixed.
fn fit_decay(cells: &[MomentCell], eta: f64) -> (f64, f64, f64, f64) {
    let mut best = (f64::NAN, f64::NAN, f64::NAN, f64::INFINITY);
    let mut zeta = 1e-3;
    while zeta <= 4.0 {
        let mut a11 = 0.0;
        let mut a12 = 0.0;
        let mut a22 = 0.0;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for c in cells {
            let p = (-zeta * c.t).exp() * c.scale.powf(-eta);
            a11 += p * p;
            a12 += p;
            a22 += 1.0;
            b1 += p * c.mean;
            b2 += c.mean;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-30 {
            zeta *= 1.15;
            continue;
        }
        let c1 = (b1 * a22 - b2 * a12) / det;
        let c2 = (a11 * b2 - a12 * b1) / det;
        let mut rss = 0.0;
        for c in cells {
            let p = (-zeta * c.t).exp() * c.scale.powf(-eta);
            let pred = c1 * p + c2;
            let rel = (pred - c.mean) / c.mean.abs().max(1e-300);
            rss += rel * rel;
        }
        let rms = (rss / cells.len() as f64).sqrt();
        if rms < best.3 {
            best = (c1, zeta, c2, rms);
        }
        zeta *= 1.15;
    }
    best
}

/// Least-squares slope of log d against log levels, used by exit-time checks.
pub fn slope_of_logs(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    lsq_slope(&lx, &ly).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{evolve_linear, solve_y};
    use crate::noise::{build_kernel, KernelSpec};

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn presets_validate() {
        Nonlinearity::Linear { gamma: 0.7 }.validate().unwrap();
        Nonlinearity::Logistic { gamma: 0.5, beta: 1.0 }.validate().unwrap();
        Nonlinearity::ShiftedAllenCahn { alpha: 1.3 }.validate().unwrap();
        let ac = Nonlinearity::ShiftedAllenCahn { alpha: 1.3 };
        assert!((ac.f_prime_0() - 1.3).abs() < 1e-15);
        // f(v) = (alpha/2) v (1-v)(2-v) vanishes at the shifted fixed points.
        assert!(ac.f(0.0) == 0.0 && ac.f(1.0).abs() < 1e-15 && ac.f(2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let traj = evolve_nonlinear(
            &Field::constant(g, 0.0),
            Nonlinearity::ShiftedAllenCahn { alpha: 1.0 },
            &k,
            NoiseStream::new(3, 0),
            1e-3,
            0.2,
            50,
        )
        .unwrap();
        for f in &traj.fields {
            for v in &f.values {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn linear_preset_matches_transform_solver_noiseless() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let gamma = 1.0;
        let dt = 1e-5;
        let w0 = Field::from_fn(g, |x, _| 1.0 + 0.5 * (TWO_PI * x).sin());
        let traj = evolve_nonlinear(
            &w0,
            Nonlinearity::Linear { gamma },
            &k,
            NoiseStream::new(1, 0),
            dt,
            1.0,
            100_000,
        )
        .unwrap();
        let ou = solve_y(&k, gamma, 1.0, 1e-3, NoiseStream::new(1, 0)).unwrap();
        let exact = evolve_linear(&w0, &ou, &k, 0.0).unwrap();
        let a = traj.fields.last().unwrap();
        let b = exact.fields.last().unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn euler_transform_gap_shrinks_with_dt() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let gamma = 0.5;
        let horizon = 1.0;
        let gap_rms = |dt: f64| -> f64 {
            let gaps: Vec<f64> = (0..20u64)
                .map(|p| {
                    let stream = NoiseStream::new(60 + p, 0);
                    let traj = evolve_nonlinear(
                        &Field::constant(g, 1.0),
                        Nonlinearity::Linear { gamma },
                        &k,
                        stream,
                        dt,
                        horizon,
                        (horizon / dt) as u64,
                    )
                    .unwrap();
                    let ou = solve_y(&k, gamma, horizon, dt, stream).unwrap();
                    let lin = evolve_linear(&Field::constant(g, 1.0), &ou, &k, 0.0).unwrap();
                    let a = traj.fields.last().unwrap().values[0];
                    let b = lin.fields.last().unwrap().values[0];
                    (a.ln() - b.ln()).abs()
                })
                .collect();
            (gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64).sqrt()
        };
        let coarse = gap_rms(4e-3);
        let fine = gap_rms(1e-3);
        assert!(fine < 0.8 * coarse, "strong-order gap should shrink: {coarse} -> {fine}");
    }

    #[test]
    fn quadratic_ode_blow_up() {
        let g = GridDescriptor::d1(8);
        let k = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let traj = evolve_nonlinear(
            &Field::constant(g, 2.0),
            Nonlinearity::Logistic { gamma: 0.0, beta: -1.0 },
            &k,
            NoiseStream::new(1, 0),
            1e-6,
            1.0,
            100_000,
        )
        .unwrap();
        assert!(traj.blow_up.blown_up);
        let t = traj.blow_up.blow_up_time.unwrap();
        // Scalar ODE u' = u^2 from u0 = 2 blows up at t = 0.5; Euler lags by
        // about dt·ln(u_max/u0) ≈ 3e-5.
        assert!((t - 0.5).abs() < 1e-3, "blow-up at {t}");
    }

    #[test]
    fn positivity_and_floor_diagnostics() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let u0 = Field::from_fn(g, |x, _| (0.3 - (x - 0.5).abs()).max(0.0));
        let traj = evolve_nonlinear(
            &u0,
            Nonlinearity::Logistic { gamma: 0.8, beta: 1.0 },
            &k,
            NoiseStream::new(9, 4),
            1e-3,
            2.0,
            100,
        )
        .unwrap();
        for f in &traj.fields {
            assert!(f.min() >= 0.0);
        }
        let rate = traj.floor_events as f64 / traj.grid_steps as f64;
        assert!(rate <= 1e-3, "floor rate {rate}");
    }

    #[test]
    fn comparison_in_initial_condition() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let nl = Nonlinearity::Logistic { gamma: 0.6, beta: 1.0 };
        let stream = NoiseStream::new(12, 1);
        let a = evolve_nonlinear(&Field::constant(g, 0.05), nl, &k, stream, 1e-3, 1.0, 100).unwrap();
        let b = evolve_nonlinear(&Field::constant(g, 0.08), nl, &k, stream, 1e-3, 1.0, 100).unwrap();
        for (fa, fb) in a.fields.iter().zip(b.fields.iter()) {
            for (x, y) in fa.values.iter().zip(fb.values.iter()) {
                assert!(x <= &(y + 1e-10), "comparison violated: {x} vs {y}");
            }
        }
    }

    #[test]
    fn x_equals_y_for_linear_nonlinearity() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.3), g).unwrap();
        let nl = Nonlinearity::Linear { gamma: 0.4 };
        let stream = NoiseStream::new(5, 2);
        let traj =
            evolve_nonlinear(&Field::constant(g, 0.5), nl, &k, stream, 1e-3, 0.5, 1).unwrap();
        let xs = solve_x(&traj.fields, nl, &k, stream, 1e-3, 0).unwrap();
        assert!(xs[0].values.iter().all(|v| *v == 0.0));
        // With f(u)/u = gamma and sigma(u)/u = 1 the X update is exactly the
        // Y update.
        let ou = solve_y(&k, 0.4, 0.5, 1e-3, stream).unwrap();
        for (xf, yf) in xs.iter().zip(ou.fields.iter()) {
            for (a, b) in xf.values.iter().zip(yf.values.iter()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn x_tracks_y_for_small_amplitudes() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let nl = Nonlinearity::ShiftedAllenCahn { alpha: 1.5 };
        let stream = NoiseStream::new(8, 3);
        let traj =
            evolve_nonlinear(&Field::constant(g, 1e-3), nl, &k, stream, 1e-3, 1.0, 1).unwrap();
        assert!(!traj.blow_up.blown_up);
        let xs = solve_x(&traj.fields, nl, &k, stream, 1e-3, 0).unwrap();
        let ou = solve_y(&k, 1.5, 1.0, 1e-3, stream).unwrap();
        let mut worst = 0.0f64;
        for (xf, yf) in xs.iter().zip(ou.fields.iter()) {
            for (a, b) in xf.values.iter().zip(yf.values.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-2, "sup |X - Y| = {worst}");
    }

    #[test]
    fn monitor_cap_when_nothing_grows() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let params = StoppingParams { frak_t: 1.5, eps0: 0.1, eps: 0.01, ..Default::default() };
        let state = vec![0.005; 16];
        let out = stopping_monitor(
            &state,
            Nonlinearity::Linear { gamma: 0.0 },
            &k,
            &params,
            PiecewiseMode::PartiallyLinear,
            0.0,
            NoiseStream::new(1, 0),
            1e-3,
            0,
        )
        .unwrap();
        assert_eq!(out.which, StopReason::Cap);
        assert!((out.tau - 1.5).abs() < 1e-12);
    }

    #[test]
    fn monitor_y_norm_never_triggers_for_huge_m() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        // c_dtm = 0 keeps the admissibility product at delta itself, the only
        // way to combine a huge M with a finite delta.
        let params = StoppingParams {
            frak_t: 2.0,
            eps1: 1e9,
            eps: 0.5,
            delta: 0.9,
            big_m: 1e6,
            c_dtm: 0.0,
            ..Default::default()
        };
        for p in 0..20 {
            let out = stopping_monitor(
                &[1e-4; 16],
                Nonlinearity::ShiftedAllenCahn { alpha: 1.0 },
                &k,
                &params,
                PiecewiseMode::FullyNonlinear,
                0.0,
                NoiseStream::new(40, p),
                2e-3,
                0,
            )
            .unwrap();
            assert_eq!(out.which, StopReason::Cap, "path {p}");
        }
    }

    #[test]
    fn sup_exit_frequency_decreases_with_eps() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let freq = |eps: f64| -> f64 {
            let n = 200;
            let hits: usize = (0..n)
                .filter(|&p| {
                    let params = StoppingParams {
                        frak_t: 2.0,
                        eps0: 0.05,
                        eps,
                        ..Default::default()
                    };
                    let out = stopping_monitor(
                        &[eps; 16],
                        Nonlinearity::Linear { gamma: 0.3 },
                        &k,
                        &params,
                        PiecewiseMode::PartiallyLinear,
                        0.0,
                        NoiseStream::new(71, p as u64),
                        2e-3,
                        0,
                    )
                    .unwrap();
                    out.which == StopReason::SupExit
                })
                .count();
            hits as f64 / n as f64
        };
        let loose = freq(0.045);
        let tight = freq(0.01);
        assert!(loose > tight, "exit frequency must decrease with eps: {loose} vs {tight}");
    }

    #[test]
    fn piecewise_partially_linear_domination_deterministic() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(0.0), g).unwrap();
        let gamma = 0.5;
        // kappa = 0 makes the linearization exponent equal gamma.
        let params = StoppingParams {
            frak_t: 2.0,
            eps0: gamma / 2.0,
            eps: 0.1,
            ..Default::default()
        };
        let rec = piecewise_process(
            &Field::constant(g, 0.01),
            Nonlinearity::Logistic { gamma, beta: 1.0 },
            &k,
            &params,
            PiecewiseMode::PartiallyLinear,
            gamma / 2.0,
            NoiseStream::new(1, 0),
            1e-3,
            12.0,
            50,
        )
        .unwrap();
        assert!(rec.domination_margin >= -1e-12, "w <= u violated: {}", rec.domination_margin);
        assert!(rec.piecewise_sup_max <= params.eps0 + 1e-12);
        assert!(!rec.blow_up.blown_up);
    }

    #[test]
    fn piecewise_single_segment_when_unconstrained() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.3), g).unwrap();
        let params = StoppingParams {
            frak_t: 1.0 + 1e-9 + 1.0, // cap beyond the horizon
            eps0: f64::INFINITY,
            eps: 0.02,
            ..Default::default()
        };
        let rec = piecewise_process(
            &Field::constant(g, 0.05),
            Nonlinearity::Linear { gamma: 0.4 },
            &k,
            &params,
            PiecewiseMode::PartiallyLinear,
            0.2,
            NoiseStream::new(2, 0),
            1e-3,
            1.0,
            100,
        )
        .unwrap();
        assert_eq!(rec.which_stop.len(), 0, "no stop should trigger");
    }

    #[test]
    fn piecewise_fully_nonlinear_lemma_comparison() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let params = StoppingParams {
            frak_t: 2.0,
            eps1: 1e-2,
            eps: 5e-3,
            delta: 3e-4,
            big_m: 1.8,
            rho: 0.2,
            c_dtm: 1.0,
            eps0: 1.0,
        };
        params.validate(true).unwrap();
        for p in 0..5 {
            let rec = piecewise_process(
                &Field::constant(g, 5e-3),
                Nonlinearity::ShiftedAllenCahn { alpha: 1.2 },
                &k,
                &params,
                PiecewiseMode::FullyNonlinear,
                0.0,
                NoiseStream::new(90, p),
                1e-3,
                6.0,
                50,
            )
            .unwrap();
            assert!(
                rec.domination_margin >= -1e-12,
                "path {p}: psi >= phi/2 violated by {}",
                rec.domination_margin
            );
            assert!(
                rec.underline_margin >= -1e-12,
                "path {p}: u-underline <= u violated by {}",
                rec.underline_margin
            );
            assert!(rec.piecewise_sup_max <= params.eps1 + 1e-12);
        }
    }

    #[test]
    fn gbm_negative_moment_oracle() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let gamma = 1.0;
        let eta = 0.1;
        let cfg = MomentConfig {
            eta,
            u0_scales: vec![0.01],
            checkpoints: vec![1.0, 2.0],
            dt: 1e-3,
            n_paths: 400,
            seed: 5,
            lambda_hat: 0.5,
        };
        let rep =
            negative_moment_experiment(Nonlinearity::Linear { gamma }, &k, &cfg).unwrap();
        assert!(!rep.contrast_mode);
        for cell in &rep.cells {
            // E[u_t^{-eta}] = u0^{-eta} exp(eta(-gamma + (1+eta)/2) t).
            let exact =
                cell.scale.powf(-eta) * (eta * (-gamma + (1.0 + eta) * 0.5) * cell.t).exp();
            assert!(
                (cell.mean - exact).abs() < 3.0 * cell.se,
                "t={}: {} vs {} (se {})",
                cell.t,
                cell.mean,
                exact,
                cell.se
            );
        }
    }

    #[test]
    fn contrast_mode_grows() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        let cfg = MomentConfig {
            eta: 0.2,
            u0_scales: vec![0.01],
            checkpoints: vec![1.0, 2.0, 5.0, 10.0],
            dt: 1e-3,
            n_paths: 400,
            seed: 6,
            lambda_hat: -0.3,
        };
        let rep = negative_moment_experiment(
            Nonlinearity::Linear { gamma: 0.2 },
            &k,
            &cfg,
        )
        .unwrap();
        assert!(rep.contrast_mode);
        for w in rep.cells.windows(2) {
            assert!(w[1].mean > w[0].mean, "moments must grow in contrast mode");
        }
    }
}
