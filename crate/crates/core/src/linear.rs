//! The linearised flow Φ_{s,t} and its dampened variant Ξ_{s,t} = e^{-ζ(t-s)} Φ_{s,t}.
//!
//! The flow solves dΦ = ΔΦ dt + γΦ dt + Φ dW. It is never discretized in its
//! Itô form; instead it is produced through the exponential transform
//!
//! ```text
//! Φ_{s,t} = e^{Y_{s,t}} Φ̄_{s,t},
//! dY = ΔY dt + γ dt + dW (Y_s = 0),
//! ∂_t Φ̄ = ΔΦ̄ + 2∇Y·∇Φ̄ + |∇Y|² Φ̄ − ½ κ_tr Φ̄,
//! ```
//!
//! which removes the noise from the Φ̄ equation altogether. Per step the
//! scheme is: exact spectral half-step for Δ, a semi-Lagrangian step along
//! the characteristics of 2∇Y·∇ combined with an exact pointwise exponential
//! for (|∇Y|² − ½κ_tr), and a second exact half-step for Δ. The zeroth-order
//! factor is integrated exponentially so the space-independent case
//! reproduces geometric Brownian motion to machine precision, and the
//! semi-Lagrangian interpolation keeps the flow positive and monotone.
//!
//! Φ̄ is renormalized to unit mass every step; the accumulated log mass makes
//! radial statistics overflow-safe for arbitrarily long horizons.

use crate::error::LabError;
use crate::grid::{Field, GridDescriptor};
use crate::noise::CorrelationKernel;
use crate::rng::NoiseStream;
use crate::spectral::Spectral;
use crate::Result;
use rustfft::num_complex::Complex64;

/// Parameters of one linear flow.
#[derive(Clone, Copy, Debug)]
pub struct FlowParams {
    /// Drift γ = f′(0).
    pub gamma: f64,
    /// Exponential dampening rate; λ/2 turns Φ into Ξ.
    pub damping: f64,
    /// Time step.
    pub dt: f64,
}

struct Column {
    phibar: Vec<f64>,
    log_mass: f64,
    log_phi_sup: f64,
}

/// Running pathwise maxima used by the sup-norm bound
/// sup_t ‖Φ_t‖_∞ ≤ exp(‖Y‖_∞ + T‖∇Y‖²_∞)‖w0‖_∞.
#[derive(Clone, Copy, Debug, Default)]
pub struct SupTrackers {
    pub y_sup: f64,
    pub grad_y_sq_sup: f64,
}

/// Fused stepper for Y and any number of Φ̄ columns driven by the same noise.
///
/// Noise is keyed by the absolute step index, so two steppers with the same
/// stream and overlapping step ranges see identical increments; this is what
/// couples restarted flows, piecewise processes and flow kernels pathwise.
pub struct LinearFlowStepper<'k> {
    kernel: &'k CorrelationKernel,
    sp: Spectral,
    grid: GridDescriptor,
    pub params: FlowParams,
    stream: NoiseStream,
    start_step: u64,
    steps_done: u64,
    y_hat: Vec<Complex64>,
    grad_y: Vec<Vec<f64>>,
    y_phys: Vec<f64>,
    y_dirty: bool,
    columns: Vec<Column>,
    heat_full: Vec<f64>,
    heat_half: Vec<f64>,
    grad_syms: Vec<Vec<f64>>,
    half_ktr: Vec<f64>,
    cbuf: Vec<Complex64>,
    noise_buf: Vec<Complex64>,
    src: Vec<f64>,
    track_sup: bool,
    sup: SupTrackers,
    fast_constant: bool,
}

impl<'k> LinearFlowStepper<'k> {
    pub fn new(
        kernel: &'k CorrelationKernel,
        stream: NoiseStream,
        params: FlowParams,
        start_step: u64,
    ) -> Self {
        let grid = kernel.grid;
        let sp = Spectral::for_grid(grid);
        let n_tot = grid.total_points();
        let dim = grid.dim as usize;
        let heat_full = sp.heat_multiplier(params.dt);
        let heat_half = sp.heat_multiplier(params.dt / 2.0);
        let grad_syms = (0..dim).map(|a| sp.gradient_symbol(a)).collect();
        let half_ktr = kernel.trace.values.iter().map(|&v| 0.5 * v).collect();
        LinearFlowStepper {
            kernel,
            sp,
            grid,
            params,
            stream,
            start_step,
            steps_done: 0,
            y_hat: vec![Complex64::default(); n_tot],
            grad_y: vec![vec![0.0; n_tot]; dim],
            y_phys: vec![0.0; n_tot],
            y_dirty: false,
            columns: Vec::new(),
            heat_full,
            heat_half,
            grad_syms,
            half_ktr,
            cbuf: vec![Complex64::default(); n_tot],
            noise_buf: vec![Complex64::default(); n_tot],
            src: vec![0.0; n_tot],
            track_sup: false,
            sup: SupTrackers::default(),
            fast_constant: kernel.is_spatially_constant(),
        }
    }

    pub fn enable_sup_tracking(&mut self) {
        self.track_sup = true;
    }

    pub fn sup_trackers(&self) -> SupTrackers {
        self.sup
    }

    pub fn grid(&self) -> GridDescriptor {
        self.grid
    }

    /// Elapsed time since the stepper's own start.
    pub fn elapsed(&self) -> f64 {
        self.steps_done as f64 * self.params.dt
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    /// Attach a Φ̄ column with initial condition `w0 ≥ 0`; returns its index.
    pub fn add_column(&mut self, w0: &[f64]) -> Result<usize> {
        if w0.len() != self.grid.total_points() {
            return Err(LabError::GridMismatch("column length mismatch".into()));
        }
        if !w0.iter().all(|v| v.is_finite()) {
            return Err(LabError::NonFiniteField);
        }
        if w0.iter().any(|&v| v < 0.0) {
            return Err(LabError::NotNonnegative);
        }
        let mass = self.grid.cell_volume() * w0.iter().sum::<f64>();
        let (phibar, log_mass) = if mass > 0.0 {
            (w0.iter().map(|&v| v / mass).collect(), mass.ln())
        } else {
            (vec![0.0; w0.len()], f64::NEG_INFINITY)
        };
        let log_phi_sup = w0.iter().fold(0.0f64, |m, &v| m.max(v)).ln();
        self.columns.push(Column { phibar, log_mass, log_phi_sup });
        Ok(self.columns.len() - 1)
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Advance one step of size dt.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self) {
        let n_tot = self.grid.total_points();
        let dt = self.params.dt;
        let abs_step = self.start_step + self.steps_done;

        // Spectral noise increment for this cell.
        self.kernel.sample_spectral_into(&self.stream, abs_step, dt, &mut self.noise_buf);

        // Y update: exact mild step Y -> P_dt(Y + γ dt + ΔW).
        self.y_hat[0] += Complex64::new(self.params.gamma * dt * n_tot as f64, 0.0);
        for i in 0..n_tot {
            self.y_hat[i] = (self.y_hat[i] + self.noise_buf[i]) * self.heat_full[i];
        }
        self.y_dirty = true;

        // Gradient of Y in physical space (identically zero for rank-1 noise).
        if !self.fast_constant {
            for axis in 0..self.grad_y.len() {
                let sym = &self.grad_syms[axis];
                for ((c, s), out) in
                    self.y_hat.iter().zip(sym.iter()).zip(self.cbuf.iter_mut())
                {
                    *out = Complex64::new(-c.im * s, c.re * s);
                }
                self.sp.inverse(&mut self.cbuf);
                Spectral::complex_to_real(&self.cbuf, &mut self.grad_y[axis]);
            }
        }

        if self.track_sup {
            self.refresh_y();
            let ysup = self.y_phys.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            self.sup.y_sup = self.sup.y_sup.max(ysup);
            if !self.fast_constant {
                let mut gmax = 0.0f64;
                for i in 0..n_tot {
                    let mut sq = 0.0;
                    for g in &self.grad_y {
                        sq += g[i] * g[i];
                    }
                    gmax = gmax.max(sq);
                }
                self.sup.grad_y_sq_sup = self.sup.grad_y_sq_sup.max(gmax);
            }
        }

        // Φ̄ columns.
        let cellvol = self.grid.cell_volume();
        for ci in 0..self.columns.len() {
            if self.columns[ci].log_mass == f64::NEG_INFINITY {
                continue;
            }
            if self.fast_constant {
                // ∇Y ≡ 0 and κ_tr constant: the two half-steps merge and the
                // exponential factor is a scalar.
                Spectral::real_to_complex(&self.columns[ci].phibar, &mut self.cbuf);
                self.sp.forward(&mut self.cbuf);
                for i in 0..n_tot {
                    self.cbuf[i] *= self.heat_full[i];
                }
                self.sp.inverse(&mut self.cbuf);
                let factor = (-dt * self.half_ktr[0]).exp();
                let col = &mut self.columns[ci];
                for i in 0..n_tot {
                    col.phibar[i] = self.cbuf[i].re * factor;
                }
            } else {
                // Half heat.
                Spectral::real_to_complex(&self.columns[ci].phibar, &mut self.cbuf);
                self.sp.forward(&mut self.cbuf);
                for i in 0..n_tot {
                    self.cbuf[i] *= self.heat_half[i];
                }
                self.sp.inverse(&mut self.cbuf);
                Spectral::complex_to_real(&self.cbuf, &mut self.src);
                // Semi-Lagrangian transport along 2∇Y, then the exact
                // exponential of the zeroth-order coefficient.
                let n = self.grid.points_per_axis;
                let col = &mut self.columns[ci];
                if self.grid.dim == 1 {
                    let grad = &self.grad_y[0];
                    for i in 0..n_tot {
                        let pos = i as f64 + 2.0 * grad[i] * dt * n as f64;
                        let f = pos.floor();
                        let theta = pos - f;
                        let j0 = (f.rem_euclid(n as f64)) as usize % n;
                        let j1 = (j0 + 1) % n;
                        let trans = (1.0 - theta) * self.src[j0] + theta * self.src[j1];
                        let coef = grad[i] * grad[i] - self.half_ktr[i];
                        col.phibar[i] = trans * (dt * coef).exp();
                    }
                } else {
                    let gr = &self.grad_y[0];
                    let gc = &self.grad_y[1];
                    for i in 0..n_tot {
                        let (r, c) = (i / n, i % n);
                        let pr = r as f64 + 2.0 * gr[i] * dt * n as f64;
                        let pc = c as f64 + 2.0 * gc[i] * dt * n as f64;
                        let fr = pr.floor();
                        let fc = pc.floor();
                        let (tr, tc) = (pr - fr, pc - fc);
                        let r0 = (fr.rem_euclid(n as f64)) as usize % n;
                        let c0 = (fc.rem_euclid(n as f64)) as usize % n;
                        let r1 = (r0 + 1) % n;
                        let c1 = (c0 + 1) % n;
                        let v00 = self.src[r0 * n + c0];
                        let v01 = self.src[r0 * n + c1];
                        let v10 = self.src[r1 * n + c0];
                        let v11 = self.src[r1 * n + c1];
                        let trans = (1.0 - tr) * ((1.0 - tc) * v00 + tc * v01)
                            + tr * ((1.0 - tc) * v10 + tc * v11);
                        let coef = gr[i] * gr[i] + gc[i] * gc[i] - self.half_ktr[i];
                        col.phibar[i] = trans * (dt * coef).exp();
                    }
                }
                // Second half heat.
                Spectral::real_to_complex(&self.columns[ci].phibar, &mut self.cbuf);
                self.sp.forward(&mut self.cbuf);
                for i in 0..n_tot {
                    self.cbuf[i] *= self.heat_half[i];
                }
                self.sp.inverse(&mut self.cbuf);
                let col = &mut self.columns[ci];
                for i in 0..n_tot {
                    col.phibar[i] = self.cbuf[i].re;
                }
            }
            // Renormalize and fold the dampening into the log mass.
            let col = &mut self.columns[ci];
            let mass = cellvol * col.phibar.iter().sum::<f64>();
            if mass > 0.0 && mass.is_finite() {
                let inv = 1.0 / mass;
                for v in col.phibar.iter_mut() {
                    *v *= inv;
                }
                col.log_mass += mass.ln();
            } else {
                col.log_mass = f64::NEG_INFINITY;
                for v in col.phibar.iter_mut() {
                    *v = 0.0;
                }
            }
            col.log_mass -= self.params.damping * dt;
        }

        self.steps_done += 1;

        if self.track_sup {
            for ci in 0..self.columns.len() {
                let (_, log_max) = self.log_phi_extremes(ci);
                let col = &mut self.columns[ci];
                col.log_phi_sup = col.log_phi_sup.max(log_max);
            }
        }
    }

    pub fn advance(&mut self, n_steps: u64) {
        for _ in 0..n_steps {
            self.step();
        }
    }

    fn refresh_y(&mut self) {
        if self.y_dirty {
            self.cbuf.copy_from_slice(&self.y_hat);
            self.sp.inverse(&mut self.cbuf);
            Spectral::complex_to_real(&self.cbuf, &mut self.y_phys);
            self.y_dirty = false;
        }
    }

    /// Physical Y (zero at the stepper's start time).
    pub fn y_field(&mut self) -> Field {
        self.refresh_y();
        Field { grid: self.grid, values: self.y_phys.clone() }
    }

    pub fn grad_y_fields(&mut self) -> Vec<Field> {
        if self.fast_constant {
            return vec![Field::constant(self.grid, 0.0); self.grid.dim as usize];
        }
        self.grad_y.iter().map(|g| Field { grid: self.grid, values: g.clone() }).collect()
    }

    /// log ∫ Φ for a column, overflow-safe.
    pub fn log_r(&mut self, col: usize) -> f64 {
        self.refresh_y();
        let c = &self.columns[col];
        if c.log_mass == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let m = self.y_phys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (y, p) in self.y_phys.iter().zip(c.phibar.iter()) {
            s += (y - m).exp() * p;
        }
        c.log_mass + m + (self.grid.cell_volume() * s).ln()
    }

    /// Write the projective point π = Φ/‖Φ‖_{L¹} of a column into `out`.
    pub fn pi_into(&mut self, col: usize, out: &mut [f64]) {
        self.refresh_y();
        let c = &self.columns[col];
        let m = self.y_phys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (i, (y, p)) in self.y_phys.iter().zip(c.phibar.iter()).enumerate() {
            out[i] = (y - m).exp() * p;
            s += out[i];
        }
        let inv = 1.0 / (s * self.grid.cell_volume());
        for v in out.iter_mut() {
            *v *= inv;
        }
    }

    /// (log min_x Φ, log max_x Φ) for a column. Nonpositive Φ̄ entries map the
    /// minimum to −∞.
    pub fn log_phi_extremes(&mut self, col: usize) -> (f64, f64) {
        self.refresh_y();
        let c = &self.columns[col];
        if c.log_mass == f64::NEG_INFINITY {
            return (f64::NEG_INFINITY, f64::NEG_INFINITY);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (y, p) in self.y_phys.iter().zip(c.phibar.iter()) {
            if *p > 0.0 {
                let l = y + p.ln();
                lo = lo.min(l);
                hi = hi.max(l);
            } else {
                lo = f64::NEG_INFINITY;
            }
        }
        if hi == f64::NEG_INFINITY {
            return (f64::NEG_INFINITY, f64::NEG_INFINITY);
        }
        (c.log_mass + lo, c.log_mass + hi)
    }

    /// Materialize Φ for a column in linear scale.
    pub fn phi_field(&mut self, col: usize) -> Result<Field> {
        self.refresh_y();
        let c = &self.columns[col];
        if c.log_mass == f64::NEG_INFINITY {
            return Ok(Field::constant(self.grid, 0.0));
        }
        let mut values = vec![0.0; self.grid.total_points()];
        for (i, (y, p)) in self.y_phys.iter().zip(c.phibar.iter()).enumerate() {
            let lg = c.log_mass + y;
            if lg > 700.0 {
                return Err(LabError::InvalidConfig(
                    "flow field overflows linear scale; use log-scale statistics".into(),
                ));
            }
            values[i] = lg.exp() * p;
        }
        Field::new(self.grid, values)
    }

    /// Tracked running maximum of log ‖Φ_t‖_∞ (requires sup tracking).
    pub fn log_phi_sup_tracked(&self, col: usize) -> f64 {
        self.columns[col].log_phi_sup
    }

    /// Quadratic functional Q(π) of a column's projective point.
    pub fn q_of_column(&mut self, col: usize, scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.grid.total_points(), 0.0);
        self.pi_into(col, scratch);
        self.kernel.q_functional_values(scratch)
    }
}

/// Additive-noise path Y with its gradients, stored per step.
///
/// Y_t = γt + ∫_0^t P_{t-s} dW_s solves dY = ΔY dt + γ dt + dW with Y_0 = 0.
#[derive(Clone, Debug)]
pub struct OUPath {
    pub grid: GridDescriptor,
    pub gamma: f64,
    pub dt: f64,
    pub stream: NoiseStream,
    pub start_step: u64,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub grad_fields: Vec<Vec<Field>>,
}

impl OUPath {
    pub fn n_steps(&self) -> u64 {
        (self.times.len() - 1) as u64
    }
}

/// Number of steps for a horizon, requiring dt to divide it.
pub fn steps_for(horizon: f64, dt: f64) -> Result<u64> {
    if dt <= 0.0 || horizon < 0.0 {
        return Err(LabError::InvalidConfig(format!("bad horizon {horizon} or dt {dt}")));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(LabError::InvalidConfig(format!("dt {dt} does not divide horizon {horizon}")));
    }
    Ok(n as u64)
}

/// Solve for Y on [0, horizon] with the exponential-Euler update
/// Y_{n+1} = P_dt(Y_n + γ dt) + P_dt(ΔW_n).
pub fn solve_y(
    kernel: &CorrelationKernel,
    gamma: f64,
    horizon: f64,
    dt: f64,
    stream: NoiseStream,
) -> Result<OUPath> {
    let n_steps = steps_for(horizon, dt)?;
    let mut stepper =
        LinearFlowStepper::new(kernel, stream, FlowParams { gamma, damping: 0.0, dt }, 0);
    let mut times = Vec::with_capacity(n_steps as usize + 1);
    let mut fields = Vec::with_capacity(n_steps as usize + 1);
    let mut grad_fields = Vec::with_capacity(n_steps as usize + 1);
    times.push(0.0);
    fields.push(Field::constant(kernel.grid, 0.0));
    grad_fields.push(vec![Field::constant(kernel.grid, 0.0); kernel.grid.dim as usize]);
    for n in 1..=n_steps {
        stepper.step();
        times.push(n as f64 * dt);
        fields.push(stepper.y_field());
        grad_fields.push(stepper.grad_y_fields());
    }
    Ok(OUPath {
        grid: kernel.grid,
        gamma,
        dt,
        stream,
        start_step: 0,
        times,
        fields,
        grad_fields,
    })
}

/// Time series of the linear flow applied to `w0`.
#[derive(Clone, Debug)]
pub struct LinearTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
}

/// Evolve Φ_{0,t}[w0] (or Ξ when `damping` > 0) along the noise of `ou`,
/// storing the field at every step of the path.
pub fn evolve_linear(
    w0: &Field,
    ou: &OUPath,
    kernel: &CorrelationKernel,
    damping: f64,
) -> Result<LinearTrajectory> {
    if ou.grid != kernel.grid || w0.grid != kernel.grid {
        return Err(LabError::GridMismatch("w0, path and kernel must share the grid".into()));
    }
    let mut stepper = LinearFlowStepper::new(
        kernel,
        ou.stream,
        FlowParams { gamma: ou.gamma, damping, dt: ou.dt },
        ou.start_step,
    );
    let col = stepper.add_column(&w0.values)?;
    let mut fields = Vec::with_capacity(ou.times.len());
    fields.push(w0.clone());
    for _ in 0..ou.n_steps() {
        stepper.step();
        fields.push(stepper.phi_field(col)?);
    }
    Ok(LinearTrajectory { times: ou.times.clone(), fields })
}

/// Integral kernel K_{s,t}(x, y) of the flow, scaled so that
/// Φ[w](x_i) = cell_volume · Σ_j K(x_i, y_j) w(y_j).
#[derive(Clone, Debug)]
pub struct FlowKernel {
    pub grid: GridDescriptor,
    /// Row-major: entry (i, j) = K(x_i, y_j).
    pub matrix: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

impl FlowKernel {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.grid.total_points() + j]
    }
}

/// Statistics of a strictly positive flow kernel.
#[derive(Clone, Copy, Debug)]
pub struct KernelStats {
    /// c_K = min_x ∫ K(x, y) dy.
    pub c_k: f64,
    pub min_entry: f64,
    pub max_entry: f64,
    /// Projective diameter: max over pairs of the log cross-ratio.
    pub birkhoff_diameter: f64,
    /// Birkhoff contraction factor tanh(diameter / 4).
    pub contraction_factor: f64,
}

/// Compute the flow kernel over [s, t] ⊆ the path's range by evolving the
/// normalized grid bump at every y_j.
pub fn compute_kernel_k(
    ou: &OUPath,
    kernel: &CorrelationKernel,
    s: f64,
    t: f64,
    damping: f64,
) -> Result<FlowKernel> {
    if ou.grid != kernel.grid {
        return Err(LabError::GridMismatch("path and kernel must share the grid".into()));
    }
    let dt = ou.dt;
    let is = steps_for(s, dt)?;
    let it = steps_for(t, dt)?;
    if is >= it || it > ou.n_steps() {
        return Err(LabError::InvalidConfig(format!(
            "kernel window [{s}, {t}] not inside the path range"
        )));
    }
    let mut stepper = LinearFlowStepper::new(
        kernel,
        ou.stream,
        FlowParams { gamma: ou.gamma, damping, dt },
        ou.start_step + is,
    );
    let n_tot = kernel.grid.total_points();
    let height = 1.0 / kernel.grid.cell_volume();
    let mut bump = vec![0.0; n_tot];
    for j in 0..n_tot {
        bump[j] = height;
        stepper.add_column(&bump)?;
        bump[j] = 0.0;
    }
    stepper.advance(it - is);
    let mut matrix = vec![0.0; n_tot * n_tot];
    for j in 0..n_tot {
        let field = stepper.phi_field(j)?;
        for i in 0..n_tot {
            matrix[i * n_tot + j] = field.values[i];
        }
    }
    for i in 0..n_tot {
        for j in 0..n_tot {
            let v = matrix[i * n_tot + j];
            if v.is_nan() || v <= 0.0 || v.is_infinite() {
                return Err(LabError::KernelPositivityViolated { row: i, col: j, value: v });
            }
        }
    }
    Ok(FlowKernel { grid: kernel.grid, matrix, s, t })
}

/// Row sums, minima, maxima and the Birkhoff projective diameter
/// max_{y,y'} [ max_x log(K(x,y)/K(x,y')) + max_x log(K(x,y')/K(x,y)) ].
pub fn kernel_stats(k: &FlowKernel) -> KernelStats {
    let n = k.grid.total_points();
    let cellvol = k.grid.cell_volume();
    let mut c_k = f64::INFINITY;
    let mut min_entry = f64::INFINITY;
    let mut max_entry = f64::NEG_INFINITY;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let v = k.matrix[i * n + j];
            row += v;
            min_entry = min_entry.min(v);
            max_entry = max_entry.max(v);
        }
        c_k = c_k.min(row * cellvol);
    }
    // D(j, j') = max_x [log K(x, j) - log K(x, j')], computed row by row on
    // the log matrix.
    let logk: Vec<f64> = k.matrix.iter().map(|v| v.ln()).collect();
    let mut d = vec![f64::NEG_INFINITY; n * n];
    for x in 0..n {
        let row = &logk[x * n..(x + 1) * n];
        for j in 0..n {
            let lj = row[j];
            let drow = &mut d[j * n..(j + 1) * n];
            for (jp, dv) in drow.iter_mut().enumerate() {
                let cand = lj - row[jp];
                if cand > *dv {
                    *dv = cand;
                }
            }
        }
    }
    let mut diameter = 0.0f64;
    for j in 0..n {
        for jp in (j + 1)..n {
            let val = d[j * n + jp] + d[jp * n + j];
            if val > diameter {
                diameter = val;
            }
        }
    }
    KernelStats {
        c_k,
        min_entry,
        max_entry,
        birkhoff_diameter: diameter,
        contraction_factor: (diameter / 4.0).tanh(),
    }
}

/// Analytic periodic heat kernel p_t(x - y) by image summation.
pub fn periodic_heat_kernel(grid: GridDescriptor, t: f64, images: i32) -> FlowKernel {
    let n_tot = grid.total_points();
    let n = grid.points_per_axis;
    let one_d = |dx: f64| -> f64 {
        let mut acc = 0.0;
        for j in -images..=images {
            let d = dx + j as f64;
            acc += (-d * d / (4.0 * t)).exp();
        }
        acc / (4.0 * std::f64::consts::PI * t).sqrt()
    };
    let mut matrix = vec![0.0; n_tot * n_tot];
    for i in 0..n_tot {
        for j in 0..n_tot {
            matrix[i * n_tot + j] = if grid.dim == 1 {
                one_d(grid.coord(i) - grid.coord(j))
            } else {
                one_d(grid.coord(i / n) - grid.coord(j / n))
                    * one_d(grid.coord(i % n) - grid.coord(j % n))
            };
        }
    }
    FlowKernel { grid, matrix, s: 0.0, t }
}
