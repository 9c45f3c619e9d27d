//! The Gaussian driving field W: white in time, spatially correlated by a
//! kernel κ(x, y) on T^d.
//!
//! A `CorrelationKernel` carries the grid-evaluated matrix κ(x_i, x_j), a
//! factorization L with L·Lᵀ = κ used for exact sampling, the trace field
//! κ_tr(x) = κ(x, x) and the sup norm ‖κ‖_∞. Translation-invariant presets
//! factor through the circulant spectrum (exact on the torus grid); user
//! matrices go through a dense Cholesky after a PSD check with a bounded
//! jitter ladder.
//!
//! Increment sampling returns L·ξ·√dt with ξ i.i.d. standard normal drawn
//! from a counter-based stream, so a (stream, step) cell is reproducible in
//! isolation.

use crate::error::LabError;
use crate::grid::{Field, GridDescriptor};
use crate::rng::NoiseStream;
use crate::spectral::Spectral;
use crate::Result;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Kernel presets and escape hatch for explicit matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// κ(x, y) = σ̄² (space-independent noise; rank-1 kernel).
    Constant { variance: f64 },
    /// Wrapped Gaussian bump of the periodic distance, normalized so that
    /// κ(x, x) = variance.
    GaussianPeriodic {
        length_scale: f64,
        #[serde(default = "default_variance")]
        variance: f64,
    },
    /// Explicit symmetric PSD matrix (row-major, total_points²).
    Matrix { values: Vec<f64> },
}

fn default_variance() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn constant(variance: f64) -> Self {
        KernelSpec::Constant { variance }
    }

    pub fn gaussian_periodic(length_scale: f64) -> Self {
        KernelSpec::GaussianPeriodic { length_scale, variance: 1.0 }
    }
}

#[derive(Clone, Debug)]
enum Factor {
    /// Circulant factor: sampling is F⁻¹ diag(sqrt_eigs) F applied to white
    /// noise (eigenvalues of the covariance circulant, clamped at zero).
    Circulant { sqrt_eigs: Vec<f64> },
    /// Dense lower-triangular Cholesky factor.
    Dense { l: Vec<f64> },
}

/// Grid-evaluated spatial correlation kernel with factorization.
///
/// For translation-invariant kernels the matrix is circulant and is stored
/// through its first row; the dense matrix is materialized only on grids
/// small enough for that to be cheap (entries are always available through
/// [`CorrelationKernel::kappa_at`]).
#[derive(Clone, Debug)]
pub struct CorrelationKernel {
    pub grid: GridDescriptor,
    /// κ_tr(x) = κ(x, x).
    pub trace: Field,
    /// ‖κ‖_∞ = max |κ(x, y)|.
    pub sup_norm: f64,
    /// Jitter added to the diagonal (multiple of identity) to factorize.
    pub jitter: f64,
    factor: Factor,
    /// First row of the circulant matrix, when translation invariant.
    row: Option<Vec<f64>>,
    /// Dense κ(x_i, x_j), row-major; present for user matrices and small grids.
    kappa_dense: Option<Vec<f64>>,
    /// Circulant eigenvalues when the kernel is translation invariant.
    circulant_eigs: Option<Vec<f64>>,
    spatially_constant: bool,
}

/// Grids up to this many points materialize the dense circulant matrix.
const DENSE_KAPPA_LIMIT: usize = 1024;

/// One sampled noise increment ΔW with covariance κ·dt.
#[derive(Clone, Debug)]
pub struct NoiseIncrement {
    pub values: Field,
    pub dt: f64,
    pub stream: NoiseStream,
    pub step: u64,
}

/// Evaluate a translation-invariant kernel profile on the grid: first row of
/// the circulant, indexed by the lattice offset.
fn profile_row(grid: GridDescriptor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = grid.points_per_axis;
    (0..grid.total_points())
        .map(|idx| {
            if grid.dim == 1 {
                f(grid.coord(idx), 0.0)
            } else {
                f(grid.coord(idx / n), grid.coord(idx % n))
            }
        })
        .collect()
}

/// Wrapped Gaussian of the periodic distance, with enough images to reach
/// machine precision.
fn wrapped_gaussian(r: f64, ell: f64) -> f64 {
    let mut acc = 0.0;
    for j in -6i32..=6 {
        let d = r + j as f64;
        acc += (-d * d / (2.0 * ell * ell)).exp();
    }
    acc
}

/// Build a correlation kernel from a spec on a grid.
pub fn build_kernel(spec: &KernelSpec, grid: GridDescriptor) -> Result<CorrelationKernel> {
    let n_tot = grid.total_points();
    match spec {
        KernelSpec::Constant { variance } => {
            if *variance < 0.0 {
                return Err(LabError::KernelNotPsd(format!("negative variance {variance}")));
            }
            let row = vec![*variance; n_tot];
            build_circulant(grid, row, true)
        }
        KernelSpec::GaussianPeriodic { length_scale, variance } => {
            if *length_scale <= 0.0 || *variance < 0.0 {
                return Err(LabError::KernelNotPsd(format!(
                    "invalid gaussian-periodic parameters (ell = {length_scale}, variance = {variance})"
                )));
            }
            let ell = *length_scale;
            let peak = if grid.dim == 1 {
                wrapped_gaussian(0.0, ell)
            } else {
                wrapped_gaussian(0.0, ell) * wrapped_gaussian(0.0, ell)
            };
            let scale = variance / peak;
            let row = profile_row(grid, |dx, dy| {
                let g = if grid.dim == 1 {
                    wrapped_gaussian(dx.min(1.0 - dx), ell)
                } else {
                    wrapped_gaussian(dx.min(1.0 - dx), ell) * wrapped_gaussian(dy.min(1.0 - dy), ell)
                };
                scale * g
            });
            build_circulant(grid, row, false)
        }
        KernelSpec::Matrix { values } => build_dense(grid, values.clone()),
    }
}

fn circulant_offset(grid: GridDescriptor, i: usize, j: usize) -> usize {
    let n = grid.points_per_axis;
    if grid.dim == 1 {
        (i + n - j % n + n) % n
    } else {
        let (ri, ci) = (i / n, i % n);
        let (rj, cj) = (j / n, j % n);
        ((ri + n - rj) % n) * n + ((ci + n - cj) % n)
    }
}

fn build_circulant(
    grid: GridDescriptor,
    row: Vec<f64>,
    spatially_constant: bool,
) -> Result<CorrelationKernel> {
    let n_tot = grid.total_points();
    let sp = Spectral::for_grid(grid);
    let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    sp.forward(&mut buf);
    let eigs: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let max_eig = eigs.iter().cloned().fold(0.0, f64::max);
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-6 * max_eig.max(1e-300) {
        return Err(LabError::KernelNotPsd(format!(
            "most negative circulant eigenvalue {min_eig:e} below tolerance (max {max_eig:e})"
        )));
    }
    let sqrt_eigs: Vec<f64> = eigs.iter().map(|&e| e.max(0.0).sqrt()).collect();
    let kappa_dense = if n_tot <= DENSE_KAPPA_LIMIT {
        let mut kappa = vec![0.0; n_tot * n_tot];
        for i in 0..n_tot {
            for j in 0..n_tot {
                kappa[i * n_tot + j] = row[circulant_offset(grid, i, j)];
            }
        }
        Some(kappa)
    } else {
        None
    };
    let trace = Field::new(grid, vec![row[0]; n_tot])?;
    let sup_norm = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(CorrelationKernel {
        grid,
        trace,
        sup_norm,
        jitter: 0.0,
        factor: Factor::Circulant { sqrt_eigs },
        row: Some(row),
        kappa_dense,
        circulant_eigs: Some(eigs),
        spatially_constant,
    })
}

fn build_dense(grid: GridDescriptor, kappa: Vec<f64>) -> Result<CorrelationKernel> {
    let n_tot = grid.total_points();
    if kappa.len() != n_tot * n_tot {
        return Err(LabError::InvalidConfig(format!(
            "kernel matrix has {} entries, expected {}",
            kappa.len(),
            n_tot * n_tot
        )));
    }
    if n_tot > 1024 {
        return Err(LabError::InvalidConfig(format!(
            "dense user kernels limited to 1024 grid points, got {n_tot}"
        )));
    }
    let mut max_abs = 0.0f64;
    let mut max_asym = 0.0f64;
    for i in 0..n_tot {
        for j in 0..n_tot {
            max_abs = max_abs.max(kappa[i * n_tot + j].abs());
            max_asym = max_asym.max((kappa[i * n_tot + j] - kappa[j * n_tot + i]).abs());
        }
    }
    if max_asym > 1e-12 * max_abs.max(1e-300) {
        return Err(LabError::KernelNotPsd(format!(
            "matrix not symmetric (max asymmetry {max_asym:e})"
        )));
    }
    let eigs = jacobi_eigenvalues(&kappa, n_tot);
    let max_eig = eigs.iter().cloned().fold(0.0, f64::max);
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-6 * max_eig.max(1e-300) {
        return Err(LabError::KernelNotPsd(format!(
            "most negative eigenvalue {min_eig:e} below tolerance (max {max_eig:e})"
        )));
    }
    let mut jitter = 0.0;
    let mut l = None;
    for &mult in &[0.0, 1e-14, 1e-12, 1e-10] {
        let j = mult * max_eig;
        if let Some(chol) = cholesky(&kappa, n_tot, j) {
            jitter = j;
            l = Some(chol);
            break;
        }
    }
    let l = l.ok_or_else(|| {
        LabError::KernelNotPsd("factorization failed after jitter ladder".into())
    })?;
    let trace_vals: Vec<f64> = (0..n_tot).map(|i| kappa[i * n_tot + i]).collect();
    let trace = Field::new(grid, trace_vals)?;
    Ok(CorrelationKernel {
        grid,
        trace,
        sup_norm: max_abs,
        jitter,
        factor: Factor::Dense { l },
        row: None,
        kappa_dense: Some(kappa),
        circulant_eigs: None,
        spatially_constant: false,
    })
}

/// Cholesky of A + jitter·I; returns None on a non-positive pivot.
fn cholesky(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            if i == j {
                sum += jitter;
            }
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..30 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.iter().fold(0.0f64, |s, v| s.max(v.abs()))) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

impl CorrelationKernel {
    /// Whether sampled increments are spatially constant (rank-1 kernel).
    pub fn is_spatially_constant(&self) -> bool {
        self.spatially_constant
    }

    /// Circulant eigenvalues, when translation invariant.
    pub fn circulant_eigs(&self) -> Option<&[f64]> {
        self.circulant_eigs.as_deref()
    }

    /// Dense matrix, when materialized.
    pub fn dense_kappa(&self) -> Option<&[f64]> {
        self.kappa_dense.as_deref()
    }

    /// κ(x_i, x_j) by flat indices.
    #[inline]
    pub fn kappa_at(&self, i: usize, j: usize) -> f64 {
        if let Some(dense) = &self.kappa_dense {
            dense[i * self.grid.total_points() + j]
        } else {
            let row = self.row.as_ref().expect("kernel has neither dense matrix nor row");
            row[circulant_offset(self.grid, i, j)]
        }
    }

    /// Sample ΔW for one step: L·ξ·√dt, written into `out`.
    pub fn sample_into(&self, stream: &NoiseStream, step: u64, dt: f64, out: &mut [f64]) {
        let n_tot = self.grid.total_points();
        debug_assert_eq!(out.len(), n_tot);
        let sqrt_dt = dt.sqrt();
        match &self.factor {
            Factor::Circulant { sqrt_eigs } => {
                let mut rng = stream.at_step(step);
                if self.spatially_constant {
                    // Only the DC eigenvalue is nonzero; the increment is the
                    // broadcast scalar (sqrt_eigs[0]/n) Σξ √dt.
                    let mut sum = 0.0;
                    for _ in 0..n_tot {
                        sum += rng.normal();
                    }
                    let v = sqrt_eigs[0] / n_tot as f64 * sum * sqrt_dt;
                    out.fill(v);
                    return;
                }
                let sp = Spectral::for_grid(self.grid);
                let mut buf: Vec<Complex64> =
                    (0..n_tot).map(|_| Complex64::new(rng.normal(), 0.0)).collect();
                sp.forward(&mut buf);
                for (v, &se) in buf.iter_mut().zip(sqrt_eigs.iter()) {
                    *v *= se;
                }
                sp.inverse(&mut buf);
                for (o, c) in out.iter_mut().zip(buf.iter()) {
                    *o = c.re * sqrt_dt;
                }
            }
            Factor::Dense { l } => {
                let mut rng = stream.at_step(step);
                let xi: Vec<f64> = (0..n_tot).map(|_| rng.normal()).collect();
                for i in 0..n_tot {
                    let mut acc = 0.0;
                    for k in 0..=i {
                        acc += l[i * n_tot + k] * xi[k];
                    }
                    out[i] = acc * sqrt_dt;
                }
            }
        }
    }

    /// Sample ΔW directly in spectral form (unnormalized DFT coefficients of
    /// the physical increment). For circulant kernels this is one forward
    /// FFT; dense kernels sample in physical space and transform.
    pub fn sample_spectral_into(
        &self,
        stream: &NoiseStream,
        step: u64,
        dt: f64,
        out: &mut [Complex64],
    ) {
        let n_tot = self.grid.total_points();
        debug_assert_eq!(out.len(), n_tot);
        let sp = Spectral::for_grid(self.grid);
        let sqrt_dt = dt.sqrt();
        match &self.factor {
            Factor::Circulant { sqrt_eigs } => {
                let mut rng = stream.at_step(step);
                if self.spatially_constant {
                    let mut sum = 0.0;
                    for _ in 0..n_tot {
                        sum += rng.normal();
                    }
                    out.fill(Complex64::default());
                    out[0] = Complex64::new(sqrt_eigs[0] * sum * sqrt_dt, 0.0);
                    return;
                }
                for v in out.iter_mut() {
                    *v = Complex64::new(rng.normal(), 0.0);
                }
                sp.forward(out);
                for (v, &se) in out.iter_mut().zip(sqrt_eigs.iter()) {
                    *v *= se * sqrt_dt;
                }
            }
            Factor::Dense { .. } => {
                let mut phys = vec![0.0; n_tot];
                self.sample_into(stream, step, dt, &mut phys);
                for (v, &p) in out.iter_mut().zip(phys.iter()) {
                    *v = Complex64::new(p, 0.0);
                }
                sp.forward(out);
            }
        }
    }

    /// Q(π) = ∫∫ π(x) π(y) κ(x, y) dx dy for grid values of π, evaluated as
    /// cell_volume² · πᵀ κ π. Translation-invariant kernels evaluate the
    /// quadratic form through the circulant spectrum (one FFT); dense kernels
    /// use the double sum.
    pub fn q_functional_values(&self, pi: &[f64]) -> f64 {
        let n_tot = self.grid.total_points();
        debug_assert_eq!(pi.len(), n_tot);
        let cellvol = self.grid.cell_volume();
        if let Some(eigs) = &self.circulant_eigs {
            let sp = Spectral::for_grid(self.grid);
            let mut buf: Vec<Complex64> = pi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            sp.forward(&mut buf);
            let mut acc = 0.0;
            for (c, &e) in buf.iter().zip(eigs.iter()) {
                acc += e * c.norm_sqr();
            }
            cellvol * cellvol * acc / n_tot as f64
        } else {
            let dense = self.kappa_dense.as_ref().expect("dense kernel matrix");
            let mut acc = 0.0;
            for i in 0..n_tot {
                let row = &dense[i * n_tot..(i + 1) * n_tot];
                let mut inner = 0.0;
                for (k, &pj) in row.iter().zip(pi.iter()) {
                    inner += k * pj;
                }
                acc += pi[i] * inner;
            }
            cellvol * cellvol * acc
        }
    }

    /// Kernel convolution (κ ∗ v)(x) = ∫ κ(x, y) v(y) dy on grid values.
    pub fn kappa_conv(&self, values: &[f64], out: &mut Vec<f64>) {
        let n_tot = self.grid.total_points();
        debug_assert_eq!(values.len(), n_tot);
        out.resize(n_tot, 0.0);
        let cellvol = self.grid.cell_volume();
        if let Some(eigs) = &self.circulant_eigs {
            let sp = Spectral::for_grid(self.grid);
            let mut buf: Vec<Complex64> =
                values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            sp.forward(&mut buf);
            for (c, &e) in buf.iter_mut().zip(eigs.iter()) {
                *c *= e;
            }
            sp.inverse(&mut buf);
            for (o, c) in out.iter_mut().zip(buf.iter()) {
                *o = c.re * cellvol;
            }
        } else {
            let dense = self.kappa_dense.as_ref().expect("dense kernel matrix");
            for i in 0..n_tot {
                let row = &dense[i * n_tot..(i + 1) * n_tot];
                let mut acc = 0.0;
                for (k, &v) in row.iter().zip(values.iter()) {
                    acc += k * v;
                }
                out[i] = acc * cellvol;
            }
        }
    }

    /// Sample one increment as an owned `NoiseIncrement`.
    pub fn sample_increment(
        &self,
        stream: &NoiseStream,
        step: u64,
        dt: f64,
    ) -> Result<NoiseIncrement> {
        if dt <= 0.0 {
            return Err(LabError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let mut values = vec![0.0; self.grid.total_points()];
        self.sample_into(stream, step, dt, &mut values);
        Ok(NoiseIncrement {
            values: Field::new(self.grid, values)?,
            dt,
            stream: *stream,
            step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_kernel_is_rank_one() {
        let g = GridDescriptor::d1(32);
        let k = build_kernel(&KernelSpec::constant(1.0), g).unwrap();
        assert!(k.is_spatially_constant());
        assert_eq!(k.sup_norm, 1.0);
        let s = NoiseStream::new(1, 0);
        let inc = k.sample_increment(&s, 5, 0.01).unwrap();
        let first = inc.values.values[0];
        for v in &inc.values.values {
            assert!((v - first).abs() < 1e-12, "not spatially constant");
        }
    }

    #[test]
    fn determinism_per_cell() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let s = NoiseStream::new(9, 2);
        let a = k.sample_increment(&s, 7, 0.001).unwrap();
        let b = k.sample_increment(&s, 7, 0.001).unwrap();
        assert_eq!(a.values.values, b.values.values);
    }

    #[test]
    fn gaussian_periodic_psd_and_trace() {
        let g = GridDescriptor::d1(128);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let eigs = k.circulant_eigs().unwrap();
        let max = eigs.iter().cloned().fold(0.0, f64::max);
        for &e in eigs {
            assert!(e >= -1e-10 * max, "eig {e}");
        }
        for (i, &tv) in k.trace.values.iter().enumerate() {
            assert_eq!(tv, k.kappa_at(i, i));
            assert!((tv - 1.0).abs() < 1e-12, "peak normalized to variance");
        }
        assert!(k.sup_norm >= k.trace.max());
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let g = GridDescriptor::d1(8);
        let n = g.total_points();
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            vals[i * n + i] = 1.0;
        }
        vals[3] += 1e-3;
        match build_kernel(&KernelSpec::Matrix { values: vals }, g) {
            Err(LabError::KernelNotPsd(_)) => {}
            other => panic!("expected kernel not PSD, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let g = GridDescriptor::d1(8);
        let n = g.total_points();
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            vals[i * n + i] = 1.0;
        }
        // Large symmetric off-diagonal block makes it indefinite.
        vals[1] = 2.0;
        vals[n] = 2.0;
        match build_kernel(&KernelSpec::Matrix { values: vals }, g) {
            Err(LabError::KernelNotPsd(_)) => {}
            other => panic!("expected kernel not PSD, got {other:?}"),
        }
    }

    #[test]
    fn dense_route_matches_circulant_covariance() {
        // Same wrapped-Gaussian kernel through the dense Cholesky and the
        // circulant factor must produce matching covariances.
        let g = GridDescriptor::d1(16);
        let circ = build_kernel(&KernelSpec::gaussian_periodic(0.3), g).unwrap();
        let dense = build_dense(g, circ.dense_kappa().unwrap().to_vec()).unwrap();
        let n = g.total_points();
        let dt = 0.5;
        let m = 60_000usize;
        let mut cov_c = 0.0;
        let mut cov_d = 0.0;
        let sc = NoiseStream::new(11, 0);
        let sd = NoiseStream::new(11, 1);
        let mut buf = vec![0.0; n];
        for step in 0..m as u64 {
            circ.sample_into(&sc, step, dt, &mut buf);
            cov_c += buf[0] * buf[n / 2];
            dense.sample_into(&sd, step, dt, &mut buf);
            cov_d += buf[0] * buf[n / 2];
        }
        cov_c /= m as f64;
        cov_d /= m as f64;
        let target = circ.kappa_at(0, n / 2) * dt;
        let se = 3.0 * dt / (m as f64).sqrt() * 3.0;
        assert!((cov_c - target).abs() < se, "circulant cov {cov_c} vs {target}");
        assert!((cov_d - target).abs() < se, "dense cov {cov_d} vs {target}");
    }

    #[test]
    fn empirical_covariance_matches_kappa() {
        let g = GridDescriptor::d1(64);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let n = g.total_points();
        let dt = 0.1;
        let m = 100_000usize;
        let s = NoiseStream::new(3, 0);
        let mut buf = vec![0.0; n];
        let (mut cov, mut mean0) = (0.0, 0.0);
        for step in 0..m as u64 {
            k.sample_into(&s, step, dt, &mut buf);
            cov += buf[0] * buf[n / 2];
            mean0 += buf[0];
        }
        cov /= m as f64;
        mean0 /= m as f64;
        let target = k.kappa_at(0, n / 2) * dt;
        // SE of a product of near-independent gaussians ~ kappa(0,0)*dt/sqrt(M).
        let se = k.kappa_at(0, 0) * dt / (m as f64).sqrt();
        assert!((cov - target).abs() < 3.0 * se, "cov {cov} target {target} se {se}");
        assert!(mean0.abs() < 4.0 * (k.kappa_at(0, 0) * dt / m as f64).sqrt());
    }

    #[test]
    fn increment_means_and_cross_streams() {
        let g = GridDescriptor::d1(16);
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        let n = g.total_points();
        let dt = 0.01;
        let m = 100_000usize;
        let a = NoiseStream::new(6, 0);
        let b = NoiseStream::new(6, 1);
        let mut means = vec![0.0; n];
        let mut buf_a = vec![0.0; n];
        let mut buf_b = vec![0.0; n];
        let mut cross = 0.0;
        let mut var_a = 0.0;
        for step in 0..m as u64 {
            k.sample_into(&a, step, dt, &mut buf_a);
            k.sample_into(&b, step, dt, &mut buf_b);
            for (mu, v) in means.iter_mut().zip(buf_a.iter()) {
                *mu += v;
            }
            cross += buf_a[0] * buf_b[0];
            var_a += buf_a[0] * buf_a[0];
        }
        let bound = 4.0 / (m as f64).sqrt() * (k.kappa_at(0, 0) * dt).sqrt();
        for mu in &means {
            assert!((mu / m as f64).abs() < bound, "mean {} vs {bound}", mu / m as f64);
        }
        let rho = cross / var_a;
        assert!(rho.abs() <= 4.0 / (m as f64).sqrt(), "cross-stream correlation {rho}");
    }

    #[test]
    fn two_d_kernel_builds() {
        let g = GridDescriptor::new(2, 16).unwrap();
        let k = build_kernel(&KernelSpec::gaussian_periodic(0.25), g).unwrap();
        assert_eq!(k.trace.values.len(), 256);
        let s = NoiseStream::new(4, 0);
        let inc = k.sample_increment(&s, 0, 0.01).unwrap();
        assert!(inc.values.is_finite());
    }
}
