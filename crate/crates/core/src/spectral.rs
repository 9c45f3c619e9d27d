//! FFT machinery shared by the solvers.
//!
//! Fields live on the unit torus, so mode k of a real field carries the
//! Laplacian symbol −4π²|k|² and the gradient symbol 2πik. Plans are cached
//! per grid; scratch buffers are thread-local so the hot solver loops do not
//! allocate.

use crate::grid::GridDescriptor;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn plan_cache() -> &'static Mutex<HashMap<usize, Arc<Plans>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

thread_local! {
    static SCRATCH: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
    static TRANSPOSE: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
    static ONESHOT: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
}

/// Spectral transform handle for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: GridDescriptor,
    plans: Arc<Plans>,
}

impl Spectral {
    pub fn for_grid(grid: GridDescriptor) -> Self {
        let n = grid.points_per_axis;
        let plans = {
            let mut cache = plan_cache().lock().expect("plan cache poisoned");
            cache
                .entry(n)
                .or_insert_with(|| {
                    let mut planner = FftPlanner::new();
                    Arc::new(Plans {
                        fwd: planner.plan_fft(n, FftDirection::Forward),
                        inv: planner.plan_fft(n, FftDirection::Inverse),
                    })
                })
                .clone()
        };
        Spectral { grid, plans }
    }

    pub fn grid(&self) -> GridDescriptor {
        self.grid
    }

    fn run_rows(&self, buf: &mut [Complex64], dir: FftDirection) {
        let plan = match dir {
            FftDirection::Forward => &self.plans.fwd,
            FftDirection::Inverse => &self.plans.inv,
        };
        SCRATCH.with(|s| {
            let mut scratch = s.borrow_mut();
            let need = plan.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::default());
            }
            plan.process_with_scratch(buf, &mut scratch[..need]);
        });
    }

    fn transpose(&self, buf: &mut [Complex64]) {
        let n = self.grid.points_per_axis;
        TRANSPOSE.with(|t| {
            let mut tmp = t.borrow_mut();
            tmp.resize(buf.len(), Complex64::default());
            for i in 0..n {
                for j in 0..n {
                    tmp[j * n + i] = buf[i * n + j];
                }
            }
            buf.copy_from_slice(&tmp);
        });
    }

    fn run(&self, buf: &mut [Complex64], dir: FftDirection) {
        match self.grid.dim {
            1 => self.run_rows(buf, dir),
            _ => {
                self.run_rows(buf, dir);
                self.transpose(buf);
                self.run_rows(buf, dir);
                self.transpose(buf);
            }
        }
    }

    /// In-place forward DFT (unnormalized).
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, FftDirection::Forward);
    }

    /// In-place inverse DFT, normalized by 1/total_points.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, FftDirection::Inverse);
        let scale = 1.0 / self.grid.total_points() as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Signed wavenumber for frequency index `j` (Nyquist mapped to +n/2).
    #[inline]
    pub fn wavenumber(&self, j: usize) -> f64 {
        let n = self.grid.points_per_axis;
        if j <= n / 2 {
            j as f64
        } else {
            j as f64 - n as f64
        }
    }

    /// |k|² for the flat spectral index.
    #[inline]
    pub fn ksq(&self, idx: usize) -> f64 {
        let n = self.grid.points_per_axis;
        if self.grid.dim == 1 {
            let k = self.wavenumber(idx);
            k * k
        } else {
            let k1 = self.wavenumber(idx / n);
            let k2 = self.wavenumber(idx % n);
            k1 * k1 + k2 * k2
        }
    }

    /// Heat multiplier exp(−4π²|k|² t) per flat spectral index.
    pub fn heat_multiplier(&self, t: f64) -> Vec<f64> {
        let c = -4.0 * std::f64::consts::PI.powi(2) * t;
        (0..self.grid.total_points()).map(|idx| (c * self.ksq(idx)).exp()).collect()
    }

    /// Gradient symbol 2πk along `axis` per flat spectral index, with the
    /// (real-field asymmetric) Nyquist mode dropped.
    pub fn gradient_symbol(&self, axis: usize) -> Vec<f64> {
        let n = self.grid.points_per_axis;
        let two_pi = 2.0 * std::f64::consts::PI;
        (0..self.grid.total_points())
            .map(|idx| {
                let j = if self.grid.dim == 1 {
                    idx
                } else if axis == 0 {
                    idx / n
                } else {
                    idx % n
                };
                if j == n / 2 {
                    0.0
                } else {
                    two_pi * self.wavenumber(j)
                }
            })
            .collect()
    }

    pub fn real_to_complex(real: &[f64], buf: &mut Vec<Complex64>) {
        buf.clear();
        buf.extend(real.iter().map(|&v| Complex64::new(v, 0.0)));
    }

    pub fn complex_to_real(buf: &[Complex64], real: &mut [f64]) {
        for (r, c) in real.iter_mut().zip(buf.iter()) {
            *r = c.re;
        }
    }

    /// One-shot heat semigroup application on a real slice.
    pub fn heat_in_place(&self, values: &mut [f64], t: f64) {
        ONESHOT.with(|o| {
            let mut buf = o.borrow_mut();
            Self::real_to_complex(values, &mut buf);
            self.forward(&mut buf);
            let c = -4.0 * std::f64::consts::PI.powi(2) * t;
            for (idx, v) in buf.iter_mut().enumerate() {
                *v *= (c * self.ksq(idx)).exp();
            }
            self.inverse(&mut buf);
            Self::complex_to_real(&buf, values);
        });
    }

    /// Spectral gradient of a real slice; `out` must hold `dim` buffers.
    pub fn gradient(&self, values: &[f64], out: &mut [Vec<f64>]) {
        let dim = self.grid.dim as usize;
        assert_eq!(out.len(), dim);
        ONESHOT.with(|o| {
            let mut buf = o.borrow_mut();
            Self::real_to_complex(values, &mut buf);
            self.forward(&mut buf);
            let spec = buf.clone();
            for (axis, out_axis) in out.iter_mut().enumerate() {
                let sym = self.gradient_symbol(axis);
                for (idx, v) in buf.iter_mut().enumerate() {
                    let s = sym[idx];
                    let c = spec[idx];
                    *v = Complex64::new(-c.im * s, c.re * s);
                }
                self.inverse(&mut buf);
                out_axis.resize(values.len(), 0.0);
                Self::complex_to_real(&buf, out_axis);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;

    #[test]
    fn roundtrip() {
        let g = GridDescriptor::d1(32);
        let sp = Spectral::for_grid(g);
        let f = Field::from_fn(g, |x, _| (2.0 * std::f64::consts::PI * 3.0 * x).sin() + 0.2);
        let mut buf = Vec::new();
        Spectral::real_to_complex(&f.values, &mut buf);
        sp.forward(&mut buf);
        sp.inverse(&mut buf);
        let mut back = vec![0.0; f.values.len()];
        Spectral::complex_to_real(&buf, &mut back);
        for (a, b) in back.iter().zip(f.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_sin_is_cos() {
        let g = GridDescriptor::d1(64);
        let sp = Spectral::for_grid(g);
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = Field::from_fn(g, |x, _| (two_pi * x).sin());
        let mut out = vec![Vec::new()];
        sp.gradient(&f.values, &mut out);
        for (idx, v) in out[0].iter().enumerate() {
            let x = g.coord(idx);
            assert!((v - two_pi * (two_pi * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gradient_2d_axes() {
        let g = GridDescriptor::new(2, 16).unwrap();
        let sp = Spectral::for_grid(g);
        let two_pi = 2.0 * std::f64::consts::PI;
        let f = Field::from_fn(g, |x, y| (two_pi * x).sin() + (two_pi * 2.0 * y).cos());
        let mut out = vec![Vec::new(), Vec::new()];
        sp.gradient(&f.values, &mut out);
        for idx in 0..g.total_points() {
            let (x, y) = g.coords(idx);
            let gx = two_pi * (two_pi * x).cos();
            let gy = -2.0 * two_pi * (two_pi * 2.0 * y).sin();
            assert!((out[0][idx] - gx).abs() < 1e-10);
            assert!((out[1][idx] - gy).abs() < 1e-10);
        }
    }
}
