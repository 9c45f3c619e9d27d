//! Discretization of the unit torus T^d = R^d/Z^d for d ∈ {1, 2}.
//!
//! Fields are sampled on a uniform grid with a power-of-two number of points
//! per axis, so the spectral heat semigroup and spectral derivatives are
//! exact on the resolved modes. The torus has unit volume:
//! `cell_volume * total_points == 1`.

use crate::error::LabError;
use crate::spectral::Spectral;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Descriptor of the uniform grid on T^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDescriptor {
    /// Spatial dimension, 1 or 2.
    pub dim: u32,
    /// Grid points per axis; a power of two, at least 8.
    pub points_per_axis: usize,
}

impl GridDescriptor {
    pub fn new(dim: u32, points_per_axis: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(LabError::InvalidConfig(format!("grid dim must be 1 or 2, got {dim}")));
        }
        if points_per_axis < 8 || !points_per_axis.is_power_of_two() {
            return Err(LabError::InvalidConfig(format!(
                "points_per_axis must be a power of two >= 8, got {points_per_axis}"
            )));
        }
        Ok(GridDescriptor { dim, points_per_axis })
    }

    pub fn d1(n: usize) -> Self {
        GridDescriptor::new(1, n).expect("valid 1d grid")
    }

    /// Total number of grid points.
    pub fn total_points(&self) -> usize {
        self.points_per_axis.pow(self.dim)
    }

    /// Volume of one grid cell; `cell_volume * total_points == 1`.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.total_points() as f64
    }

    /// Coordinate of grid point `j` along one axis.
    pub fn coord(&self, j: usize) -> f64 {
        j as f64 / self.points_per_axis as f64
    }

    /// Coordinates of the flat index `idx` as (x, y) with y = 0 in d = 1.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let n = self.points_per_axis;
        if self.dim == 1 {
            (self.coord(idx), 0.0)
        } else {
            (self.coord(idx / n), self.coord(idx % n))
        }
    }

    /// Periodic distance between two points of [0,1).
    pub fn torus_dist(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(1.0);
        d.min(1.0 - d)
    }
}

/// Reductions over grid values. `L1` and `Mean` are weighted by the cell
/// volume so they discretize the corresponding integrals over T^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    L1,
    LInf,
    Min,
    Max,
    Mean,
}

/// A real scalar field on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: GridDescriptor,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridDescriptor, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.total_points() {
            return Err(LabError::GridMismatch(format!(
                "field length {} does not match grid with {} points",
                values.len(),
                grid.total_points()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: GridDescriptor, c: f64) -> Self {
        Field { grid, values: vec![c; grid.total_points()] }
    }

    /// Field built from a function of the coordinates.
    pub fn from_fn(grid: GridDescriptor, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.total_points())
            .map(|idx| {
                let (x, y) = grid.coords(idx);
                f(x, y)
            })
            .collect();
        Field { grid, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L¹ norm, cell_volume · Σ |values|.
    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Mass ∫ field = cell_volume · Σ values.
    pub fn mean(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }
}

/// Blow-up bookkeeping: after the blow-up time the solution is treated as
/// identically +∞, and negative powers of its minimum as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlowUpFlag {
    pub blown_up: bool,
    pub blow_up_time: Option<f64>,
}

impl BlowUpFlag {
    pub fn at(time: f64) -> Self {
        BlowUpFlag { blown_up: true, blow_up_time: Some(time) }
    }
}

/// Reduce a field to a scalar.
pub fn grid_reduce(field: &Field, kind: Reduction) -> f64 {
    match kind {
        Reduction::L1 => field.l1_norm(),
        Reduction::LInf => field.sup_norm(),
        Reduction::Min => field.min(),
        Reduction::Max => field.max(),
        Reduction::Mean => field.mean(),
    }
}

/// Apply the heat semigroup e^{tΔ} exactly in Fourier space: mode k is
/// scaled by exp(−4π²|k|² t). Mass is preserved and, for nonnegative input,
/// so is the sign of the minimum (up to spectral truncation at machine
/// scale).
pub fn heat_semigroup_apply(field: &Field, t: f64) -> Result<Field> {
    if !field.is_finite() {
        return Err(LabError::NonFiniteField);
    }
    if t < 0.0 {
        return Err(LabError::InvalidConfig(format!("heat semigroup time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(field.clone());
    }
    let sp = Spectral::for_grid(field.grid);
    let mut out = field.clone();
    sp.heat_in_place(&mut out.values, t);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos_mode(grid: GridDescriptor, k: f64) -> Field {
        Field::from_fn(grid, |x, _| (2.0 * std::f64::consts::PI * k * x).cos())
    }

    #[test]
    fn constants_are_heat_invariant() {
        let g = GridDescriptor::d1(32);
        let f = Field::constant(g, 2.5);
        let out = heat_semigroup_apply(&f, 0.7).unwrap();
        for v in &out.values {
            assert!((v - 2.5).abs() < 1e-13);
        }
    }

    #[test]
    fn t_zero_is_identity() {
        let g = GridDescriptor::d1(16);
        let f = Field::from_fn(g, |x, _| x * x - 0.3 * x);
        let out = heat_semigroup_apply(&f, 0.0).unwrap();
        assert_eq!(f.values, out.values);
    }

    #[test]
    fn mode_one_decays_at_analytic_rate() {
        let g = GridDescriptor::d1(128);
        let f = cos_mode(g, 1.0);
        let t = 0.1;
        let out = heat_semigroup_apply(&f, t).unwrap();
        let factor = (-4.0 * std::f64::consts::PI.powi(2) * t).exp();
        for (o, i) in out.values.iter().zip(f.values.iter()) {
            assert!((o - i * factor).abs() <= 1e-12 * factor.max(1e-30) + 1e-14);
        }
    }

    /// Independent oracle: dense matrix exponential (scaling and squaring on
    /// a Taylor series) of the spectral Laplacian, compared to the FFT path.
    #[test]
    fn matches_dense_matrix_exponential() {
        let n = 16;
        let g = GridDescriptor::d1(n);
        // Dense spectral Laplacian: L = F^{-1} diag(-4 pi^2 k^2) F, assembled
        // entrywise from the inverse transform of the symbol.
        let mut lap = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..n {
                    let k = if kk <= n / 2 { kk as f64 } else { kk as f64 - n as f64 };
                    let symbol = -4.0 * std::f64::consts::PI.powi(2) * k * k;
                    let phase =
                        2.0 * std::f64::consts::PI * k * ((i as f64 - j as f64) / n as f64);
                    acc += symbol * phase.cos();
                }
                lap[i * n + j] = acc / n as f64;
            }
        }
        let t = 0.1;
        // expm(tL) by scaling-and-squaring with a Taylor series.
        let norm: f64 = lap.iter().map(|v| v.abs()).sum::<f64>() * t;
        let s = norm.log2().ceil().max(0.0) as u32 + 1;
        let scale = t / 2f64.powi(s as i32);
        let mut a = vec![0.0; n * n];
        for (idx, v) in a.iter_mut().enumerate() {
            *v = lap[idx] * scale;
        }
        let mut expm = vec![0.0; n * n];
        for i in 0..n {
            expm[i * n + i] = 1.0;
        }
        let mut term = expm.clone();
        for order in 1..30 {
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    let tik = term[i * n + k];
                    if tik == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        next[i * n + j] += tik * a[k * n + j];
                    }
                }
            }
            for v in next.iter_mut() {
                *v /= order as f64;
            }
            for idx in 0..n * n {
                expm[idx] += next[idx];
            }
            term = next;
        }
        for _ in 0..s {
            let mut sq = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    let eik = expm[i * n + k];
                    for j in 0..n {
                        sq[i * n + j] += eik * expm[k * n + j];
                    }
                }
            }
            expm = sq;
        }
        let f = cos_mode(g, 1.0);
        let fft_out = heat_semigroup_apply(&f, t).unwrap();
        let scale = fft_out.sup_norm();
        for i in 0..n {
            let mut dense = 0.0;
            for j in 0..n {
                dense += expm[i * n + j] * f.values[j];
            }
            let rel = (dense - fft_out.values[i]).abs() / scale;
            assert!(rel <= 1e-10, "row {i}: dense {dense} vs fft {}", fft_out.values[i]);
        }
    }

    #[test]
    fn semigroup_law_and_mass() {
        let g = GridDescriptor::d1(64);
        let f = Field::from_fn(g, |x, _| {
            1.0 + 0.3 * (2.0 * std::f64::consts::PI * x).sin()
                + 0.05 * (6.0 * std::f64::consts::PI * x).cos()
        });
        let a = heat_semigroup_apply(&heat_semigroup_apply(&f, 0.03).unwrap(), 0.07).unwrap();
        let b = heat_semigroup_apply(&f, 0.1).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        assert!((b.mean() - f.mean()).abs() <= 1e-12);
        assert!(b.min() >= 0.0);
    }

    #[test]
    fn reductions() {
        let g = GridDescriptor::d1(128);
        let f = Field::constant(g, 3.0);
        assert_eq!(grid_reduce(&f, Reduction::Min), 3.0);
        assert!((grid_reduce(&f, Reduction::L1) - 3.0).abs() < 1e-14);
        let f = Field::from_fn(g, |x, _| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin());
        let max = grid_reduce(&f, Reduction::Max);
        assert!((1.4999..=1.5000000000001).contains(&max), "max {max}");
        assert!(grid_reduce(&f, Reduction::Min) <= grid_reduce(&f, Reduction::Mean));
        assert!(grid_reduce(&f, Reduction::Mean) <= max);
    }

    #[test]
    fn heat_2d_tensorizes() {
        let g = GridDescriptor::new(2, 16).unwrap();
        let f = Field::from_fn(g, |x, y| {
            (2.0 * std::f64::consts::PI * x).cos() * (4.0 * std::f64::consts::PI * y).sin()
        });
        let t = 0.02;
        let out = heat_semigroup_apply(&f, t).unwrap();
        // Mode (1, 2): decay exp(-4 pi^2 (1 + 4) t).
        let factor = (-4.0 * std::f64::consts::PI.powi(2) * 5.0 * t).exp();
        for (o, i) in out.values.iter().zip(f.values.iter()) {
            assert!((o - i * factor).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let g = GridDescriptor::d1(8);
        let mut f = Field::constant(g, 1.0);
        f.values[3] = f64::NAN;
        assert!(matches!(heat_semigroup_apply(&f, 0.1), Err(LabError::NonFiniteField)));
    }
}
