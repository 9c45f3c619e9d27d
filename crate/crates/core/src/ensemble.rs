//! Ensemble execution and deterministic reductions.
//!
//! Paths are independent workers; every cross-path statistic is computed
//! from an index-ordered vector of per-path results, so the outcome does not
//! depend on the number of worker threads. Sums use pairwise reduction in a
//! fixed tree order.

use rayon::prelude::*;

/// Run `f` over path indices 0..n in parallel, collecting results in index
/// order.
pub fn run_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Pairwise sum in a fixed tree order (associativity-stable to roundoff).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let devs: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&devs) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Least-squares slope and intercept of y against t.
pub fn lsq_slope(ts: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(ts.len(), ys.len());
    let n = ts.len() as f64;
    let tm = pairwise_sum(ts) / n;
    let ym = pairwise_sum(ys) / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in ts.iter().zip(ys.iter()) {
        num += (t - tm) * (y - ym);
        den += (t - tm) * (t - tm);
    }
    let slope = num / den;
    (slope, ym - slope * tm)
}

/// p-th percentile (0..=100) by nearest-rank on a sorted copy.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty());
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in percentile input"));
    let rank = ((p / 100.0) * (sorted.len() as f64 - 1.0)).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Configure the global worker pool once; later calls are ignored (rayon's
/// global pool can only be built once per process).
pub fn configure_threads(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1001).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn slope_of_line() {
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t - 1.0).collect();
        let (slope, icept) = lsq_slope(&ts, &ys);
        assert!((slope - 3.0).abs() < 1e-12);
        assert!((icept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn indexed_run_is_ordered() {
        let out = run_indexed(100, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!(se > 0.0);
    }
}
