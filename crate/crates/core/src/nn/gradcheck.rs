use rand::seq::index::sample;

use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many coordinates, chosen uniformly without
    /// replacement. Every coordinate is checked when the point is smaller.
    pub max_coords: usize,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is zero are judged by absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords: 400, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compare an analytic gradient against central finite differences
/// `(f(x + εe_i) - f(x - εe_i)) / 2ε`.
///
/// The relative error at coordinate `i` is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length must match point");
    let n = point.len();
    let coords: Vec<usize> = if n <= opts.max_coords {
        (0..n).collect()
    } else {
        let mut rng = rng_from(opts.seed, &[tag::GRADCHECK, n as u64]);
        let mut v = sample(&mut rng, n, opts.max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: coords.len(),
    };
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.eps;
        let plus = f(&x);
        x[i] = orig - opts.eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
