//! Experiment drivers and estimators: capacity savings (closed form and
//! utility-matching search), normalized utility gain versus the
//! reassociation budget, per-operator gain distributions, and download
//! time gains.

pub mod driver;
pub mod homogeneous;

pub use driver::{run_scenario, MetricsRecord, Policy, RunResult};

use crate::error::{Error, Result};

/// Closed-form estimate of the extra capacity static slicing needs to
/// match dynamic sharing: Delta_o = exp((|B| / (2 n_o)) (1 - s_o)) - 1.
/// Natural exponent, consistent with utilities in nats.
pub fn capacity_savings_estimate(num_stations: usize, n_o: f64, s_o: f64) -> f64 {
    ((num_stations as f64 / (2.0 * n_o)) * (1.0 - s_o)).exp() - 1.0
}

/// Result of a utility-matching capacity search.
#[derive(Clone, Debug)]
pub struct SavingsResult {
    pub delta_theoretical: f64,
    pub delta_measured: f64,
    /// (capacity multiplier, utility) pairs in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

/// Bisects a capacity multiplier in `[lo, hi]` until the (monotone)
/// utility function matches `target` within `tol` nats. Used by both the
/// homogeneous model and the full simulation search.
pub(crate) fn match_utility(
    mut evaluate: impl FnMut(f64) -> f64,
    target: f64,
    tol: f64,
    lo: f64,
    hi: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut trace = Vec::new();
    let u_lo = evaluate(lo);
    trace.push((lo, u_lo));
    if (u_lo - target).abs() <= tol {
        return Ok((lo, trace));
    }
    if u_lo > target {
        // the baseline already beats the target at the lower bracket edge
        return Err(Error::SearchNotBracketed { lo, hi, trace });
    }
    let u_hi = evaluate(hi);
    trace.push((hi, u_hi));
    if u_hi < target - tol {
        return Err(Error::SearchNotBracketed { lo, hi, trace });
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..40 {
        let mid = 0.5 * (a + b);
        let u = evaluate(mid);
        trace.push((mid, u));
        if (u - target).abs() <= tol {
            return Ok((mid, trace));
        }
        if u < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((0.5 * (a + b), trace))
}

/// Mean and half-width of the 95% normal confidence interval.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn savings_estimate_limits() {
        // full share -> nothing to save
        assert_eq!(capacity_savings_estimate(10, 5.0, 1.0), 0.0);
        // huge population -> multiplexing gain already realized
        assert!(capacity_savings_estimate(10, 1e9, 0.5) < 1e-6);
        // |B| = 10, n_o = 5, s_o = 0.5 -> e^0.5 - 1
        let d = capacity_savings_estimate(10, 5.0, 0.5);
        assert!((d - (0.5f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn utility_match_finds_exact_shift() {
        // evaluate(g) = ln(g) must match target ln(3)
        let (g, trace) = match_utility(|g| g.ln(), 3f64.ln(), 1e-6, 1.0, 32.0).unwrap();
        assert!((g - 3.0).abs() < 1e-3);
        // the trace, sorted by multiplier, has monotone utilities
        let mut sorted = trace.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in sorted.windows(2) {
            assert!(pair[1].1 >= pair[0].1);
        }
    }

    #[test]
    fn utility_match_detects_missing_bracket() {
        let err = match_utility(|g| g.ln(), 100.0, 1e-6, 1.0, 32.0);
        assert!(matches!(err, Err(Error::SearchNotBracketed { .. })));
    }

    #[test]
    fn self_comparison_is_zero() {
        let (g, _) = match_utility(|g| g.ln(), 0.0, 1e-9, 1.0, 32.0).unwrap();
        assert_eq!(g, 1.0);
    }
}
