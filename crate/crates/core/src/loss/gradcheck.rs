//! Central finite-difference gradient verification.

use serde::Serialize;

use crate::exec::{map_range, Exec};
use crate::model::BetaSchedule;

use super::{CogpoObjective, ToyPair, ToyPolicy};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error against this scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates at or above tolerance, in index order.
    pub failures: Vec<GradMismatch>,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against `(f(x + e_i eps) - f(x - e_i eps)) / 2eps`
/// for every coordinate of `params`.
pub fn check_gradient<F>(
    exec: Exec,
    params: &[f64],
    analytic: &[f64],
    f: F,
    epsilon: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    assert_eq!(params.len(), analytic.len(), "gradient shape");
    assert!(epsilon > 0.0, "epsilon must be positive");
    let numeric = map_range(exec, params.len(), |i| {
        let mut x = params.to_vec();
        x[i] = params[i] + epsilon;
        let plus = f(&x);
        x[i] = params[i] - epsilon;
        let minus = f(&x);
        (plus - minus) / (2.0 * epsilon)
    });

    let mut report = GradCheckReport {
        epsilon,
        tolerance,
        checked: params.len(),
        max_rel_error: 0.0,
        worst_index: None,
        failures: Vec::new(),
        passed: true,
    };
    for (index, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel_error = relative_error(a, n);
        if report.worst_index.is_none() || rel_error > report.max_rel_error || rel_error.is_nan() {
            report.max_rel_error = rel_error;
            report.worst_index = Some(index);
        }
        if rel_error.is_nan() || rel_error >= tolerance {
            report.failures.push(GradMismatch {
                index,
                analytic: a,
                numeric: n,
                rel_error,
            });
        }
    }
    report.passed = report.failures.is_empty();
    report
}

/// Gradient of the gap-aware loss through `sequence_logprob`, checked against
/// finite differences with `reference` frozen.
pub fn grad_check(
    pairs: &[ToyPair],
    schedule: &BetaSchedule,
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    epsilon: f64,
    tolerance: f64,
) -> GradCheckReport {
    let objective = CogpoObjective::new(reference, pairs, *schedule);
    let analytic = objective
        .evaluate(policy)
        .ok()
        .and_then(|r| r.gradient)
        .unwrap_or_else(|| vec![f64::NAN; policy.num_params()]);
    let f = |params: &[f64]| objective.loss(&policy.with_params(params)).unwrap_or(f64::NAN);
    check_gradient(Exec::Parallel, policy.params(), &analytic, f, epsilon, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GapType;

    #[test]
    fn quadratic_passes() {
        let x = [1.0, -2.0, 0.5];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = check_gradient(
            Exec::Sequential,
            &x,
            &analytic,
            |p| p.iter().map(|v| v * v).sum(),
            1e-5,
            1e-6,
        );
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn wrong_coordinate_is_reported() {
        let x = [1.0, -2.0, 0.5];
        let mut analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        analytic[1] += 1.0;
        let r = check_gradient(
            Exec::Sequential,
            &x,
            &analytic,
            |p| p.iter().map(|v| v * v).sum(),
            1e-5,
            1e-4,
        );
        assert!(!r.passed);
        assert_eq!(r.worst_index, Some(1));
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].index, 1);
    }

    #[test]
    fn single_token_vocab_is_trivial() {
        let policy = ToyPolicy::uniform(1, 2);
        let pairs = vec![ToyPair {
            prompt: vec![0],
            chosen: vec![0, 0],
            rejected: vec![0],
            gap: GapType::Large,
        }];
        let r = grad_check(
            &pairs,
            &BetaSchedule::default(),
            &policy,
            &policy.snapshot(),
            1e-5,
            1e-4,
        );
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn nan_gradient_fails() {
        let r = check_gradient(Exec::Sequential, &[1.0], &[f64::NAN], |p| p[0], 1e-5, 1e-4);
        assert!(!r.passed);
    }
}
