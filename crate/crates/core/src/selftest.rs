//! Built-in conformance checks: gradient fidelity (plus a negative control),
//! gap-aware → plain DPO reduction, numeric stability, and prompt golden files.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::Exec;
use crate::loss::{check_gradient, cogpo_loss, dpo_loss, grad_check, CogpoObjective, ToyPair, ToyPolicy};
use crate::model::{BetaSchedule, GapType, LogProbQuad};
use crate::prompts::{TemplateName, TemplateSet};

pub const GRAD_EPSILON: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const REDUCTION_TOLERANCE: f64 = 1e-12;

/// One golden prompt case: template, inputs and the expected rendering.
pub struct GoldenCase {
    pub template: TemplateName,
    pub problem: &'static str,
    pub answer: &'static str,
    pub reasoning: &'static str,
    pub expected: &'static str,
}

const TRIANGLE: (&str, &str, &str) = (
    "Find the area of a triangle with vertices at (0,0), (3,0), and (0,4)",
    "6",
    "Vector Representation: AB = (3, 0), AC = (0, 4)\nDeterminant Method: Area = 1/2 |det [[3, 0], [0, 4]]| = 1/2 (12) = 6",
);
const MATRIX: (&str, &str, &str) = (
    "Find the inverse of matrix A = [[2, 1], [1, 2]]",
    "A^{-1} = 1/3 [[2, -1], [-1, 2]]",
    "Calculate determinant det(A)=3, thus A^{-1}=1/3 [[2, -1], [-1, 2]]",
);

pub fn golden_cases() -> Vec<GoldenCase> {
    let case =
        |template, (problem, answer, reasoning): (&'static str, &'static str, &'static str), expected| GoldenCase {
            template,
            problem,
            answer,
            reasoning,
            expected,
        };
    vec![
        case(
            TemplateName::Critic,
            TRIANGLE,
            include_str!("../tests/golden/critic.txt"),
        ),
        case(
            TemplateName::RethinkerEasy,
            MATRIX,
            include_str!("../tests/golden/rethinker_easy.txt"),
        ),
        case(
            TemplateName::RethinkerHard,
            TRIANGLE,
            include_str!("../tests/golden/rethinker_hard.txt"),
        ),
        case(
            TemplateName::RethinkerIncorrect,
            TRIANGLE,
            include_str!("../tests/golden/rethinker_incorrect.txt"),
        ),
        case(
            TemplateName::Verifier,
            TRIANGLE,
            include_str!("../tests/golden/verifier.txt"),
        ),
    ]
}

/// Randomized toy problem: policy, frozen reference and token pairs.
pub struct ToySetup {
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub pairs: Vec<ToyPair>,
}

pub fn random_toy_setup(rng: &mut impl Rng, vocab: usize, buckets: usize, n_pairs: usize) -> ToySetup {
    let logits = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..vocab * buckets).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let reference = ToyPolicy::from_logits(vocab, buckets, logits(rng));
    let policy = ToyPolicy::from_logits(vocab, buckets, logits(rng));
    let seq = |rng: &mut dyn rand::RngCore, min: usize| -> Vec<u32> {
        let len = rng.random_range(min..=5);
        (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
    };
    let pairs = (0..n_pairs)
        .map(|i| {
            let prompt = seq(rng, 1);
            let chosen = seq(rng, 1);
            let mut rejected = seq(rng, 1);
            if rejected == chosen {
                rejected.push(0);
            }
            ToyPair {
                prompt,
                chosen,
                rejected,
                gap: GapType::ALL[i % 3],
            }
        })
        .collect();
    ToySetup {
        policy,
        reference,
        pairs,
    }
}

pub fn random_quad(rng: &mut impl Rng) -> LogProbQuad {
    LogProbQuad::new(
        rng.random_range(-50.0..0.0),
        rng.random_range(-50.0..0.0),
        rng.random_range(-50.0..0.0),
        rng.random_range(-50.0..0.0),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    /// Load templates from this directory instead of the built-in set.
    pub templates_dir: Option<PathBuf>,
    /// Add +1 to one analytic gradient coordinate in the gradient row.
    pub inject_gradient_fault: bool,
    pub seed: u64,
}

pub fn gradient_check(seed: u64, trials: usize, inject_fault: bool) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = BetaSchedule::default();
    let mut worst = 0.0f64;
    for t in 0..trials {
        let vocab = rng.random_range(2..=6);
        let buckets = rng.random_range(1..=5);
        let setup = random_toy_setup(&mut rng, vocab, buckets, 2 + t % 7);
        let report = if inject_fault {
            let objective = CogpoObjective::new(&setup.reference, &setup.pairs, schedule);
            let mut analytic = objective.evaluate(&setup.policy).unwrap().gradient.unwrap();
            analytic[0] += 1.0;
            let f = |p: &[f64]| objective.loss(&setup.policy.with_params(p)).unwrap();
            check_gradient(
                Exec::Parallel,
                setup.policy.params(),
                &analytic,
                f,
                GRAD_EPSILON,
                GRAD_TOLERANCE,
            )
        } else {
            grad_check(
                &setup.pairs,
                &schedule,
                &setup.policy,
                &setup.reference,
                GRAD_EPSILON,
                GRAD_TOLERANCE,
            )
        };
        worst = worst.max(report.max_rel_error);
        if !report.passed {
            return CheckRow {
                name: "gradient",
                passed: false,
                detail: format!(
                    "trial {t}: coordinate {} rel. error {:.3e} >= {GRAD_TOLERANCE:e}",
                    report.worst_index.map_or("-".to_string(), |i| i.to_string()),
                    report.max_rel_error
                ),
            };
        }
    }
    CheckRow {
        name: "gradient",
        passed: true,
        detail: format!("{trials} toy policies, max rel. error {worst:.3e} < {GRAD_TOLERANCE:e}"),
    }
}

/// Passes when a deliberately wrong coordinate is caught and named.
pub fn gradient_negative_control(seed: u64) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let setup = random_toy_setup(&mut rng, 3, 2, 4);
    let objective = CogpoObjective::new(&setup.reference, &setup.pairs, BetaSchedule::default());
    let mut analytic = objective.evaluate(&setup.policy).unwrap().gradient.unwrap();
    let target = analytic.len() / 2;
    analytic[target] += 1.0;
    let f = |p: &[f64]| objective.loss(&setup.policy.with_params(p)).unwrap();
    let report = check_gradient(
        Exec::Sequential,
        setup.policy.params(),
        &analytic,
        f,
        GRAD_EPSILON,
        GRAD_TOLERANCE,
    );
    let caught = !report.passed && report.failures.iter().any(|m| m.index == target);
    CheckRow {
        name: "gradient-negative-control",
        passed: caught,
        detail: if caught {
            format!("corrupted coordinate {target} detected")
        } else {
            format!("corrupted coordinate {target} NOT detected")
        },
    }
}

pub fn reduction_check(seed: u64, batches: usize) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let beta = rng.random_range(0.01..2.0);
        let n = rng.random_range(1..=32);
        let quads: Vec<LogProbQuad> = (0..n).map(|_| random_quad(&mut rng)).collect();
        let gapped: Vec<(LogProbQuad, GapType)> = quads
            .iter()
            .map(|q| (*q, GapType::ALL[rng.random_range(0..3)]))
            .collect();
        let a = cogpo_loss(&gapped, &BetaSchedule::uniform(beta)).unwrap().loss;
        let b = dpo_loss(&quads, beta).unwrap().loss;
        worst = worst.max((a - b).abs());
    }
    CheckRow {
        name: "reduction",
        passed: worst <= REDUCTION_TOLERANCE,
        detail: format!("{batches} batches, max |gap-aware - dpo| = {worst:.3e}"),
    }
}

pub fn stability_check() -> CheckRow {
    let mut prev = f64::INFINITY;
    let mut ok = true;
    let steps = 2001;
    for k in 0..steps {
        let m = -1e4 + 2e4 * k as f64 / (steps - 1) as f64;
        let loss = dpo_loss(&[LogProbQuad::new(m, 0.0, 0.0, 0.0)], 1.0).map(|r| r.loss);
        match loss {
            Ok(l) if l.is_finite() && l >= 0.0 && l <= prev => prev = l,
            _ => ok = false,
        }
    }
    CheckRow {
        name: "stability",
        passed: ok,
        detail: format!("{steps} margins in [-1e4, 1e4]: finite, non-negative, non-increasing"),
    }
}

pub fn prompt_check(templates_dir: Option<&std::path::Path>) -> CheckRow {
    let templates = match templates_dir {
        Some(dir) => match TemplateSet::load_dir(dir) {
            Ok(t) => t,
            Err(e) => {
                return CheckRow {
                    name: "prompts",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        },
        None => TemplateSet::builtin(),
    };
    let mismatched: Vec<&str> = golden_cases()
        .iter()
        .filter(|c| {
            templates
                .render(c.template, c.problem, c.answer, c.reasoning)
                .to_fixture()
                != c.expected
        })
        .map(|c| c.template.as_str())
        .collect();
    CheckRow {
        name: "prompts",
        passed: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            "5 templates byte-match golden files".into()
        } else {
            format!("mismatch: {}", mismatched.join(", "))
        },
    }
}

pub fn run(options: &SelftestOptions) -> Vec<CheckRow> {
    vec![
        gradient_check(options.seed, 24, options.inject_gradient_fault),
        gradient_negative_control(options.seed),
        reduction_check(options.seed, 1000),
        stability_check(),
        prompt_check(options.templates_dir.as_deref()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_selftest_passes() {
        let rows = run(&SelftestOptions::default());
        assert!(rows.iter().all(|r| r.passed), "{rows:#?}");
    }

    #[test]
    fn injected_fault_fails_only_gradient_row() {
        let rows = run(&SelftestOptions {
            inject_gradient_fault: true,
            ..SelftestOptions::default()
        });
        let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        assert_eq!(failed, ["gradient"]);
    }

    #[test]
    fn missing_templates_fail_prompt_row() {
        let row = prompt_check(Some(std::path::Path::new("/nonexistent")));
        assert!(!row.passed);
    }
}
