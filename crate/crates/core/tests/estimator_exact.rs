//! The policy-gradient estimator in expectation, against exact enumeration
//! of a two-state chain.

mod common;

use asap::gradient::{trajectory_score, BaselineKind, ReturnMode, ReturnSpec, SkillScore};
use asap::gradient::{accumulate_step_score, Baseline};
use common::*;

fn expected_estimate(spec: &ReturnSpec, baseline: Option<&dyn Baseline>) -> Vec<f64> {
    let policy = chain_policy(&CHAIN_OMEGA);
    let mut acc = vec![0.0; CHAIN_OMEGA.len()];
    let mut mass = 0.0;
    for (p, traj) in enumerate_chain(&CHAIN_OMEGA, chain_temps()) {
        mass += p;
        let s = trajectory_score(&policy, &traj, spec, baseline).unwrap();
        acc.iter_mut().zip(&s).for_each(|(a, v)| *a += p * v);
    }
    assert!((mass - 1.0).abs() < 1e-12);
    acc
}

fn exact_gradient(gamma: f64) -> Vec<f64> {
    chain_value_gradient(&CHAIN_OMEGA, chain_temps(), gamma, 1e-5)
}

#[test]
fn full_return_estimator_is_unbiased() {
    for gamma in [1.0, 0.9] {
        let spec = ReturnSpec::full_return(gamma).unwrap();
        let err = max_abs_diff(&expected_estimate(&spec, None), &exact_gradient(gamma));
        assert!(err < 1e-8, "gamma {gamma}: {err:e}");
    }
}

// Reward-to-go drops the gamma^t state weighting, so it is the exact gradient
// only for gamma = 1.
#[test]
fn reward_to_go_estimator_is_unbiased() {
    for score in [SkillScore::Sampled, SkillScore::Marginal] {
        let spec = ReturnSpec::new(1.0, ReturnMode::RewardToGo, BaselineKind::None).unwrap().with_skill_score(score);
        let err = max_abs_diff(&expected_estimate(&spec, None), &exact_gradient(1.0));
        assert!(err < 1e-8, "{score:?}: {err:e}");
    }
}

#[test]
fn state_baseline_leaves_expectation_unchanged() {
    let baseline = |x: &[f64]| 3.0 - 5.0 * x[0];
    for score in [SkillScore::Sampled, SkillScore::Marginal] {
        let spec = ReturnSpec::new(1.0, ReturnMode::RewardToGo, BaselineKind::LinearCritic)
            .unwrap()
            .with_skill_score(score);
        let with = expected_estimate(&spec, Some(&baseline));
        let without = expected_estimate(&spec, None);
        assert!(max_abs_diff(&with, &without) < 1e-8, "{score:?}");
        assert!(max_abs_diff(&with, &exact_gradient(1.0)) < 1e-8, "{score:?}");
    }
}

#[test]
fn step_score_has_zero_mean() {
    let policy = chain_policy(&CHAIN_OMEGA);
    let task = chain_task();
    for s in [0.0, 1.0] {
        let mut acc = vec![0.0; CHAIN_OMEGA.len()];
        for i in 0..2 {
            for a in 0..2 {
                let p = joint_prob(&CHAIN_OMEGA, chain_temps(), s, i, a);
                let step = asap::params::GeneralizedStep {
                    state: vec![s],
                    action: a,
                    skill: asap::params::SkillIndex(i),
                    reward: 0.0,
                    next_state: vec![a as f64],
                };
                accumulate_step_score(&policy, &step, &task, p, &mut acc).unwrap();
            }
        }
        assert!(acc.iter().all(|v| v.abs() < 1e-10), "state {s}: {acc:?}");
    }
}

#[test]
fn sampled_rollouts_follow_enumerated_probabilities() {
    use asap::learner::{run_trial, stream_rng};
    let policy = chain_policy(&CHAIN_OMEGA);
    let exact = chain_value(&CHAIN_OMEGA, chain_temps(), 1.0);
    let mut rng = stream_rng(11, 0);
    let n = 20_000;
    let mut total = 0.0;
    for _ in 0..n {
        total += run_trial(&Chain, &chain_task(), &policy, &mut rng, CHAIN_HORIZON).unwrap().total_reward();
    }
    // Returns lie in [-1, 3]; five standard errors.
    let tol = 5.0 * 2.0 / (n as f64).sqrt();
    assert!((total / n as f64 - exact).abs() < tol);
}
