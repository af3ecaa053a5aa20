//! Shared fixtures: a two-state chain small enough to enumerate exactly.
#![allow(dead_code)]

use std::sync::Arc;

use asap::envs::{build_phi_tabular_actions, Environment, FeatureBuilder, LinearStateFeatures, TaskDescriptor, Transition};
use asap::params::{Dims, GeneralizedStep, GeneralizedTrajectory, ParamVector, Parameters, SkillIndex, Temperatures};
use asap::policy::AsapPolicy;
use asap::Rng64;

/// Reward of taking action `a` in state `s`.
pub const CHAIN_REWARD: [[f64; 2]; 2] = [[1.0, -0.5], [2.0, 0.3]];
pub const CHAIN_HORIZON: usize = 2;

/// States `0` and `1`; action `a` moves to state `a`. Never terminates.
pub struct Chain;

impl Environment for Chain {
    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        CHAIN_HORIZON
    }

    fn reset(&self, _rng: &mut Rng64) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, state: &[f64], action: usize, _rng: &mut Rng64) -> asap::Result<Transition> {
        let s = state[0] as usize;
        Ok(Transition { next_state: vec![action as f64], reward: CHAIN_REWARD[s][action], done: false })
    }
}

pub fn chain_task() -> TaskDescriptor {
    TaskDescriptor::new("chain", vec![])
}

pub fn chain_features() -> FeatureBuilder {
    FeatureBuilder::new(build_phi_tabular_actions(2).unwrap(), Arc::new(LinearStateFeatures { state_dim: 1 }), 0)
}

pub fn chain_temps() -> Temperatures {
    Temperatures::new(1.0, 2.0).unwrap()
}

/// `K = 1`: two skills over two actions, one hyperplane on `[1, s]`.
pub fn chain_policy(omega: &[f64]) -> AsapPolicy {
    let features = chain_features();
    let dims: Dims = features.dims(1).unwrap();
    let params = Parameters::new(dims, ParamVector(omega.to_vec())).unwrap();
    AsapPolicy::new(params, chain_temps(), features).unwrap()
}

/// `[theta_0 (2), theta_1 (2), beta_0 (2)]`.
pub const CHAIN_OMEGA: [f64; 6] = [0.3, -0.4, -0.7, 0.9, 0.2, -0.6];

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `p(i | s) * sigma_i(a)` written out directly from `omega`.
pub fn joint_prob(omega: &[f64], temps: Temperatures, s: f64, skill: usize, action: usize) -> f64 {
    let p1 = sigmoid(temps.alpha_beta * (omega[4] + omega[5] * s));
    let p_skill = if skill == 1 { p1 } else { 1.0 - p1 };
    let th = &omega[2 * skill..2 * skill + 2];
    let e: Vec<f64> = th.iter().map(|t| (temps.alpha_theta * t).exp()).collect();
    p_skill * e[action] / (e[0] + e[1])
}

/// Every `(skill, action)` sequence of length [`CHAIN_HORIZON`] with its probability.
pub fn enumerate_chain(omega: &[f64], temps: Temperatures) -> Vec<(f64, GeneralizedTrajectory)> {
    let mut out = Vec::new();
    for code in 0..16usize {
        let (i0, a0, i1, a1) = (code & 1, (code >> 1) & 1, (code >> 2) & 1, (code >> 3) & 1);
        let s0 = 0.0;
        let s1 = a0 as f64;
        let s2 = a1 as f64;
        let p = joint_prob(omega, temps, s0, i0, a0) * joint_prob(omega, temps, s1, i1, a1);
        let steps = vec![
            GeneralizedStep {
                state: vec![s0],
                action: a0,
                skill: SkillIndex(i0),
                reward: CHAIN_REWARD[0][a0],
                next_state: vec![s1],
            },
            GeneralizedStep {
                state: vec![s1],
                action: a1,
                skill: SkillIndex(i1),
                reward: CHAIN_REWARD[a0][a1],
                next_state: vec![s2],
            },
        ];
        out.push((p, GeneralizedTrajectory::new(steps, chain_task(), false).unwrap()));
    }
    out
}

/// Exact expected discounted return.
pub fn chain_value(omega: &[f64], temps: Temperatures, gamma: f64) -> f64 {
    enumerate_chain(omega, temps).iter().map(|(p, g)| p * g.discounted_return(gamma)).sum()
}

/// Central-difference gradient of [`chain_value`].
pub fn chain_value_gradient(omega: &[f64], temps: Temperatures, gamma: f64, eps: f64) -> Vec<f64> {
    (0..omega.len())
        .map(|j| {
            let mut hi = omega.to_vec();
            let mut lo = omega.to_vec();
            hi[j] += eps;
            lo[j] -= eps;
            (chain_value(&hi, temps, gamma) - chain_value(&lo, temps, gamma)) / (2.0 * eps)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
